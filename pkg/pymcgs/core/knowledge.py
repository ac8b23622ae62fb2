"""
Domain knowledge base: keyword retrieval and operator-routed injection
"""
import json
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, List, Optional

import numpy as np

from .errors import TaskLoadError
from .graph import OperatorKind

if TYPE_CHECKING:
    from .engine import TaskSpec

DEFAULT_KB_FILE = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "knowledge_base.json")


class KnowledgeLevel(Enum):
    MODEL = "Model"
    DATA = "Data"
    STRATEGY = "Strategy"


class InjectionPhase(Enum):
    INIT = "Init"
    SEARCH = "Search"


@dataclass
class KnowledgeEntry:
    """
    One knowledge item

    recommendation is a machine-readable hint; for the synthetic engine it
    maps coordinate index to recommended value.
    """
    entry_id: str
    level: KnowledgeLevel
    keywords: List[str]
    title: str
    guidance: str
    recommendation: Optional[Dict[int, int]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "entry_id": self.entry_id,
            "level": self.level.value,
            "keywords": list(self.keywords),
            "title": self.title,
            "guidance": self.guidance,
            "recommendation": ({str(k): v for k, v in sorted(self.recommendation.items())}
                               if self.recommendation is not None else None),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'KnowledgeEntry':
        recommendation = data.get("recommendation")
        return cls(
            entry_id=str(data["entry_id"]),
            level=KnowledgeLevel(data["level"]),
            keywords=[str(k).lower() for k in data["keywords"]],
            title=str(data.get("title", "")),
            guidance=str(data.get("guidance", "")),
            recommendation=({int(k): int(v) for k, v in recommendation.items()}
                            if recommendation is not None else None),
        )


@dataclass
class KnowledgeBase:
    entries: List[KnowledgeEntry] = field(default_factory=list)
    version: str = "empty"

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if not entry.keywords:
                raise ValueError(f"knowledge entry {entry.entry_id} has no keywords")
            if entry.entry_id in seen:
                raise ValueError(f"duplicate knowledge entry id {entry.entry_id}")
            seen.add(entry.entry_id)

    def to_dict(self) -> Dict[str, Any]:
        return {"version": self.version, "entries": [e.to_dict() for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'KnowledgeBase':
        return cls(
            entries=[KnowledgeEntry.from_dict(e) for e in data.get("entries", [])],
            version=str(data.get("version", "unversioned")),
        )

    @classmethod
    def load(cls, kb_file: Optional[str] = None) -> 'KnowledgeBase':
        """Load the knowledge base document (packaged sample when kb_file is None)"""
        path = kb_file or DEFAULT_KB_FILE
        try:
            with open(path, 'r') as f:
                return cls.from_dict(json.load(f))
        except FileNotFoundError:
            raise TaskLoadError(f"knowledge base not found: {path}") from None
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
            raise TaskLoadError(f"{path}: invalid knowledge base: {e}") from None


def normalize(text: str) -> str:
    """Lowercase and collapse every run of non-alphanumerics to one space"""
    return " ".join(re.sub(r'[^a-z0-9]+', ' ', text.lower()).split())


def retrieve(kb: KnowledgeBase, task: 'TaskSpec') -> List[KnowledgeEntry]:
    """
    Entries whose keywords occur in the task description

    Each entry scores one point per keyword found as a case-insensitive
    substring of the normalized description, so "image" also hits "images".
    Entries scoring zero are dropped, the rest are ordered by score
    descending, then entry_id.
    """
    description = normalize(task.description)
    scored = []
    for entry in kb.entries:
        keywords = [normalize(keyword) for keyword in entry.keywords]
        score = sum(1 for keyword in keywords if keyword and keyword in description)
        if score > 0:
            scored.append((score, entry))
    scored.sort(key=lambda item: (-item[0], item[1].entry_id))
    return [entry for _, entry in scored]


def injection_context(entries: List[KnowledgeEntry], phase: InjectionPhase,
                      operator: OperatorKind, rng: np.random.Generator,
                      kb_init_ref_prob: float = 0.8) -> List[KnowledgeEntry]:
    """
    Select the retrieved entries an operator application gets to see

    Init (Draft only): with probability kb_init_ref_prob the Model and Data
    entries, otherwise nothing. Search: ImproveFE sees Data entries,
    ImproveCS sees Strategy entries, every other operator sees nothing.
    Model-level entries never reach the Search phase.
    """
    if (phase == InjectionPhase.INIT) != (operator == OperatorKind.DRAFT):
        raise ValueError(f"phase {phase.value} is inconsistent with operator {operator.value}")

    if phase == InjectionPhase.INIT:
        if rng.random() >= kb_init_ref_prob:
            return []
        return [e for e in entries if e.level in (KnowledgeLevel.MODEL, KnowledgeLevel.DATA)]

    if operator == OperatorKind.IMPROVE_FE:
        return [e for e in entries if e.level == KnowledgeLevel.DATA]
    if operator == OperatorKind.IMPROVE_CS:
        return [e for e in entries if e.level == KnowledgeLevel.STRATEGY]
    return []
