"""
Contract between the search core and proposal engines / evaluation environments
"""
import json
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, List, Optional

import numpy as np

from .errors import TaskLoadError
from .graph import ExecState, OperatorKind, SolutionPayload

if TYPE_CHECKING:
    from .knowledge import KnowledgeEntry

DEFAULT_TASK_FILE = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "default_task.json")


class Direction(Enum):
    MAXIMIZE = "Maximize"
    MINIMIZE = "Minimize"

    @property
    def sign(self) -> int:
        return 1 if self == Direction.MAXIMIZE else -1

    def better(self, a: float, b: float) -> bool:
        """True if metric a is strictly better than b"""
        return a > b if self == Direction.MAXIMIZE else a < b


@dataclass
class TaskSpec:
    """
    Task description and evaluation context

    seed, dims, levels, roles and planted_optima shape the synthetic
    landscape and are ignored by other environments.
    """
    task_id: str
    description: str
    metric_name: str
    direction: Direction = Direction.MAXIMIZE
    eval_noise_sigma: float = 0.0
    time_budget: float = 43200.0
    seed: int = 0
    dims: int = 8
    levels: int = 16
    roles: Optional[List[str]] = None
    planted_optima: Dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "description": self.description,
            "metric_name": self.metric_name,
            "direction": self.direction.value,
            "eval_noise_sigma": self.eval_noise_sigma,
            "time_budget": self.time_budget,
            "seed": self.seed,
            "dims": self.dims,
            "levels": self.levels,
            "roles": self.roles,
            "planted_optima": {str(k): v for k, v in sorted(self.planted_optima.items())},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TaskSpec':
        try:
            direction = data.get("direction", "Maximize")
            return cls(
                task_id=str(data["task_id"]),
                description=str(data["description"]),
                metric_name=str(data["metric_name"]),
                direction=Direction(direction.capitalize()),
                eval_noise_sigma=float(data.get("eval_noise_sigma", 0.0)),
                time_budget=float(data.get("time_budget", 43200.0)),
                seed=int(data.get("seed", 0)),
                dims=int(data.get("dims", 8)),
                levels=int(data.get("levels", 16)),
                roles=list(data["roles"]) if data.get("roles") else None,
                planted_optima={int(k): int(v) for k, v in (data.get("planted_optima") or {}).items()},
            )
        except (KeyError, ValueError, TypeError, AttributeError) as e:
            raise TaskLoadError(f"invalid task definition: {e}") from None


def load_task(task_file: Optional[str] = None) -> TaskSpec:
    """
    Load a task definition from a JSON document

    Args:
        task_file: Path to the task file (packaged default task when None)
    """
    path = task_file or DEFAULT_TASK_FILE
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise TaskLoadError(f"task file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise TaskLoadError(f"{path}: {e}") from None
    task = TaskSpec.from_dict(data)
    if task.eval_noise_sigma < 0:
        raise TaskLoadError(f"{path}: eval_noise_sigma must be >= 0")
    return task


@dataclass
class ReferencePayload:
    payload: SolutionPayload
    metric: Optional[float]
    state: ExecState


@dataclass
class ProposalRequest:
    """
    Everything an engine needs to realize one operator application

    reference_payloads follow the ReferenceSet order.
    """
    operator: OperatorKind
    target_payload: SolutionPayload
    reference_payloads: List[ReferencePayload]
    task: TaskSpec
    kb_snippets: List['KnowledgeEntry']
    seed: int
    target_metric: Optional[float] = None


@dataclass
class EvalOutcome:
    """Result of simulating a candidate; metric is present iff Evaluated"""
    status: ExecState
    metric: Optional[float] = None
    log: str = ""

    def __post_init__(self):
        if (self.metric is not None) != (self.status == ExecState.EVALUATED):
            raise ValueError(f"metric presence disagrees with status {self.status.value}")


class ReviewStatus(Enum):
    PASS = "pass"
    WARN = "warn"
    REJECT = "reject"


@dataclass
class ReviewVerdict:
    status: ReviewStatus
    warnings: List[str] = field(default_factory=list)
    reason: str = ""

    @classmethod
    def passed(cls) -> 'ReviewVerdict':
        return cls(ReviewStatus.PASS)

    @classmethod
    def warn(cls, warnings: List[str]) -> 'ReviewVerdict':
        return cls(ReviewStatus.WARN, warnings=list(warnings))

    @classmethod
    def reject(cls, reason: str) -> 'ReviewVerdict':
        return cls(ReviewStatus.REJECT, reason=reason)

    def to_dict(self) -> Dict[str, Any]:
        return {"status": self.status.value, "warnings": list(self.warnings), "reason": self.reason}


@dataclass
class EnsembleMember:
    payload: SolutionPayload
    metric: float


class Environment(ABC):
    """Computes h(T, s) for a candidate"""

    @abstractmethod
    def evaluate(self, payload: SolutionPayload, task: TaskSpec) -> EvalOutcome:
        ...


class ProposalEngine(ABC):
    """Realizes the operators g_o: proposes, reviews and ensembles candidates"""

    @abstractmethod
    def propose(self, request: ProposalRequest) -> SolutionPayload:
        ...

    @abstractmethod
    def review(self, candidate: SolutionPayload, task: TaskSpec) -> ReviewVerdict:
        ...

    @abstractmethod
    def ensemble(self, members: List[EnsembleMember], task: TaskSpec, seed: int) -> SolutionPayload:
        ...


def job_seed(run_seed: int, step: int) -> int:
    """Per-job seed derived from (run_seed, step) so worker order cannot matter"""
    return int(np.random.SeedSequence([run_seed, step]).generate_state(1)[0])


def step_rng(run_seed: int, step: int, stream: int) -> np.random.Generator:
    """Coordinator-side generator for one decision stream of one step"""
    return np.random.default_rng([run_seed, step, stream])
