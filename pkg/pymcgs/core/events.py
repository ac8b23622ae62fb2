"""
Run event log: one JSON object per line, replayable into a SolutionGraph
"""
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Any, Dict, Iterable, List, Optional

from .errors import MissingLog
from .graph import ExecState, ExpansionMode, OperatorKind, RefKind, SolutionGraph, SolutionPayload

EVENTS_FILE = "events.jsonl"


class EventKind(Enum):
    RUN_STARTED = "RunStarted"
    OPERATOR_CHOSEN = "OperatorChosen"
    NODE_CREATED = "NodeCreated"
    REFERENCE_EDGES = "ReferenceEdges"
    AGGREGATION_SPAWNED = "AggregationSpawned"
    REVIEW_VERDICT = "ReviewVerdict"
    SIMULATED = "Simulated"
    BACKPROP = "Backprop"
    MEMORY_UPDATE = "MemoryUpdate"
    ENGINE_FAILURE = "EngineFailure"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    FINALIZED = "Finalized"


@dataclass
class EventRecord:
    seq: int
    step: int
    kind: EventKind
    payload: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"seq": self.seq, "step": self.step, "kind": self.kind.value, "payload": self.payload}

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EventRecord':
        return cls(seq=int(data["seq"]), step=int(data["step"]), kind=EventKind(data["kind"]),
                   payload=dict(data.get("payload") or {}))


class EventLog:
    """
    Append-only event sequence, mirrored to a JSONL file when a path is given

    Records carry no wall-clock fields, so equal runs give equal files.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: List[EventRecord] = []
        self._file: Optional[IO[str]] = None
        if path:
            self._file = open(path, 'w')

    def append(self, step: int, kind: EventKind, **payload: Any) -> EventRecord:
        record = EventRecord(seq=len(self.records), step=step, kind=kind, payload=payload)
        self.records.append(record)
        if self._file is not None:
            self._file.write(record.to_line() + "\n")
        return record

    def of_kind(self, kind: EventKind) -> List[EventRecord]:
        return [r for r in self.records if r.kind == kind]

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self) -> 'EventLog':
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __len__(self) -> int:
        return len(self.records)

    @staticmethod
    def read(path: str) -> List[EventRecord]:
        """
        Read an events file (or the events file of a run directory)

        Raises:
            MissingLog: The file does not exist
        """
        if os.path.isdir(path):
            path = os.path.join(path, EVENTS_FILE)
        if not os.path.exists(path):
            raise MissingLog(f"event log not found: {path}")
        records = []
        with open(path, 'r') as f:
            for line_number, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(EventRecord.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as e:
                    raise ValueError(f"{path}:{line_number}: bad event record: {e}") from None
        return records


def replay_events(events: Iterable[EventRecord]) -> SolutionGraph:
    """
    Rebuild the graph a run produced from its event log alone

    Node creation goes through add_child and add_reference_edges, so ids and
    structural checks match the live run; visit statistics are re-accumulated
    from Backprop events in log order.
    """
    graph = SolutionGraph()
    for event in events:
        p = event.payload
        if event.kind == EventKind.NODE_CREATED:
            node_id = graph.add_child(
                p["parent"],
                SolutionPayload.from_dict(p["payload"]),
                OperatorKind(p["operator"]),
                ExpansionMode(p["mode"]),
                created_step=p["created_step"],
            )
            if node_id != p["node"]:
                raise ValueError(f"event {event.seq}: replay created node {node_id}, log says {p['node']}")
        elif event.kind == EventKind.REFERENCE_EDGES:
            graph.add_reference_edges(p["sources"], p["node"], RefKind(p["ref_kind"]))
        elif event.kind == EventKind.SIMULATED:
            graph.set_outcome(p["node"], ExecState(p["state"]), p.get("metric"))
        elif event.kind == EventKind.BUDGET_EXHAUSTED:
            graph.set_outcome(p["node"], ExecState.FAILED)
        elif event.kind == EventKind.BACKPROP:
            for node_id in p["path"]:
                stats = graph.node(node_id).stats
                stats.visits += 1
                stats.value += p["reward"]
        elif event.kind == EventKind.FINALIZED:
            graph.finalize()
    return graph
