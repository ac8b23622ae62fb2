"""
Report files derived from a run's event log
"""
import csv
import json
import os
from typing import Any, Dict, List, Optional

from .engine import Direction
from .events import EventKind, EventLog, EventRecord
from .graph import ExecState, ExpansionMode, OperatorKind

REPORT_FILE = "report.csv"
SUMMARY_FILE = "summary.json"
NO_SOLUTION = "no evaluated solutions"


def best_so_far(events: List[EventRecord], direction: Direction) -> List[Dict[str, Any]]:
    """One row per evaluated simulation with the running best in the task direction"""
    rows = []
    best: Optional[float] = None
    for event in events:
        if event.kind != EventKind.SIMULATED or event.payload.get("state") != ExecState.EVALUATED.value:
            continue
        metric = event.payload["metric"]
        if best is None or direction.better(metric, best):
            best = metric
        rows.append({"step": event.step, "node": event.payload["node"], "metric": metric, "best_so_far": best})
    return rows


def usage_histogram(events: List[EventRecord]) -> Dict[str, Dict[str, int]]:
    """Created nodes per operator and per expansion mode (every kind listed, zeros included)"""
    operators = {op.value: 0 for op in OperatorKind if op != OperatorKind.CODE_REVIEW}
    modes = {mode.value: 0 for mode in ExpansionMode}
    for event in events:
        if event.kind == EventKind.NODE_CREATED:
            operators[event.payload["operator"]] += 1
            modes[event.payload["mode"]] += 1
    return {"operators": operators, "modes": modes}


def emit_report(run_dir: str) -> Dict[str, str]:
    """
    Write report.csv and summary.json next to the run's events.jsonl

    Args:
        run_dir: Run output directory

    Returns:
        Mapping of report name to written path

    Raises:
        MissingLog: The run has no event log
    """
    events = EventLog.read(run_dir)
    started = next((e for e in events if e.kind == EventKind.RUN_STARTED), None)
    task = started.payload.get("task", {}) if started else {}
    direction = Direction(task.get("direction", Direction.MAXIMIZE.value))

    rows = best_so_far(events, direction)
    report_path = os.path.join(run_dir, REPORT_FILE)
    with open(report_path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=["step", "node", "metric", "best_so_far"])
        writer.writeheader()
        writer.writerows(rows)

    states: Dict[int, str] = {}
    for event in events:
        if event.kind == EventKind.SIMULATED:
            states[event.payload["node"]] = event.payload["state"]
        elif event.kind == EventKind.BUDGET_EXHAUSTED:
            states[event.payload["node"]] = ExecState.FAILED.value
    node_counts = {s.value: 0 for s in (ExecState.EVALUATED, ExecState.BUGGY, ExecState.FAILED)}
    for state in states.values():
        node_counts[state] += 1

    finalized = next((e for e in reversed(events) if e.kind == EventKind.FINALIZED), None)
    summary: Dict[str, Any] = {
        "task_id": task.get("task_id"),
        "metric_name": task.get("metric_name"),
        "direction": direction.value,
        "kb_version": started.payload.get("kb_version") if started else None,
        "steps": max((e.step for e in events if e.kind == EventKind.OPERATOR_CHOSEN), default=0),
        "simulated": len(states),
        "node_counts": node_counts,
        "engine_failures": sum(1 for e in events if e.kind == EventKind.ENGINE_FAILURE),
        "usage": usage_histogram(events),
    }
    if finalized is not None and finalized.payload.get("best") is not None:
        summary["best"] = {"node": finalized.payload["best"], "metric": finalized.payload["metric"]}
        summary["ensemble_node"] = finalized.payload.get("ensemble")
    elif rows:
        best_row = rows[-1]
        summary["best"] = {"node": None, "metric": best_row["best_so_far"]}
    else:
        summary["best"] = None
        summary["status"] = NO_SOLUTION

    summary_path = os.path.join(run_dir, SUMMARY_FILE)
    with open(summary_path, 'w') as f:
        json.dump(summary, f, indent=2, sort_keys=True)

    return {"report": report_path, "summary": summary_path}
