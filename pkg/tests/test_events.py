"""
Tests for the JSONL event log and graph replay
"""
import json

import pytest

from pymcgs.core.errors import MissingLog
from pymcgs.core.events import EVENTS_FILE, EventKind, EventLog, EventRecord, replay_events
from pymcgs.core.graph import ExecState, ExpansionMode, OperatorKind, RefKind, SolutionGraph
from tests.conftest import design


def test_event_line_is_canonical():
    record = EventRecord(3, 2, EventKind.SIMULATED, {"node": 4, "metric": 0.5, "state": "Evaluated"})
    assert record.to_line() == ('{"kind":"Simulated","payload":{"metric":0.5,"node":4,"state":"Evaluated"},'
                                '"seq":3,"step":2}')
    assert EventRecord.from_dict(json.loads(record.to_line())) == record


def test_log_writes_and_reads(tmp_path):
    path = tmp_path / EVENTS_FILE
    with EventLog(str(path)) as log:
        log.append(0, EventKind.RUN_STARTED, kb_version="v")
        log.append(1, EventKind.OPERATOR_CHOSEN, target=0, operator="Draft")
        assert len(log) == 2
        assert [r.seq for r in log.records] == [0, 1]
        assert log.of_kind(EventKind.OPERATOR_CHOSEN)[0].payload["operator"] == "Draft"

    assert len(path.read_text().splitlines()) == 2
    assert EventLog.read(str(tmp_path)) == log.records
    assert EventLog.read(str(path)) == log.records


def test_in_memory_log_writes_nothing(tmp_path):
    log = EventLog()
    log.append(0, EventKind.FINALIZED, best=None)
    log.close()
    assert list(tmp_path.iterdir()) == []


def test_read_errors(tmp_path):
    with pytest.raises(MissingLog):
        EventLog.read(str(tmp_path))
    path = tmp_path / EVENTS_FILE
    path.write_text('{"seq":0,"step":0,"kind":"RunStarted","payload":{}}\n\n{"seq":1,"kind":"Nope"}\n')
    with pytest.raises(ValueError, match=r"events.jsonl:3: bad event record"):
        EventLog.read(str(path))


def node_created(log, step, node, parent, operator, mode=ExpansionMode.PRIMARY_ONLY, coords=(1,) * 8):
    log.append(step, EventKind.NODE_CREATED, node=node, parent=parent, operator=operator.value,
               mode=mode.value, created_step=step, payload=design(coords).to_dict())


def test_replay_rebuilds_graph():
    """Test replay of a hand-written log matches direct construction"""
    log = EventLog()
    node_created(log, 1, 1, 0, OperatorKind.DRAFT)
    log.append(1, EventKind.SIMULATED, node=1, state="Evaluated", metric=0.5)
    log.append(1, EventKind.BACKPROP, node=1, path=[1, 0], reward=0.5)
    node_created(log, 2, 2, 0, OperatorKind.DRAFT)
    log.append(2, EventKind.SIMULATED, node=2, state="Buggy", metric=None)
    log.append(2, EventKind.BACKPROP, node=2, path=[2, 0], reward=-1.0)
    node_created(log, 3, 3, 1, OperatorKind.FUSION, ExpansionMode.CROSS_BRANCH)
    log.append(3, EventKind.REFERENCE_EDGES, node=3, sources=[2], ref_kind="Cross")
    log.append(4, EventKind.BUDGET_EXHAUSTED, node=2, debug_count=20)
    log.append(5, EventKind.FINALIZED, best=1)

    graph = replay_events(log.records)

    expected = SolutionGraph()
    expected.add_child(0, design([1] * 8), OperatorKind.DRAFT, created_step=1)
    expected.set_outcome(1, ExecState.EVALUATED, 0.5)
    expected.add_child(0, design([1] * 8), OperatorKind.DRAFT, created_step=2)
    expected.add_child(1, design([1] * 8), OperatorKind.FUSION, ExpansionMode.CROSS_BRANCH, created_step=3)
    expected.add_reference_edges([2], 3, RefKind.CROSS)
    expected.set_outcome(2, ExecState.FAILED)
    for node_id, visits, value in ((0, 2, -0.5), (1, 1, 0.5), (2, 1, -1.0)):
        expected.nodes[node_id].stats.visits = visits
        expected.nodes[node_id].stats.value = value
    expected.finalize()

    assert graph.to_json() == expected.to_json()
    assert graph.finalized


def test_replay_detects_id_mismatch():
    log = EventLog()
    node_created(log, 1, 5, 0, OperatorKind.DRAFT)
    with pytest.raises(ValueError, match="replay created node 1"):
        replay_events(log.records)
