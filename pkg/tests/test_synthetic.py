"""
Tests for the synthetic landscape, its review rules and the seeded engine
"""
import itertools
import json

import numpy as np
import pytest

from pymcgs.core.engine import (
    Direction,
    EnsembleMember,
    ProposalRequest,
    ReferencePayload,
    ReviewStatus,
    TaskSpec,
    load_task,
)
from pymcgs.core.errors import TooFewMembers
from pymcgs.core.graph import ExecState, OperatorKind, SolutionPayload
from pymcgs.core.knowledge import KnowledgeEntry, KnowledgeLevel
from pymcgs.core.synthetic import SyntheticEngine, SyntheticEnvironment, default_roles, ensemble_combine
from tests.conftest import design


def request(task, operator, target=None, refs=(), snippets=(), seed=3, target_metric=None):
    return ProposalRequest(operator=operator, target_payload=target or SolutionPayload(),
                           reference_payloads=list(refs), task=task, kb_snippets=list(snippets),
                           seed=seed, target_metric=target_metric)


def test_default_roles():
    assert default_roles(8) == ["model", "model", "feature", "feature",
                                "strategy", "strategy", "plain", "plain"]


def test_landscape_is_seeded(task):
    """Test equal seeds give equal tables and different seeds differ"""
    a = SyntheticEnvironment(task)
    b = SyntheticEnvironment(task)
    assert a.tables == b.tables
    assert a.pairs == b.pairs
    task.seed = task.seed + 1
    assert SyntheticEnvironment(task).tables != a.tables


def test_tables_are_scaled(env):
    for row in env.tables:
        assert len(row) == env.levels
        assert all(0.1 / env.dims <= v <= 0.9 / env.dims for v in row)


def test_planted_optima_are_best(task):
    task.planted_optima = {0: 11, 3: 2}
    env = SyntheticEnvironment(task)
    assert env.best_values[0] == 11
    assert env.best_values[3] == 2
    assert env.tables[0][11] == max(env.tables[0])


@pytest.mark.parametrize("fixture", ["task", "minimize_task"])
def test_optimum_is_never_exceeded(fixture, request):
    """Test no sampled or neighbouring design beats the optimum"""
    task = request.getfixturevalue(fixture)
    env = SyntheticEnvironment(task)
    coords, optimum = env.optimum()
    paired = {d for d1, _, d2, _, _ in env.pairs for d in (d1, d2)}
    assert [d for d in range(task.dims) if coords[d] != env.best_values[d]] == sorted(paired)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        sample = [int(v) for v in rng.integers(0, task.levels, size=task.dims)]
        assert not task.direction.better(env.score(sample), optimum)
    for d, v in itertools.product(range(task.dims), range(task.levels)):
        nearby = list(coords)
        nearby[d] = v
        assert not task.direction.better(env.score(nearby), optimum)


@pytest.mark.parametrize("direction", [Direction.MAXIMIZE, Direction.MINIMIZE])
@pytest.mark.parametrize("seed", range(10))
def test_optimum_matches_exhaustive_search(direction, seed):
    """Test the closed-form optimum against scoring every design of a small task"""
    task = TaskSpec("small", "d", "m", direction=direction, seed=seed, dims=4, levels=4)
    env = SyntheticEnvironment(task)
    scores = [env.score(list(coords)) for coords in itertools.product(range(4), repeat=4)]
    best = max(scores) if direction == Direction.MAXIMIZE else min(scores)
    assert env.optimum()[1] == best


def test_default_task_pairs_sit_off_best_values():
    """Test pairs avoid the planted coordinates and beat the coordinate-wise best design"""
    task = load_task()
    env = SyntheticEnvironment(task)
    assert len(env.pairs) == 3
    for d1, v1, d2, v2, bonus in env.pairs:
        assert {d1, d2}.isdisjoint(task.planted_optima)
        assert v1 != env.best_values[d1] and v2 != env.best_values[d2]
        assert bonus > 0

    coords, optimum = env.optimum()
    assert coords[:2] == [11, 4]
    assert optimum > env.score(env.best_values) + 0.01


def test_evaluate_matches_persisted_tables(env, task, tmp_path):
    """Test noise-free metrics recompute exactly from task_tables.json"""
    path = tmp_path / "task_tables.json"
    env.save_tables(str(path))
    doc = json.loads(path.read_text())

    rng = np.random.default_rng(8)
    for _ in range(50):
        coords = [int(v) for v in rng.integers(0, task.levels, size=task.dims)]
        outcome = env.evaluate(design(coords), task)
        assert outcome.status == ExecState.EVALUATED

        expected = 0.0
        for d, v in enumerate(coords):
            expected += doc["tables"][d][v]
        for pair in doc["pairs"]:
            (d1, d2), (v1, v2) = pair["coords"], pair["values"]
            if coords[d1] == v1 and coords[d2] == v2:
                expected += pair["bonus"]
        assert outcome.metric == expected
    assert doc["optimum"]["metric"] == env.optimum()[1]


def test_evaluate_noise_is_seeded(task):
    task.eval_noise_sigma = 0.05
    env = SyntheticEnvironment(task, run_seed=4)
    coords = [3] * 8
    first = env.evaluate(design(coords), task).metric
    assert env.evaluate(design(coords), task).metric == first
    assert first != env.score(coords)


def test_evaluate_crash_and_malformed(env, task):
    buggy = env.evaluate(design([0, 1, 2, 3, 17, 5, 6, 7]), task)
    assert buggy.status == ExecState.BUGGY
    assert buggy.metric is None
    assert env.evaluate(SolutionPayload(artifact="print(1)"), task).status == ExecState.FAILED
    assert env.evaluate(design([1, 2]), task).status == ExecState.FAILED


def test_review_rules(env, task):
    assert env.review(design([5] * 8), task).status == ReviewStatus.PASS

    mismatch = env.review(design([5] * 8, metric_name="f1"), task)
    assert mismatch.status == ReviewStatus.REJECT
    assert mismatch.reason == "metric-task mismatch"

    assert env.review(SolutionPayload(artifact=None), task).status == ReviewStatus.REJECT
    assert env.review(design([5, 5, 5, 16, 5, 5, 5, 5]), task).status == ReviewStatus.WARN

    env.boundary_flags = [True] + [False] * 7
    flagged = env.review(design([0] + [5] * 7), task)
    assert flagged.status == ReviewStatus.WARN
    assert "coordinate 0" in flagged.warnings[0]
    assert env.review(design([1] + [5] * 7), task).status == ReviewStatus.PASS


def test_draft_is_deterministic(engine, task):
    first = engine.propose(request(task, OperatorKind.DRAFT, seed=10))
    second = engine.propose(request(task, OperatorKind.DRAFT, seed=10))
    assert first.artifact == second.artifact
    assert len(first.artifact["coords"]) == task.dims
    assert all(type(v) is int for v in first.artifact["coords"])
    assert first.artifact["metric_name"] == task.metric_name


def test_draft_follows_knowledge(env, task):
    engine = SyntheticEngine(env, kb_ref_prob=1.0, bug_rate=0.0)
    hint = KnowledgeEntry("m", KnowledgeLevel.MODEL, ["image"], "t", "g", {0: 9, 1: 4})
    coords = engine.propose(request(task, OperatorKind.DRAFT, snippets=[hint])).artifact["coords"]
    assert coords[:2] == [9, 4]


def test_bug_injection(env, task):
    engine = SyntheticEngine(env, bug_rate=1.0)
    coords = engine.propose(request(task, OperatorKind.DRAFT)).artifact["coords"]
    assert any(v >= task.levels for v in coords)


def test_debug_clamps(engine, task):
    target = design([0, 1, 2, 17, 4, 5, 6, 7])
    repaired = engine.propose(request(task, OperatorKind.DEBUG, target=target))
    assert repaired.artifact["coords"] == [0, 1, 2, 15, 4, 5, 6, 7]


def test_improve_normal_moves_one_plain_coordinate(env, task):
    engine = SyntheticEngine(env, bug_rate=0.0)
    base = [8] * 8
    for seed in range(20):
        coords = engine.propose(request(task, OperatorKind.IMPROVE_NORMAL, target=design(base),
                                        seed=seed, target_metric=0.5)).artifact["coords"]
        changed = [d for d in range(8) if coords[d] != base[d]]
        assert len(changed) == 1
        assert changed[0] in (6, 7)
        assert abs(coords[changed[0]] - 8) == 1


def test_improve_normal_steps_toward_better_reference(env, task):
    engine = SyntheticEngine(env, bug_rate=0.0)
    guide = ReferencePayload(design([8] * 6 + [14, 14]), 0.9, ExecState.EVALUATED)
    for seed in range(10):
        coords = engine.propose(request(task, OperatorKind.IMPROVE_NORMAL, target=design([8] * 8),
                                        refs=[guide], seed=seed, target_metric=0.5)).artifact["coords"]
        assert coords[6:] in ([9, 8], [8, 9])


def test_improve_variants_touch_their_roles(env, task):
    engine = SyntheticEngine(env, bug_rate=0.0)
    base = [8] * 8
    for operator, allowed in ((OperatorKind.IMPROVE_FE, {2, 3}), (OperatorKind.IMPROVE_CS, {4, 5})):
        for seed in range(20):
            coords = engine.propose(request(task, operator, target=design(base), seed=seed,
                                            target_metric=0.5)).artifact["coords"]
            assert {d for d in range(8) if coords[d] != base[d]} <= allowed


def test_improve_fe_takes_data_hint(env, task):
    engine = SyntheticEngine(env, kb_ref_prob=1.0, bug_rate=0.0)
    hint = KnowledgeEntry("d", KnowledgeLevel.DATA, ["image"], "t", "g", {2: 1, 3: 1})
    coords = engine.propose(request(task, OperatorKind.IMPROVE_FE, target=design([8] * 8),
                                    snippets=[hint], target_metric=0.5)).artifact["coords"]
    assert 1 in coords[2:4]


def test_fusion_without_mutation_copies_best_source(env, task):
    engine = SyntheticEngine(env, fusion_mutation_rate=0.0, fusion_crossover_rate=0.0)
    refs = [ReferencePayload(design([9] * 8), 0.9, ExecState.EVALUATED),
            ReferencePayload(design([7] * 8), 0.7, ExecState.EVALUATED)]
    fused = engine.propose(request(task, OperatorKind.FUSION, target=design([1] * 8), refs=refs,
                                   target_metric=0.6))
    assert fused.artifact["coords"] == [9] * 8


def test_fusion_crossover_takes_coordinates_from_other_sources(env, task):
    engine = SyntheticEngine(env, fusion_mutation_rate=0.0, fusion_crossover_rate=1.0)
    refs = [ReferencePayload(design([9] * 8), 0.9, ExecState.EVALUATED)]
    fused = engine.propose(request(task, OperatorKind.FUSION, target=design([1] * 8), refs=refs,
                                   target_metric=0.6))
    assert fused.artifact["coords"] == [1] * 8
    assert "crossed [0, 1, 2, 3, 4, 5, 6, 7]" in fused.analysis


def test_ensemble_majority_vote(env, task):
    members = [EnsembleMember(design([1, 1, 1, 1, 1, 1, 1, 1]), 0.9),
               EnsembleMember(design([2, 2, 1, 1, 1, 1, 1, 1]), 0.8),
               EnsembleMember(design([2, 3, 1, 1, 1, 1, 1, 1]), 0.7)]
    combined = ensemble_combine(env, members, task)
    assert combined.artifact["coords"] == [2, 1, 1, 1, 1, 1, 1, 1]

    with pytest.raises(TooFewMembers):
        ensemble_combine(env, members[:1], task)


def test_engine_review_and_ensemble_delegate(engine, task):
    assert engine.review(design([5] * 8), task).status == ReviewStatus.PASS
    members = [EnsembleMember(design([4] * 8), 0.6), EnsembleMember(design([5] * 8), 0.8)]
    assert engine.ensemble(members, task, seed=1).artifact["coords"] == [5] * 8
