"""
Shared test fixtures for pymcgs tests
"""
import pytest

from pymcgs.core.config import RunConfig
from pymcgs.core.engine import Direction, TaskSpec
from pymcgs.core.graph import ExecState, OperatorKind, SolutionGraph, SolutionPayload
from pymcgs.core.knowledge import KnowledgeBase
from pymcgs.core.synthetic import SyntheticEngine, SyntheticEnvironment


def design(coords, metric_name="accuracy"):
    """Payload carrying a synthetic design"""
    return SolutionPayload(plan="test design", artifact={"coords": list(coords), "metric_name": metric_name})


def add_evaluated(graph, parent, metric, step, operator=OperatorKind.IMPROVE_NORMAL, coords=None):
    """Add a child and mark it Evaluated with the given metric"""
    node_id = graph.add_child(parent, design(coords or [1] * 8), operator, created_step=step)
    graph.set_outcome(node_id, ExecState.EVALUATED, metric)
    return node_id


@pytest.fixture
def task():
    """Fixture providing a small noise-free maximization task"""
    return TaskSpec(
        task_id="toy",
        description="Classify dog photos: an image classification task",
        metric_name="accuracy",
        direction=Direction.MAXIMIZE,
        eval_noise_sigma=0.0,
        seed=7,
    )


@pytest.fixture
def minimize_task():
    """Fixture providing a noise-free minimization task"""
    return TaskSpec(
        task_id="toy-loss",
        description="Tabular regression scored by rmse",
        metric_name="rmse",
        direction=Direction.MINIMIZE,
        eval_noise_sigma=0.0,
        seed=11,
    )


@pytest.fixture
def env(task):
    return SyntheticEnvironment(task, run_seed=0)


@pytest.fixture
def engine(env):
    return SyntheticEngine(env)


@pytest.fixture
def kb():
    """Fixture providing the packaged sample knowledge base"""
    return KnowledgeBase.load()


@pytest.fixture
def graph():
    return SolutionGraph()


@pytest.fixture
def small_config():
    """Fixture providing a short single-worker run configuration"""
    return RunConfig(max_steps=120, max_parallel_workers=1, agg_min_trajectories=3,
                     agg_cooldown_steps=20, time_budget=600.0)
