"""
Tests that tree mode behaves exactly like a plain MCTS over the same engine

PlainMCTS below is a self-contained tree search with the same selection
rule, operator rules, reward and backpropagation; it shares only the
engine, the environment and the seed derivation with the orchestrator.
"""
import copy
import math

import pytest

from pymcgs.core.config import RunConfig
from pymcgs.core.engine import ProposalRequest, ReviewStatus, job_seed, step_rng
from pymcgs.core.events import EventKind
from pymcgs.core.graph import ExecState, OperatorKind, SolutionPayload
from pymcgs.core.knowledge import InjectionPhase, injection_context, retrieve
from pymcgs.core.orchestrator import Orchestrator
from pymcgs.core.synthetic import SyntheticEngine, SyntheticEnvironment

IMPROVE = ((0.5, OperatorKind.IMPROVE_NORMAL), (0.8, OperatorKind.IMPROVE_FE), (1.0, OperatorKind.IMPROVE_CS))


class Node:
    def __init__(self, node_id, parent, payload, operator, state, debug_count=0):
        self.node_id = node_id
        self.parent = parent
        self.payload = payload
        self.operator = operator
        self.state = state
        self.debug_count = debug_count
        self.metric = None
        self.children = []
        self.visits = 0
        self.value = 0.0


class PlainMCTS:
    def __init__(self, config, task, kb):
        self.config = config
        self.task = task
        self.retrieved = retrieve(kb, task)
        env = SyntheticEnvironment(task, run_seed=config.seed)
        self.env = env
        self.engine = SyntheticEngine(env, kb_ref_prob=config.kb_init_ref_prob, bug_rate=config.bug_rate,
                                      fusion_mutation_rate=config.fusion_mutation_rate)
        self.nodes = [Node(0, None, SolutionPayload(plan="", artifact=None), None, ExecState.ROOT)]
        self.drafts = 0
        self.trace = []

    def expandable(self, node):
        if node.state == ExecState.ROOT:
            return self.drafts < self.config.max_draft_num
        if node.state == ExecState.EVALUATED:
            return len(node.children) < self.config.max_expand_children
        if node.state == ExecState.BUGGY:
            return not node.children
        return False

    def has_frontier(self, node):
        return self.expandable(node) or any(self.has_frontier(c) for c in node.children)

    def uct(self, child, parent_visits):
        c, eps = self.config.exploration_constant, self.config.epsilon
        return child.value / (child.visits + eps) + c * math.sqrt(math.log(parent_visits + 1) / (child.visits + eps))

    def select(self):
        node = self.nodes[0]
        if not self.has_frontier(node):
            return None
        while not self.expandable(node):
            candidates = [c for c in node.children if self.has_frontier(c)]
            best = candidates[0]
            for child in candidates[1:]:
                if self.uct(child, node.visits) > self.uct(best, node.visits):
                    best = child
            node = best
        return node

    def choose(self, node, step):
        """Operator for node, or None when its debug budget is spent"""
        if node.state == ExecState.ROOT:
            return OperatorKind.DRAFT
        if node.state == ExecState.BUGGY:
            if node.debug_count < self.config.max_debug_num:
                return OperatorKind.DEBUG
            node.state = ExecState.FAILED
            return None
        draw = step_rng(self.config.seed, step, 0).random()
        return next(op for limit, op in IMPROVE if draw < limit)

    def reward(self, parent, child, warned):
        if child.state != ExecState.EVALUATED:
            value = -1.0
        elif parent.state == ExecState.EVALUATED:
            delta = child.metric - parent.metric
            value = max(-1.0, min(1.0, delta / max(abs(parent.metric), 1e-8)))
        else:
            value = 0.5
        if warned:
            value -= 0.25
        return max(-1.0, min(1.0, value))

    def step(self, step):
        while True:
            node = self.select()
            if node is None:
                return False
            op = self.choose(node, step)
            if op is not None:
                break

        phase = InjectionPhase.INIT if op == OperatorKind.DRAFT else InjectionPhase.SEARCH
        snippets = injection_context(self.retrieved, phase, op, step_rng(self.config.seed, step, 1),
                                     self.config.kb_init_ref_prob)
        request = ProposalRequest(operator=op, target_payload=copy.deepcopy(node.payload), reference_payloads=[],
                                  task=self.task, kb_snippets=snippets, seed=job_seed(self.config.seed, step),
                                  target_metric=node.metric)
        candidate = self.engine.propose(request)
        verdict = self.engine.review(candidate, self.task)

        debug_count = node.debug_count + 1 if op == OperatorKind.DEBUG else 0
        child = Node(len(self.nodes), node, candidate, op, ExecState.FAILED, debug_count)
        if verdict.status != ReviewStatus.REJECT:
            outcome = self.env.evaluate(candidate, self.task)
            child.state = outcome.status
            child.metric = outcome.metric
        self.nodes.append(child)
        node.children.append(child)
        if op == OperatorKind.DRAFT:
            self.drafts += 1

        value = self.reward(node, child, verdict.status == ReviewStatus.WARN)
        walk = child
        while walk is not None:
            walk.visits += 1
            walk.value += value
            walk = walk.parent
        self.trace.append((step, node.node_id, op.value, child.state.value, child.metric))
        return True

    def run(self):
        for step in range(1, self.config.max_steps + 1):
            if not self.step(step):
                break


def assert_tree_mode_is_plain_mcts(task, kb, seed, steps):
    task.eval_noise_sigma = 0.05
    config = RunConfig(mode="tree", max_steps=steps, max_parallel_workers=1, seed=seed)

    plain = PlainMCTS(config, task, kb)
    plain.run()

    env = SyntheticEnvironment(task, run_seed=seed)
    engine = SyntheticEngine(env, kb_ref_prob=config.kb_init_ref_prob, bug_rate=config.bug_rate,
                             fusion_mutation_rate=config.fusion_mutation_rate)
    orchestrator = Orchestrator(config, task=task, kb=kb, engine=engine, environment=env, quiet=True)
    orchestrator.dispatch_parallel()

    trace = []
    created = {}
    for event in orchestrator.events.records:
        if event.kind == EventKind.NODE_CREATED:
            created[event.payload["node"]] = (event.step, event.payload["parent"], event.payload["operator"])
        elif event.kind == EventKind.SIMULATED:
            trace.append(created[event.payload["node"]] + (event.payload["state"], event.payload["metric"]))

    assert trace == plain.trace
    assert orchestrator.graph.edges and all(e.ref_kind is None for e in orchestrator.graph.edges)
    for node in plain.nodes:
        stats = orchestrator.graph.nodes[node.node_id].stats
        assert (stats.visits, stats.value) == (node.visits, node.value)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tree_mode_is_plain_mcts(seed, task, kb):
    """Test the tree-mode search against the independent MCTS step by step"""
    assert_tree_mode_is_plain_mcts(task, kb, seed, steps=80)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_tree_mode_is_plain_mcts_full_size(seed, task, kb):
    """Test 200 steps on each of five seeds"""
    assert_tree_mode_is_plain_mcts(task, kb, seed, steps=200)
