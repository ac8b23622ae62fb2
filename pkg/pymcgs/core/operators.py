"""
Expansion operators: operator scheduling, reference sets, stagnation and
aggregation triggers, code review and node expansion
"""
import copy
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

import numpy as np

from .engine import ProposalEngine, ProposalRequest, ReferencePayload, ReviewStatus, ReviewVerdict, TaskSpec
from .errors import BudgetExhausted, EmptyReferencePool, SearchError
from .graph import MODE_REF_KIND, ExecState, ExpansionMode, OperatorKind, SolutionGraph, SolutionNode, SolutionPayload
from .search import MemoryTiers, rank_key

if TYPE_CHECKING:
    from .config import RunConfig
    from .knowledge import KnowledgeEntry

IMPROVE_VARIANTS = (OperatorKind.IMPROVE_NORMAL, OperatorKind.IMPROVE_FE, OperatorKind.IMPROVE_CS)


@dataclass
class OperatorBudgets:
    """Operator budgets, trigger thresholds and reference-set sizes"""
    max_draft_num: int = 7
    max_debug_num: int = 20
    stagnation_window: int = 5
    agg_min_trajectories: int = 5
    agg_cooldown_steps: int = 50
    max_history_num: int = 7
    max_ref_num: int = 7
    max_agg_num: int = 7
    max_expand_children: int = 3
    improve_weights: Tuple[float, float, float] = (0.5, 0.3, 0.2)
    intra_branch: bool = True
    cross_branch: bool = True
    aggregation: bool = True

    @classmethod
    def from_config(cls, config: 'RunConfig') -> 'OperatorBudgets':
        tree = config.mode == "tree"
        return cls(
            max_draft_num=config.max_draft_num,
            max_debug_num=config.max_debug_num,
            stagnation_window=config.stagnation_window,
            agg_min_trajectories=config.agg_min_trajectories,
            agg_cooldown_steps=config.agg_cooldown_steps,
            max_history_num=config.max_history_num,
            max_ref_num=config.max_ref_num,
            max_agg_num=config.max_agg_num,
            max_expand_children=config.max_expand_children,
            improve_weights=(config.improve_normal_weight, config.improve_fe_weight,
                             config.improve_cs_weight),
            intra_branch=config.intra_branch and not tree,
            cross_branch=config.cross_branch and not tree,
            aggregation=config.aggregation and not tree,
        )


@dataclass
class ReferenceSet:
    mode: ExpansionMode
    members: List[int] = field(default_factory=list)
    rationale: str = ""

    def __len__(self) -> int:
        return len(self.members)


def sample_improve_variant(rng: np.random.Generator, weights: Tuple[float, float, float]) -> OperatorKind:
    """Pick ImproveNormal/FE/CS with the given (unnormalized) weights"""
    total = sum(weights)
    if total <= 0:
        raise ValueError("improve weights must sum to > 0")
    draw = rng.random() * total
    cumulative = 0.0
    for variant, weight in zip(IMPROVE_VARIANTS, weights):
        cumulative += weight
        if draw < cumulative:
            return variant
    return IMPROVE_VARIANTS[-1]


def branch_metrics(graph: SolutionGraph, branch_id: int) -> List[float]:
    return [n.metric for n in graph.branch_nodes(branch_id) if n.state == ExecState.EVALUATED]


def is_stagnant(graph: SolutionGraph, branch_id: int, window: int, task: TaskSpec) -> bool:
    """
    True if the branch best did not improve across its last `window` evaluated nodes

    The window's first node sets the baseline (together with everything
    before it); stagnation means none of the following window-1 nodes beat it.
    """
    if branch_id not in graph.branch_ids():
        raise SearchError(f"unknown branch {branch_id}")
    metrics = branch_metrics(graph, branch_id)
    if window < 1 or len(metrics) < window:
        return False
    split = len(metrics) - window + 1
    best = metrics[0]
    for metric in metrics[1:split]:
        if task.direction.better(metric, best):
            best = metric
    return not any(task.direction.better(metric, best) for metric in metrics[split:])


def qualifying_branches(graph: SolutionGraph, min_trajectories: int) -> List[int]:
    """Branches holding at least min_trajectories evaluated nodes"""
    return [b for b in graph.branch_ids() if len(branch_metrics(graph, b)) >= min_trajectories]


def aggregation_ready(graph: SolutionGraph, budgets: OperatorBudgets, last_agg_step: int,
                      current_step: Optional[int] = None) -> bool:
    step = graph.step if current_step is None else current_step
    if step - last_agg_step < budgets.agg_cooldown_steps:
        return False
    return len(qualifying_branches(graph, budgets.agg_min_trajectories)) >= 2


def choose_operator(graph: SolutionGraph, node: int, budgets: OperatorBudgets,
                    rng: np.random.Generator, task: TaskSpec, current_step: int = 0,
                    last_agg_step: int = 0, in_flight_drafts: int = 0) -> Tuple[OperatorKind, ExpansionMode]:
    """
    Pick the operator and expansion mode for the selected node

    Rules in priority order: root Draft while under max_draft_num, Debug of a
    Buggy node under max_debug_num, multi-branch aggregation, cross-branch
    Fusion on a stagnant branch, then a weighted Improve variant.

    Raises:
        BudgetExhausted: The Buggy node reached max_debug_num; it is now Failed
    """
    target = graph.node(node)

    if target.is_root:
        if graph.root_drafts() + in_flight_drafts < budgets.max_draft_num:
            return OperatorKind.DRAFT, ExpansionMode.PRIMARY_ONLY
        if budgets.aggregation and aggregation_ready(graph, budgets, last_agg_step, current_step):
            return OperatorKind.FUSION, ExpansionMode.MULTI_BRANCH_AGG
        raise SearchError("root has no operator left: draft budget spent")

    if target.state == ExecState.BUGGY:
        if target.debug_count < budgets.max_debug_num:
            return OperatorKind.DEBUG, ExpansionMode.PRIMARY_ONLY
        graph.set_outcome(node, ExecState.FAILED)
        raise BudgetExhausted(node)

    if target.state != ExecState.EVALUATED:
        raise SearchError(f"node {node} ({target.state.value}) cannot be expanded")

    if budgets.aggregation and aggregation_ready(graph, budgets, last_agg_step, current_step):
        return OperatorKind.FUSION, ExpansionMode.MULTI_BRANCH_AGG

    if budgets.cross_branch and is_stagnant(graph, target.branch_id, budgets.stagnation_window, task):
        return OperatorKind.FUSION, ExpansionMode.CROSS_BRANCH

    variant = sample_improve_variant(rng, budgets.improve_weights)
    if budgets.intra_branch and branch_metrics(graph, target.branch_id):
        return variant, ExpansionMode.INTRA_BRANCH
    return variant, ExpansionMode.PRIMARY_ONLY


def _tree_distance(graph: SolutionGraph, a: int, b: int) -> Tuple[int, bool]:
    """Primary-path distance between a and b, and whether a is an ancestor of b"""
    path_b = graph.primary_path(b)
    depth_on_b = {n: i for i, n in enumerate(path_b)}
    for i, n in enumerate(graph.primary_path(a)):
        if n in depth_on_b:
            return i + depth_on_b[n], i == 0
    raise SearchError(f"nodes {a} and {b} share no ancestor")


def build_reference_set(graph: SolutionGraph, node: int, mode: ExpansionMode, memory: MemoryTiers,
                        budgets: OperatorBudgets, task: TaskSpec) -> ReferenceSet:
    """
    Select the reference nodes conditioning an expansion

    IntraBranch takes the max_history_num nodes of node's branch nearest by
    primary-path distance (ancestors first, then most recent), whatever their
    state. CrossBranch takes the max_ref_num best Evaluated nodes of other
    branches, lower debug_count first on equal metric. MultiBranchAgg takes
    each qualifying branch's best node, then the rest of those branch tiers
    by metric, up to max_agg_num.

    Raises:
        EmptyReferencePool: No node qualifies
    """
    sign = task.direction.sign

    if mode == ExpansionMode.INTRA_BRANCH:
        target = graph.node(node)
        ranked = []
        for candidate in graph.branch_nodes(target.branch_id):
            if candidate.node_id == node:
                continue
            distance, ancestor = _tree_distance(graph, candidate.node_id, node)
            ranked.append((distance, not ancestor, -candidate.created_step, -candidate.node_id,
                           candidate.node_id))
        ranked.sort()
        members = [r[-1] for r in ranked[:budgets.max_history_num]]
        rationale = f"nearest {len(members)} nodes of branch {target.branch_id}"

    elif mode == ExpansionMode.CROSS_BRANCH:
        target = graph.node(node)
        candidates = [n for n in graph.evaluated_nodes() if n.branch_id != target.branch_id]
        candidates.sort(key=lambda n: (-sign * n.metric, n.debug_count, n.created_step, n.node_id))
        members = [n.node_id for n in candidates[:budgets.max_ref_num]]
        rationale = f"top {len(members)} evaluated nodes outside branch {target.branch_id}"

    elif mode == ExpansionMode.MULTI_BRANCH_AGG:
        branches = qualifying_branches(graph, budgets.agg_min_trajectories)
        tiers = {b: memory.branch_tier(b) for b in branches}
        tiers = {b: ids for b, ids in tiers.items() if ids}

        def key(node_id: int) -> Tuple:
            n = graph.nodes[node_id]
            return rank_key(n.metric, n.created_step, n.node_id, task.direction)

        heads = sorted((ids[0] for ids in tiers.values()), key=key)
        rest = sorted((i for ids in tiers.values() for i in ids[1:]), key=key)
        members = (heads + rest)[:budgets.max_agg_num]
        rationale = f"top trajectories of branches {sorted(tiers)}"

    else:
        raise ValueError(f"mode {mode.value} takes no reference set")

    if not members:
        raise EmptyReferencePool(f"no reference candidates for {mode.value} at node {node}")
    return ReferenceSet(mode=mode, members=members, rationale=rationale)


def code_review(candidate: SolutionPayload, task: TaskSpec, engine: ProposalEngine) -> ReviewVerdict:
    """Review a proposed candidate before it is simulated"""
    return engine.review(candidate, task)


def build_request(graph: SolutionGraph, node: int, op: OperatorKind, refs: Optional[ReferenceSet],
                  task: TaskSpec, kb_context: List['KnowledgeEntry'], seed: int) -> ProposalRequest:
    """Snapshot everything a worker needs into a ProposalRequest"""
    target = graph.node(node)
    references = []
    for ref_id in (refs.members if refs else []):
        ref = graph.node(ref_id)
        references.append(ReferencePayload(payload=copy.deepcopy(ref.payload),
                                           metric=ref.metric, state=ref.state))
    return ProposalRequest(
        operator=op,
        target_payload=copy.deepcopy(target.payload),
        reference_payloads=references,
        task=task,
        kb_snippets=list(kb_context),
        seed=seed,
        target_metric=target.metric,
    )


def apply_candidate(graph: SolutionGraph, parent: int, candidate: SolutionPayload, op: OperatorKind,
                    mode: ExpansionMode, refs: Optional[ReferenceSet], verdict: ReviewVerdict,
                    created_step: Optional[int] = None) -> int:
    """
    Create the child node and its reference edges

    A rejected candidate is created Failed and never simulated.
    """
    node_id = graph.add_child(parent, candidate, op, mode, created_step=created_step)
    if refs is not None and refs.members:
        graph.add_reference_edges(refs.members, node_id, MODE_REF_KIND[mode])
    if verdict.status == ReviewStatus.REJECT:
        graph.set_outcome(node_id, ExecState.FAILED)
    return node_id


def expand(graph: SolutionGraph, node: int, op: OperatorKind, refs: Optional[ReferenceSet],
           engine: ProposalEngine, task: TaskSpec, kb_context: List['KnowledgeEntry'],
           seed: int = 0, mode: Optional[ExpansionMode] = None) -> int:
    """
    Propose, review and attach a new candidate under node in one call

    The coordinator splits the same sequence across build_request (snapshot),
    the worker (propose, review, evaluate) and apply_candidate.

    Raises:
        EngineFailure: The engine could not propose; no node is created
    """
    if mode is None:
        mode = refs.mode if refs is not None else ExpansionMode.PRIMARY_ONLY
    parent = SolutionGraph.ROOT_ID if mode == ExpansionMode.MULTI_BRANCH_AGG else node
    request = build_request(graph, node, op, refs, task, kb_context, seed)
    candidate = engine.propose(request)
    verdict = code_review(candidate, task, engine)
    return apply_candidate(graph, parent, candidate, op, mode, refs, verdict)


def check_mode_consistency(graph: SolutionGraph, budgets: OperatorBudgets) -> List[str]:
    """
    Check each node's operator, mode and reference edges agree

    Returns:
        One message per violation
    """
    violations = []
    for node in graph.nodes.values():
        if node.is_root:
            continue
        sources = graph.reference_sources(node.node_id)
        label = f"node {node.node_id} ({node.mode.value})"
        if node.mode == ExpansionMode.PRIMARY_ONLY:
            if sources:
                violations.append(f"{label} has {len(sources)} reference edges")
        elif node.mode == ExpansionMode.INTRA_BRANCH:
            if not 1 <= len(sources) <= budgets.max_history_num:
                violations.append(f"{label} has {len(sources)} reference edges")
            if any(graph.nodes[s].branch_id != node.branch_id for s in sources):
                violations.append(f"{label} references another branch")
        elif node.mode == ExpansionMode.CROSS_BRANCH:
            if not 1 <= len(sources) <= budgets.max_ref_num:
                violations.append(f"{label} has {len(sources)} reference edges")
            if any(graph.nodes[s].branch_id == node.branch_id for s in sources):
                violations.append(f"{label} references its own branch")
        elif node.mode == ExpansionMode.MULTI_BRANCH_AGG:
            if node.parent_id != SolutionGraph.ROOT_ID:
                violations.append(f"{label} is not a child of the root")
            if node.operator_used != OperatorKind.ENSEMBLE:
                if len({graph.nodes[s].branch_id for s in sources}) < 2:
                    violations.append(f"{label} references fewer than 2 branches")
                if len(sources) > budgets.max_agg_num:
                    violations.append(f"{label} has {len(sources)} reference edges")
            elif len(sources) < 2:
                violations.append(f"{label} ensemble has {len(sources)} members")
        if node.operator_used == OperatorKind.DEBUG and node.debug_count > budgets.max_debug_num:
            violations.append(f"node {node.node_id} debug chain {node.debug_count} exceeds the cap")
    if graph.root_drafts() > budgets.max_draft_num:
        violations.append(f"root has {graph.root_drafts()} drafts (cap {budgets.max_draft_num})")
    return violations


class OperatorScheduler:
    """
    Coordinator-side operator state: in-flight jobs and the aggregation clock

    is_expandable is the predicate handed to select().
    """

    def __init__(self, graph: SolutionGraph, budgets: OperatorBudgets, task: TaskSpec):
        self.graph = graph
        self.budgets = budgets
        self.task = task
        self.in_flight: Dict[int, int] = {}
        self.in_flight_drafts = 0
        self.last_agg_step = 0

    def is_expandable(self, node: SolutionNode) -> bool:
        pending = self.in_flight.get(node.node_id, 0)
        if node.state == ExecState.ROOT:
            if self.graph.root_drafts() + self.in_flight_drafts < self.budgets.max_draft_num:
                return True
            return (self.budgets.aggregation and
                    aggregation_ready(self.graph, self.budgets, self.last_agg_step))
        if node.state == ExecState.EVALUATED:
            return len(self.graph.children(node.node_id)) + pending < self.budgets.max_expand_children
        if node.state == ExecState.BUGGY:
            return not self.graph.children(node.node_id) and pending == 0
        return False

    def choose(self, node: int, rng: np.random.Generator, step: int) -> Tuple[OperatorKind, ExpansionMode]:
        return choose_operator(self.graph, node, self.budgets, rng, self.task, current_step=step,
                               last_agg_step=self.last_agg_step, in_flight_drafts=self.in_flight_drafts)

    def acquire(self, target: int, op: OperatorKind, mode: ExpansionMode, step: int) -> None:
        self.in_flight[target] = self.in_flight.get(target, 0) + 1
        if op == OperatorKind.DRAFT:
            self.in_flight_drafts += 1
        if mode == ExpansionMode.MULTI_BRANCH_AGG:
            self.last_agg_step = step

    def release(self, target: int, op: OperatorKind) -> None:
        remaining = self.in_flight.get(target, 0) - 1
        if remaining > 0:
            self.in_flight[target] = remaining
        else:
            self.in_flight.pop(target, None)
        if op == OperatorKind.DRAFT:
            self.in_flight_drafts -= 1
