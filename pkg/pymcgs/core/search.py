"""
Search core: UCT selection over primary edges, parent-relative reward,
primary-path backpropagation and the memory tiers
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from .engine import Direction, TaskSpec
from .errors import MissingMetric, NoEvaluatedSolution, NoExpandableNode
from .graph import ExecState, NodeStats, SolutionGraph, SolutionNode

FAILURE_PENALTY = -1.0
REPAIR_BONUS = 0.5
REVIEW_PENALTY = -0.25


@dataclass
class SearchPolicyConfig:
    exploration_constant: float = 1.414
    epsilon: float = 1e-6
    max_steps: int = 500

    def __post_init__(self):
        if self.exploration_constant <= 0:
            raise ValueError("exploration_constant must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass
class RewardRecord:
    """Reward of one simulation, value = clamp(sum of components, -1, 1)"""
    value: float
    components: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {"value": self.value, "components": dict(self.components)}


def clamp(value: float, low: float = -1.0, high: float = 1.0) -> float:
    return max(low, min(high, value))


def rank_key(metric: float, created_step: int, node_id: int, direction: Direction) -> Tuple:
    """Sort key putting the best metric first; earlier creation wins ties"""
    return (-direction.sign * metric, created_step, node_id)


def uct_score(child: NodeStats, parent_visits: int, cfg: SearchPolicyConfig) -> float:
    """
    UCT(i) = Q_i / (N_i + eps) + c * sqrt(ln(N_v + 1) / (N_i + eps))

    Q is the accumulated (summed) reward. eps smooths both denominators,
    so an unvisited child gets a very large exploration term.
    """
    if parent_visits < 0:
        raise ValueError("parent_visits must be >= 0")
    denominator = child.visits + cfg.epsilon
    exploitation = child.value / denominator
    exploration = cfg.exploration_constant * math.sqrt(math.log(parent_visits + 1) / denominator)
    return exploitation + exploration


def _leaf_expandable(graph: SolutionGraph) -> Callable[[SolutionNode], bool]:
    def is_expandable(node: SolutionNode) -> bool:
        return node.state != ExecState.FAILED and not graph.children(node.node_id)
    return is_expandable


def select(graph: SolutionGraph, cfg: SearchPolicyConfig,
           is_expandable: Optional[Callable[[SolutionNode], bool]] = None,
           virtual_visits: Optional[Mapping[int, int]] = None) -> int:
    """
    Descend from v0 along primary edges by argmax UCT

    Stops at the first node is_expandable accepts. Only children whose
    subtree still contains an expandable node are candidates. Ties go to the
    lowest node_id. virtual_visits adds in-flight visit counts to N.

    Args:
        graph: Solution graph
        cfg: Search policy constants
        is_expandable: Predicate from the operator scheduler (default: non-failed leaves)
        virtual_visits: Extra visits per node id for jobs in flight

    Returns:
        Id of the node to expand
    """
    expandable = is_expandable or _leaf_expandable(graph)
    virtual = virtual_visits or {}

    frontier: Dict[int, bool] = {}
    for node_id in sorted(graph.nodes, reverse=True):
        node = graph.nodes[node_id]
        frontier[node_id] = expandable(node) or any(
            frontier.get(c.node_id, False) for c in graph.children(node_id))

    if not frontier.get(SolutionGraph.ROOT_ID):
        raise NoExpandableNode("no expandable node left in the graph")

    node = graph.root
    while not expandable(node):
        candidates = [c for c in graph.children(node.node_id) if frontier[c.node_id]]
        if not candidates:
            raise NoExpandableNode(f"node {node.node_id} has no expandable descendant")

        parent_visits = node.stats.visits + virtual.get(node.node_id, 0)
        best = None
        best_score = -math.inf
        for child in candidates:
            stats = NodeStats(visits=child.stats.visits + virtual.get(child.node_id, 0),
                              value=child.stats.value)
            score = uct_score(stats, parent_visits, cfg)
            if best is None or score > best_score:
                best = child
                best_score = score
        node = best

    return node.node_id


def compute_reward(parent: SolutionNode, child: SolutionNode, task: TaskSpec,
                   review_warned: bool = False) -> RewardRecord:
    """
    Reward of a simulated child relative to its primary parent

    Failure (Buggy or Failed) is -1. A successful child of a Buggy, Failed
    or metric-less parent earns the repair bonus. Between two evaluated
    nodes the improvement is the direction-aware relative change, clamped.
    A code-review warning costs REVIEW_PENALTY.
    """
    if child.state not in (ExecState.EVALUATED, ExecState.BUGGY, ExecState.FAILED):
        raise ValueError(f"node {child.node_id} has not been simulated ({child.state.value})")

    improvement = 0.0
    debug_bonus = 0.0
    penalty = 0.0

    if child.state != ExecState.EVALUATED:
        penalty += FAILURE_PENALTY
    else:
        if child.metric is None:
            raise MissingMetric(f"node {child.node_id} is Evaluated without a metric")
        parent_metric = parent.metric if parent.state == ExecState.EVALUATED else None
        if parent.state in (ExecState.BUGGY, ExecState.FAILED) or parent_metric is None:
            debug_bonus = REPAIR_BONUS
        if parent_metric is not None:
            delta = task.direction.sign * (child.metric - parent_metric)
            improvement = clamp(delta / max(abs(parent_metric), 1e-8))

    if review_warned:
        penalty += REVIEW_PENALTY

    return RewardRecord(
        value=clamp(improvement + debug_bonus + penalty),
        components={"improvement": improvement, "debug_bonus": debug_bonus, "penalty": penalty},
    )


def backpropagate(graph: SolutionGraph, leaf: int, reward: RewardRecord) -> List[int]:
    """
    Add one visit and the reward to every node on the leaf-to-root primary path

    Reference edges are never followed.

    Returns:
        The updated path, leaf first
    """
    path = graph.primary_path(leaf)
    for node_id in path:
        stats = graph.nodes[node_id].stats
        stats.visits += 1
        stats.value += reward.value
    return path


class MemoryTiers:
    """
    Branch-level and global top-k of Evaluated nodes

    The per-node tier is the graph itself. Ranking follows the direction
    fixed at construction, earlier created_step (then lower node_id)
    winning ties.
    """

    def __init__(self, branch_top_k: int = 5, global_top_k: int = 10,
                 direction: Direction = Direction.MAXIMIZE):
        self.branch_top_k = branch_top_k
        self.global_top_k = global_top_k
        self.direction = direction
        self.per_branch: Dict[int, List[int]] = {}
        self.global_tier: List[int] = []
        self._records: Dict[int, Tuple[float, int]] = {}

    def _key(self, node_id: int) -> Tuple:
        metric, created_step = self._records[node_id]
        return rank_key(metric, created_step, node_id, self.direction)

    def _insert_into(self, tier: List[int], node_id: int, k: int) -> List[int]:
        merged = [n for n in tier if n != node_id] + [node_id]
        merged.sort(key=self._key)
        return merged[:k]

    def insert(self, node: SolutionNode) -> None:
        self._records[node.node_id] = (node.metric, node.created_step)
        branch = self.per_branch.get(node.branch_id, [])
        self.per_branch[node.branch_id] = self._insert_into(branch, node.node_id, self.branch_top_k)
        self.global_tier = self._insert_into(self.global_tier, node.node_id, self.global_top_k)

    def branch_tier(self, branch_id: int) -> List[int]:
        return list(self.per_branch.get(branch_id, []))

    def metric_of(self, node_id: int) -> float:
        return self._records[node_id][0]

    def to_dict(self) -> Dict[str, object]:
        return {
            "global": list(self.global_tier),
            "branches": {str(b): list(ids) for b, ids in sorted(self.per_branch.items())},
        }


def update_memory(memory: MemoryTiers, node: SolutionNode, task: TaskSpec) -> None:
    """
    Insert an Evaluated node into its branch tier and the global tier

    Raises:
        ValueError: The node is not Evaluated, or the task ranks in the
            other direction than the tiers were built for
    """
    if node.state != ExecState.EVALUATED or node.metric is None:
        raise ValueError(f"node {node.node_id} is not Evaluated")
    if task.direction != memory.direction:
        raise ValueError(f"memory ranks {memory.direction.value}, task {task.task_id} is {task.direction.value}")
    memory.insert(node)


def best_solution(memory: MemoryTiers, task: TaskSpec) -> int:
    """Head of the global tier"""
    if not memory.global_tier:
        raise NoEvaluatedSolution("no evaluated solution")
    return memory.global_tier[0]
