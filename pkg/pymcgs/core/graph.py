"""
Solution graph: candidate nodes joined by primary (generative) and
reference (informational) edges
"""
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List, Optional

from .errors import (
    BackwardReference,
    DuplicateEdge,
    EmptyReferenceSources,
    GraphFinalized,
    UnknownNode,
    UnknownParent,
)


class ExecState(Enum):
    """
    Execution state of a node

    BUGGY means execution errored but a Debug may repair it, FAILED is terminal.
    """
    ROOT = "Root"
    DRAFTED = "Drafted"
    BUGGY = "Buggy"
    EVALUATED = "Evaluated"
    FAILED = "Failed"


class OperatorKind(Enum):
    DRAFT = "Draft"
    DEBUG = "Debug"
    IMPROVE_NORMAL = "ImproveNormal"
    IMPROVE_FE = "ImproveFE"
    IMPROVE_CS = "ImproveCS"
    FUSION = "Fusion"
    CODE_REVIEW = "CodeReview"
    ENSEMBLE = "Ensemble"


class ExpansionMode(Enum):
    PRIMARY_ONLY = "PrimaryOnly"
    INTRA_BRANCH = "IntraBranch"
    CROSS_BRANCH = "CrossBranch"
    MULTI_BRANCH_AGG = "MultiBranchAgg"


class EdgeKind(Enum):
    PRIMARY = "Primary"
    REFERENCE = "Reference"


class RefKind(Enum):
    HIST = "Hist"
    CROSS = "Cross"
    AGG = "Agg"


MODE_REF_KIND = {
    ExpansionMode.INTRA_BRANCH: RefKind.HIST,
    ExpansionMode.CROSS_BRANCH: RefKind.CROSS,
    ExpansionMode.MULTI_BRANCH_AGG: RefKind.AGG,
}


@dataclass
class NodeStats:
    """Bandit statistics: visit count N and accumulated reward Q"""
    visits: int = 0
    value: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"visits": self.visits, "value": self.value}


@dataclass
class SolutionPayload:
    """
    Content of one candidate solution

    artifact is opaque to the graph: a design dict for the synthetic engine,
    source text for the LLM engine. provenance mirrors the sources of the
    node's incoming reference edges.
    """
    plan: str = ""
    artifact: Any = None
    analysis: str = ""
    provenance: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "plan": self.plan,
            "artifact": self.artifact,
            "analysis": self.analysis,
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SolutionPayload':
        return cls(
            plan=data.get("plan", ""),
            artifact=data.get("artifact"),
            analysis=data.get("analysis", ""),
            provenance=list(data.get("provenance", [])),
        )


@dataclass
class SolutionNode:
    """One candidate solution in the graph"""
    node_id: int
    parent_id: Optional[int]
    branch_id: Optional[int]
    depth: int
    payload: SolutionPayload
    state: ExecState
    metric: Optional[float] = None
    stats: NodeStats = field(default_factory=NodeStats)
    created_step: int = 0
    debug_count: int = 0
    operator_used: Optional[OperatorKind] = None
    mode: ExpansionMode = ExpansionMode.PRIMARY_ONLY

    @property
    def is_root(self) -> bool:
        return self.parent_id is None

    def __str__(self) -> str:
        metric = "-" if self.metric is None else f"{self.metric:.4f}"
        op = self.operator_used.value if self.operator_used else "root"
        return (f"#{self.node_id} {op:<13} {self.state.value:<9} metric={metric} "
                f"N={self.stats.visits} Q={self.stats.value:.3f}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "node_id": self.node_id,
            "parent_id": self.parent_id,
            "branch_id": self.branch_id,
            "depth": self.depth,
            "payload": self.payload.to_dict(),
            "state": self.state.value,
            "metric": self.metric,
            "stats": self.stats.to_dict(),
            "created_step": self.created_step,
            "debug_count": self.debug_count,
            "operator_used": self.operator_used.value if self.operator_used else None,
            "mode": self.mode.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SolutionNode':
        stats = data.get("stats") or {}
        operator = data.get("operator_used")
        return cls(
            node_id=data["node_id"],
            parent_id=data.get("parent_id"),
            branch_id=data.get("branch_id"),
            depth=data.get("depth", 0),
            payload=SolutionPayload.from_dict(data.get("payload") or {}),
            state=ExecState(data["state"]),
            metric=data.get("metric"),
            stats=NodeStats(visits=stats.get("visits", 0), value=stats.get("value", 0.0)),
            created_step=data.get("created_step", 0),
            debug_count=data.get("debug_count", 0),
            operator_used=OperatorKind(operator) if operator else None,
            mode=ExpansionMode(data.get("mode", ExpansionMode.PRIMARY_ONLY.value)),
        )


@dataclass(frozen=True)
class EdgeRecord:
    """Directed edge; ref_kind is set only on reference edges"""
    source: int
    target: int
    kind: EdgeKind
    ref_kind: Optional[RefKind] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source,
            "target": self.target,
            "kind": self.kind.value,
            "ref_kind": self.ref_kind.value if self.ref_kind else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EdgeRecord':
        ref_kind = data.get("ref_kind")
        return cls(
            source=data["source"],
            target=data["target"],
            kind=EdgeKind(data["kind"]),
            ref_kind=RefKind(ref_kind) if ref_kind else None,
        )


@dataclass
class StructureReport:
    """Violated structural invariants; an empty report means the graph is valid"""
    violations: List[str] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self) -> Iterator[str]:
        return iter(self.violations)

    def __str__(self) -> str:
        if not self.violations:
            return "structure ok"
        return "\n".join(f"   - {v}" for v in self.violations)


class SolutionGraph:
    """
    Owns nodes and edges of the search graph

    Node ids are monotonically increasing integers, the root v0 is id 0.
    All mutation goes through add_child/add_reference_edges/set_outcome so
    the structural invariants hold by construction. Hand-built graphs (from
    from_dict) are accepted as-is and checked with validate_structure.
    """
    ROOT_ID = 0

    def __init__(self, with_root: bool = True):
        self.nodes: Dict[int, SolutionNode] = {}
        self.edges: List[EdgeRecord] = []
        self.step: int = 0
        self.finalized: bool = False
        self._children: Dict[int, List[int]] = {}
        self._ref_sources: Dict[int, List[int]] = {}
        self._next_id = 0

        if with_root:
            root = SolutionNode(
                node_id=self.ROOT_ID,
                parent_id=None,
                branch_id=None,
                depth=0,
                payload=SolutionPayload(plan="", artifact=None),
                state=ExecState.ROOT,
                created_step=0,
            )
            self._insert(root)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    @property
    def root(self) -> SolutionNode:
        return self.nodes[self.ROOT_ID]

    def _insert(self, node: SolutionNode) -> None:
        self.nodes[node.node_id] = node
        self._children.setdefault(node.node_id, [])
        self._ref_sources.setdefault(node.node_id, [])
        self._next_id = max(self._next_id, node.node_id + 1)

    def node(self, node_id: int) -> SolutionNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown node {node_id}") from None

    def children(self, node_id: int) -> List[SolutionNode]:
        """Primary-edge children in node_id order"""
        return [self.nodes[c] for c in self._children.get(node_id, [])]

    def reference_sources(self, node_id: int) -> List[int]:
        return list(self._ref_sources.get(node_id, []))

    def primary_path(self, node_id: int) -> List[int]:
        """Node ids from node_id up to the root, inclusive"""
        path = []
        current = self.node(node_id)
        while True:
            path.append(current.node_id)
            if current.parent_id is None:
                break
            current = self.nodes[current.parent_id]
        return path

    def branch_nodes(self, branch_id: int) -> List[SolutionNode]:
        """Nodes of one branch in creation order"""
        members = [n for n in self.nodes.values() if n.branch_id == branch_id]
        members.sort(key=lambda n: (n.created_step, n.node_id))
        return members

    def branch_ids(self) -> List[int]:
        return sorted({n.branch_id for n in self.nodes.values() if n.branch_id is not None})

    def evaluated_nodes(self) -> List[SolutionNode]:
        return [n for n in self.nodes.values() if n.state == ExecState.EVALUATED]

    def root_drafts(self) -> int:
        """Draft children of v0; aggregation and ensemble roots do not count"""
        return sum(1 for c in self.children(self.ROOT_ID) if c.operator_used == OperatorKind.DRAFT)

    def add_child(self, parent: int, payload: SolutionPayload, operator: OperatorKind,
                  mode: ExpansionMode = ExpansionMode.PRIMARY_ONLY,
                  created_step: Optional[int] = None) -> int:
        """
        Create a Drafted node under parent along a primary edge

        Args:
            parent: Primary parent node id
            payload: Candidate content
            operator: Operator that produced the candidate
            mode: Expansion mode the candidate was produced under
            created_step: Step counter at creation (defaults to graph.step)

        Returns:
            The new node id
        """
        if self.finalized:
            raise GraphFinalized("graph is finalized")
        if parent not in self.nodes:
            raise UnknownParent(f"unknown parent {parent}")

        parent_node = self.nodes[parent]
        node_id = self._next_id
        branch_id = node_id if parent_node.is_root else parent_node.branch_id
        debug_count = parent_node.debug_count + 1 if operator == OperatorKind.DEBUG else 0

        node = SolutionNode(
            node_id=node_id,
            parent_id=parent,
            branch_id=branch_id,
            depth=parent_node.depth + 1,
            payload=SolutionPayload(plan=payload.plan, artifact=payload.artifact,
                                    analysis=payload.analysis, provenance=[]),
            state=ExecState.DRAFTED,
            created_step=self.step if created_step is None else created_step,
            debug_count=debug_count,
            operator_used=operator,
            mode=mode,
        )
        self._insert(node)
        self._children[parent].append(node_id)
        self.edges.append(EdgeRecord(parent, node_id, EdgeKind.PRIMARY))
        return node_id

    def add_reference_edges(self, sources: Iterable[int], target: int, ref_kind: RefKind) -> int:
        """
        Attach reference edges from every source to target

        Sources keep their given order; the target's provenance is updated to
        match its incoming reference edges.

        Returns:
            Number of edges added
        """
        ordered = list(dict.fromkeys(sources))
        if not ordered:
            raise EmptyReferenceSources("reference sources must be nonempty")
        if target not in self.nodes:
            raise UnknownNode(f"unknown target {target}")
        target_node = self.nodes[target]

        existing = set(self._ref_sources[target])
        for source in ordered:
            if source not in self.nodes:
                raise UnknownNode(f"unknown reference source {source}")
            if self.nodes[source].created_step >= target_node.created_step:
                raise BackwardReference(
                    f"source {source} (step {self.nodes[source].created_step}) is not older "
                    f"than target {target} (step {target_node.created_step})")
            if source in existing or source == target_node.parent_id:
                raise DuplicateEdge(f"edge {source}->{target} already exists")

        for source in ordered:
            self.edges.append(EdgeRecord(source, target, EdgeKind.REFERENCE, ref_kind))
            self._ref_sources[target].append(source)
        target_node.payload.provenance = list(self._ref_sources[target])
        return len(ordered)

    def set_outcome(self, node_id: int, state: ExecState, metric: Optional[float] = None) -> None:
        """Record a simulation outcome; metric is kept only for Evaluated nodes"""
        node = self.node(node_id)
        node.state = state
        node.metric = float(metric) if state == ExecState.EVALUATED and metric is not None else None

    def finalize(self) -> None:
        self.finalized = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nodes": [self.nodes[i].to_dict() for i in sorted(self.nodes)],
            "edges": [e.to_dict() for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SolutionGraph':
        """Rebuild a graph from a snapshot without validating it"""
        graph = cls(with_root=False)
        for node_data in data.get("nodes", []):
            graph._insert(SolutionNode.from_dict(node_data))
        for edge_data in data.get("edges", []):
            edge = EdgeRecord.from_dict(edge_data)
            graph.edges.append(edge)
            if edge.kind == EdgeKind.PRIMARY:
                graph._children.setdefault(edge.source, []).append(edge.target)
            else:
                graph._ref_sources.setdefault(edge.target, []).append(edge.source)
        for children in graph._children.values():
            children.sort()
        if graph.nodes:
            graph.step = max(n.created_step for n in graph.nodes.values())
        return graph

    @classmethod
    def from_json(cls, text: str) -> 'SolutionGraph':
        return cls.from_dict(json.loads(text))


def validate_structure(graph: SolutionGraph, max_references: Optional[int] = None) -> StructureReport:
    """
    Check every structural invariant of the graph

    Covers: single root, tree-ness of primary edges, depth and branch
    inheritance, metric/state consistency, reference edge ordering and
    duplication, acyclicity of the whole graph, provenance consistency and
    (optionally) the reference in-degree cap.

    Returns:
        StructureReport listing every violation found
    """
    report = StructureReport()
    nodes = graph.nodes

    roots = [n for n in nodes.values() if n.parent_id is None]
    if len(roots) != 1:
        report.add(f"expected exactly one root, found {len(roots)}")
    for root in roots:
        if root.state != ExecState.ROOT:
            report.add(f"root {root.node_id} has state {root.state.value}")
        if root.metric is not None:
            report.add(f"root {root.node_id} has a metric")

    primary_in: Dict[int, List[int]] = {}
    ref_in: Dict[int, List[int]] = {}
    primary_pairs = set()
    ref_pairs = set()
    for edge in graph.edges:
        if edge.source not in nodes or edge.target not in nodes:
            report.add(f"edge {edge.source}->{edge.target} references an unknown node")
            continue
        if edge.kind == EdgeKind.PRIMARY:
            if edge.ref_kind is not None:
                report.add(f"primary edge {edge.source}->{edge.target} carries a ref_kind")
            primary_in.setdefault(edge.target, []).append(edge.source)
            primary_pairs.add((edge.source, edge.target))
        else:
            if edge.ref_kind is None:
                report.add(f"reference edge {edge.source}->{edge.target} has no ref_kind")
            pair = (edge.source, edge.target)
            if pair in ref_pairs:
                report.add(f"duplicate reference edge {edge.source}->{edge.target}")
            ref_pairs.add(pair)
            ref_in.setdefault(edge.target, []).append(edge.source)
            if nodes[edge.target].created_step <= nodes[edge.source].created_step:
                report.add(f"reference edge {edge.source}->{edge.target} points backward in time")

    for pair in sorted(ref_pairs & primary_pairs):
        report.add(f"reference edge {pair[0]}->{pair[1]} duplicates a primary edge")

    for node in nodes.values():
        parents = primary_in.get(node.node_id, [])
        if node.parent_id is None:
            if parents:
                report.add(f"root {node.node_id} has an incoming primary edge")
        else:
            if len(parents) != 1:
                report.add(f"node {node.node_id} has {len(parents)} primary parents")
            elif parents[0] != node.parent_id:
                report.add(f"node {node.node_id} primary edge source {parents[0]} != parent_id {node.parent_id}")
            parent = nodes.get(node.parent_id)
            if parent is None:
                report.add(f"node {node.node_id} has unknown parent {node.parent_id}")
            else:
                if node.depth != parent.depth + 1:
                    report.add(f"node {node.node_id} depth {node.depth} != parent depth + 1")
                expected_branch = node.node_id if parent.parent_id is None else parent.branch_id
                if node.branch_id != expected_branch:
                    report.add(f"node {node.node_id} branch {node.branch_id} != expected {expected_branch}")
            if node.state == ExecState.ROOT:
                report.add(f"non-root node {node.node_id} has state Root")

        if (node.metric is not None) != (node.state == ExecState.EVALUATED):
            report.add(f"node {node.node_id} metric presence disagrees with state {node.state.value}")
        if node.stats.visits == 0 and node.stats.value != 0:
            report.add(f"node {node.node_id} has Q != 0 with N = 0")

        sources = ref_in.get(node.node_id, [])
        if sorted(sources) != sorted(node.payload.provenance):
            report.add(f"node {node.node_id} provenance {node.payload.provenance} != reference sources {sources}")
        if max_references is not None and len(sources) > max_references:
            report.add(f"node {node.node_id} has {len(sources)} reference edges (cap {max_references})")

    # Kahn's algorithm over all edges
    indegree = {n: 0 for n in nodes}
    successors: Dict[int, List[int]] = {n: [] for n in nodes}
    for edge in graph.edges:
        if edge.source in nodes and edge.target in nodes:
            successors[edge.source].append(edge.target)
            indegree[edge.target] += 1
    queue = deque(n for n, d in indegree.items() if d == 0)
    visited = 0
    while queue:
        current = queue.popleft()
        visited += 1
        for succ in successors[current]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                queue.append(succ)
    if visited != len(nodes):
        cyclic = sorted(n for n, d in indegree.items() if d > 0)
        report.add(f"graph is not a DAG: cycle through nodes {cyclic}")

    return report
