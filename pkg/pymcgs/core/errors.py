"""
Exception types raised by the search framework

Structural and precondition faults are ValueErrors, runtime failures of
engines and workers are RuntimeErrors, so the CLI can report both the same
way it reports configuration problems.
"""


class GraphError(ValueError):
    """Base class for solution-graph structural errors"""


class UnknownParent(GraphError):
    pass


class UnknownNode(GraphError):
    pass


class GraphFinalized(GraphError):
    pass


class BackwardReference(GraphError):
    """A reference source was created at or after its target"""


class DuplicateEdge(GraphError):
    pass


class EmptyReferenceSources(GraphError):
    pass


class SearchError(ValueError):
    """Base class for search-core errors"""


class NoExpandableNode(SearchError):
    pass


class NoEvaluatedSolution(SearchError):
    pass


class MissingMetric(SearchError):
    pass


class BudgetExhausted(SearchError):
    """Debug cap reached on a Buggy node; the node has been marked Failed"""

    def __init__(self, node_id: int, message: str = ""):
        super().__init__(message or f"debug budget exhausted at node {node_id}")
        self.node_id = node_id


class EmptyReferencePool(SearchError):
    pass


class TooFewMembers(ValueError):
    pass


class EngineFailure(RuntimeError):
    pass


class ReviewReject(RuntimeError):
    pass


class WorkerPanic(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class TaskLoadError(ValueError):
    pass


class MissingLog(FileNotFoundError):
    pass
