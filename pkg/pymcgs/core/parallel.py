"""
Worker pool running expansion jobs while the coordinator owns the graph
"""
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from .engine import Environment, EvalOutcome, ProposalEngine, ProposalRequest, ReviewStatus, ReviewVerdict
from .errors import EngineFailure, WorkerPanic
from .graph import ExpansionMode, OperatorKind, SolutionPayload
from .operators import ReferenceSet, code_review


@dataclass
class ExpansionJob:
    """
    Immutable snapshot handed to a worker

    target is the node the operator was chosen for, parent the node the
    candidate will hang under (v0 for aggregation).
    """
    step: int
    target: int
    parent: int
    operator: OperatorKind
    mode: ExpansionMode
    refs: Optional[ReferenceSet]
    request: ProposalRequest
    kb_ids: List[str] = field(default_factory=list)
    virtual_path: List[int] = field(default_factory=list)


@dataclass
class JobResult:
    candidate: Optional[SolutionPayload] = None
    verdict: Optional[ReviewVerdict] = None
    outcome: Optional[EvalOutcome] = None
    error: Optional[str] = None


def run_job(job: ExpansionJob, engine: ProposalEngine, environment: Environment) -> JobResult:
    """
    Worker side of one expansion: propose, review, simulate

    Engine errors are returned, not raised, so the coordinator can log them.
    A rejected candidate is not simulated.
    """
    try:
        candidate = engine.propose(job.request)
    except EngineFailure as e:
        return JobResult(error=f"propose: {e}")

    verdict = code_review(candidate, job.request.task, engine)
    if verdict.status == ReviewStatus.REJECT:
        return JobResult(candidate=candidate, verdict=verdict)

    try:
        outcome = environment.evaluate(candidate, job.request.task)
    except EngineFailure as e:
        return JobResult(error=f"evaluate: {e}")
    return JobResult(candidate=candidate, verdict=verdict, outcome=outcome)


class VirtualVisits(Mapping[int, int]):
    """In-flight visit counts per node, read by select() as extra N"""

    def __init__(self):
        self._counts: Dict[int, int] = {}

    def apply(self, path: List[int]) -> None:
        for node_id in path:
            self._counts[node_id] = self._counts.get(node_id, 0) + 1

    def remove(self, path: List[int]) -> None:
        for node_id in path:
            remaining = self._counts.get(node_id, 0) - 1
            if remaining > 0:
                self._counts[node_id] = remaining
            else:
                self._counts.pop(node_id, None)

    def __getitem__(self, node_id: int) -> int:
        return self._counts[node_id]

    def __iter__(self):
        return iter(self._counts)

    def __len__(self) -> int:
        return len(self._counts)


class WorkerPool:
    """
    At most `workers` jobs in flight on a thread pool

    Completions come back in step order within each wake-up, so a
    single-worker run applies results in dispatch order.
    """

    def __init__(self, engine: ProposalEngine, environment: Environment, workers: int = 3):
        if workers < 1:
            raise ValueError("max_parallel_workers must be >= 1")
        self.engine = engine
        self.environment = environment
        self.workers = workers
        self.executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="mcgs-worker")
        self.in_flight: Dict[Future, ExpansionJob] = {}

    @property
    def has_capacity(self) -> bool:
        return len(self.in_flight) < self.workers

    def submit(self, job: ExpansionJob) -> None:
        if not self.has_capacity:
            raise RuntimeError("worker pool is full")
        future = self.executor.submit(run_job, job, self.engine, self.environment)
        self.in_flight[future] = job

    def wait_any(self) -> List[Tuple[ExpansionJob, JobResult]]:
        """
        Block until at least one job completes

        Raises nothing: a job that raised comes back as a JobResult carrying
        a WorkerPanic message.
        """
        if not self.in_flight:
            return []
        done, _ = wait(list(self.in_flight), return_when=FIRST_COMPLETED)
        completed = []
        for future in done:
            job = self.in_flight.pop(future)
            try:
                result = future.result()
            except Exception as e:
                panic = WorkerPanic(f"worker crashed on step {job.step}: {e}")
                result = JobResult(error=str(panic))
            completed.append((job, result))
        completed.sort(key=lambda item: item[0].step)
        return completed

    def drain(self) -> List[Tuple[ExpansionJob, JobResult]]:
        completed = []
        while self.in_flight:
            completed.extend(self.wait_any())
        return completed

    def shutdown(self) -> None:
        self.executor.shutdown(wait=True)

    def __enter__(self) -> 'WorkerPool':
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()
