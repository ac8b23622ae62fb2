"""
Search orchestration: the budgeted MCGS loop, finalization and run outputs
"""
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import click

from .config import RunConfig
from .engine import (
    EnsembleMember,
    Environment,
    EvalOutcome,
    ProposalEngine,
    ReviewStatus,
    TaskSpec,
    job_seed,
    load_task,
    step_rng,
)
from .errors import (BudgetExhausted, EmptyReferencePool, EngineFailure, NoEvaluatedSolution, NoExpandableNode,
                     ReviewReject)
from .events import EVENTS_FILE, EventKind, EventLog
from .graph import MODE_REF_KIND, ExecState, ExpansionMode, OperatorKind, SolutionGraph, SolutionPayload
from .knowledge import InjectionPhase, KnowledgeBase, injection_context, retrieve
from .operators import (
    OperatorBudgets,
    OperatorScheduler,
    ReferenceSet,
    apply_candidate,
    build_reference_set,
    build_request,
    code_review,
)
from .parallel import ExpansionJob, JobResult, VirtualVisits, WorkerPool
from .report import emit_report
from .search import MemoryTiers, SearchPolicyConfig, backpropagate, best_solution, compute_reward, select, update_memory

GRAPH_FILE = "graph.json"
TABLES_FILE = "task_tables.json"

# rng streams per step
STREAM_OPERATOR = 0
STREAM_KB = 1


@dataclass
class RunReport:
    """Summary of a finished run"""
    task_id: str
    steps: int
    best_node: Optional[int]
    best_metric: Optional[float]
    ensemble_node: Optional[int]
    stopped_by: str
    node_counts: Dict[str, int] = field(default_factory=dict)
    operator_usage: Dict[str, int] = field(default_factory=dict)
    mode_usage: Dict[str, int] = field(default_factory=dict)
    engine_failures: int = 0
    run_dir: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "steps": self.steps,
            "best_node": self.best_node,
            "best_metric": self.best_metric,
            "ensemble_node": self.ensemble_node,
            "stopped_by": self.stopped_by,
            "node_counts": dict(self.node_counts),
            "operator_usage": dict(self.operator_usage),
            "mode_usage": dict(self.mode_usage),
            "engine_failures": self.engine_failures,
        }


def build_components(config: RunConfig, task: TaskSpec,
                     workdir: Optional[str] = None) -> Tuple[ProposalEngine, Environment]:
    """Engine and environment for config.engine"""
    if config.engine == "synthetic":
        from .synthetic import SyntheticEngine, SyntheticEnvironment
        environment = SyntheticEnvironment(task, run_seed=config.seed)
        engine = SyntheticEngine(environment, kb_ref_prob=config.kb_init_ref_prob,
                                 bug_rate=config.bug_rate,
                                 fusion_mutation_rate=config.fusion_mutation_rate,
                                 fusion_crossover_rate=config.fusion_crossover_rate)
        return engine, environment
    if config.engine == "llm":
        from .llm import LLMEngine, ScriptEnvironment
        return LLMEngine.from_config(config), ScriptEnvironment(workdir or ".", timeout=config.exec_timeout)
    raise ValueError(f"unknown engine {config.engine}")


class Orchestrator:
    """
    Coordinator owning the graph, memory and event log of one run

    Workers only propose and simulate; every graph mutation happens here,
    one completed job at a time.
    """

    def __init__(self, config: RunConfig, task: Optional[TaskSpec] = None,
                 kb: Optional[KnowledgeBase] = None, engine: Optional[ProposalEngine] = None,
                 environment: Optional[Environment] = None, run_dir: Optional[str] = None,
                 quiet: bool = False, debug: bool = False,
                 on_step: Optional[Callable[['Orchestrator', Optional[int]], None]] = None):
        """
        Args:
            config: Run configuration
            task: Task (loaded from config.task_file when None)
            kb: Knowledge base (loaded from config.kb_file when None and use_kb is set)
            engine: Proposal engine (built from config.engine when None)
            environment: Evaluation environment (built with the engine when None)
            run_dir: Output directory; nothing is written when None
            quiet: Suppress progress output
            debug: Show per-step decisions
            on_step: Called with the new node id after every applied job
        """
        self.config = config
        self.task = task or load_task(config.task_file)
        if kb is None:
            kb = KnowledgeBase.load(config.kb_file) if config.use_kb else KnowledgeBase()
        self.kb = kb
        if engine is None or environment is None:
            built_engine, built_env = build_components(config, self.task, run_dir)
            engine = engine or built_engine
            environment = environment or built_env
        self.engine = engine
        self.environment = environment
        self.run_dir = run_dir
        self.quiet = quiet
        self.debug = debug
        self.on_step = on_step

        self.graph = SolutionGraph()
        self.memory = MemoryTiers(config.branch_top_k, config.global_top_k, self.task.direction)
        self.policy = SearchPolicyConfig(config.exploration_constant, config.epsilon, config.max_steps)
        self.budgets = OperatorBudgets.from_config(config)
        self.scheduler = OperatorScheduler(self.graph, self.budgets, self.task)
        self.virtual = VirtualVisits()
        self.retrieved = retrieve(self.kb, self.task) if config.use_kb else []
        self.events = EventLog()
        self.step = 0
        self.engine_failures = 0
        self.stopped_by = "max_steps"
        self.ensemble_node: Optional[int] = None

    def _warn(self, message: str) -> None:
        if not self.quiet:
            click.secho(message, fg="yellow", err=True)

    def _log_start(self) -> None:
        config = self.config.to_dict()
        config.pop("output_dir", None)
        self.events.append(
            0, EventKind.RUN_STARTED,
            config=config,
            task=self.task.to_dict(),
            kb_version=self.kb.version,
            retrieved=[e.entry_id for e in self.retrieved],
        )
        if not self.quiet:
            click.secho(f"Task {self.task.task_id}: {self.task.metric_name} "
                        f"({self.task.direction.value.lower()}), engine {self.config.engine}, "
                        f"mode {self.config.mode}, KB {self.kb.version}", fg="cyan")
        if self.debug:
            self.config.dump_structure()

    def run(self) -> RunReport:
        """
        Run the search until max_steps, time_budget or no expandable node,
        then finalize and write the run outputs
        """
        if self.run_dir:
            os.makedirs(self.run_dir, exist_ok=True)
            self.events = EventLog(os.path.join(self.run_dir, EVENTS_FILE))
        try:
            self._log_start()
            self.dispatch_parallel()
            best = None
            try:
                best = self.finalize()
            except NoEvaluatedSolution:
                self._warn("No evaluated solutions")
        finally:
            self.events.close()

        if self.run_dir:
            self.write_outputs()
        report = self.report(best)
        if not self.quiet:
            if best is None:
                click.secho("Finished without an evaluated solution", fg="red", err=True)
            else:
                click.secho(f"Best node #{best}: {self.task.metric_name}={report.best_metric:.6f} "
                            f"after {self.step} steps", fg="green")
        return report

    def _time_up(self, started: float) -> bool:
        return time.monotonic() - started >= self.config.time_budget

    def dispatch_parallel(self) -> None:
        """
        Keep up to max_parallel_workers jobs in flight and apply completions

        Virtual visits cover each in-flight job's primary path so concurrent
        selections spread out.
        """
        started = time.monotonic()
        with WorkerPool(self.engine, self.environment, self.config.max_parallel_workers) as pool:
            while True:
                while pool.has_capacity and self.step < self.config.max_steps:
                    if self._time_up(started):
                        self.stopped_by = "time_budget"
                        break
                    job = self.prepare_job(self.step + 1)
                    if job is None:
                        if not pool.in_flight:
                            self.stopped_by = "no_expandable_node"
                        break
                    self.step = job.step
                    pool.submit(job)

                if not pool.in_flight:
                    break
                for job, result in pool.wait_any():
                    self.complete_job(job, result)

    def prepare_job(self, step: int) -> Optional[ExpansionJob]:
        """Select, choose the operator and snapshot the job for one step"""
        self.graph.step = step
        while True:
            try:
                target = select(self.graph, self.policy, self.scheduler.is_expandable, self.virtual)
            except NoExpandableNode:
                return None
            try:
                op, mode = self.scheduler.choose(target, step_rng(self.config.seed, step, STREAM_OPERATOR), step)
            except BudgetExhausted as e:
                self.events.append(step, EventKind.BUDGET_EXHAUSTED, node=e.node_id,
                                   debug_count=self.graph.nodes[e.node_id].debug_count)
                self._warn(f"Debug budget exhausted at node {e.node_id}, marked Failed")
                continue
            break

        if mode == ExpansionMode.MULTI_BRANCH_AGG:
            target = SolutionGraph.ROOT_ID
        parent = target

        refs: Optional[ReferenceSet] = None
        if mode != ExpansionMode.PRIMARY_ONLY:
            try:
                refs = build_reference_set(self.graph, target, mode, self.memory, self.budgets, self.task)
            except EmptyReferencePool:
                mode = ExpansionMode.PRIMARY_ONLY

        snippets = []
        if self.config.use_kb:
            phase = InjectionPhase.INIT if op == OperatorKind.DRAFT else InjectionPhase.SEARCH
            snippets = injection_context(self.retrieved, phase, op,
                                         step_rng(self.config.seed, step, STREAM_KB),
                                         self.config.kb_init_ref_prob)

        request = build_request(self.graph, target, op, refs, self.task, snippets,
                                job_seed(self.config.seed, step))
        job = ExpansionJob(step=step, target=target, parent=parent, operator=op, mode=mode, refs=refs,
                           request=request, kb_ids=[s.entry_id for s in snippets],
                           virtual_path=self.graph.primary_path(parent))
        self.virtual.apply(job.virtual_path)
        self.scheduler.acquire(target, op, mode, step)

        self.events.append(step, EventKind.OPERATOR_CHOSEN, target=target, operator=op.value,
                           mode=mode.value, refs=list(refs.members) if refs else [],
                           rationale=refs.rationale if refs else "", kb=job.kb_ids)
        if self.debug:
            click.echo(f"step {step}: {op.value}/{mode.value} at #{target}"
                       + (f" refs {refs.members}" if refs else ""))
        return job

    def complete_job(self, job: ExpansionJob, result: JobResult) -> Optional[int]:
        """Apply one worker result to the graph; returns the new node id"""
        self.virtual.remove(job.virtual_path)
        self.scheduler.release(job.target, job.operator)

        if result.error is not None:
            self.engine_failures += 1
            self.events.append(job.step, EventKind.ENGINE_FAILURE, target=job.target,
                               operator=job.operator.value, error=result.error)
            self._warn(f"Step {job.step}: engine failure on {job.operator.value}: {result.error}")
            if self.on_step:
                self.on_step(self, None)
            return None

        node_id = self._apply(job.step, job.parent, result.candidate, job.operator, job.mode,
                              job.refs, result, kb_ids=job.kb_ids)
        if self.on_step:
            self.on_step(self, node_id)
        return node_id

    def _apply(self, step: int, parent: int, candidate: SolutionPayload, op: OperatorKind,
               mode: ExpansionMode, refs: Optional[ReferenceSet], result: JobResult,
               kb_ids: Optional[List[str]] = None) -> int:
        verdict = result.verdict
        node_id = apply_candidate(self.graph, parent, candidate, op, mode, refs, verdict, created_step=step)
        node = self.graph.nodes[node_id]

        self.events.append(step, EventKind.NODE_CREATED, node=node_id, parent=parent,
                           branch=node.branch_id, operator=op.value, mode=mode.value,
                           created_step=step, kb=list(kb_ids or []), payload=node.payload.to_dict())
        if refs is not None and refs.members:
            self.events.append(step, EventKind.REFERENCE_EDGES, node=node_id, sources=list(refs.members),
                               ref_kind=MODE_REF_KIND[mode].value)
            if mode == ExpansionMode.MULTI_BRANCH_AGG and op != OperatorKind.ENSEMBLE:
                self.events.append(step, EventKind.AGGREGATION_SPAWNED, node=node_id,
                                   branches=sorted({self.graph.nodes[s].branch_id for s in refs.members}))
        self.events.append(step, EventKind.REVIEW_VERDICT, node=node_id, **verdict.to_dict())

        if verdict.status == ReviewStatus.REJECT:
            rejection = ReviewReject(f"rejected by review: {verdict.reason}")
            outcome = EvalOutcome(ExecState.FAILED, log=str(rejection))
        else:
            outcome = result.outcome
            self.graph.set_outcome(node_id, outcome.status, outcome.metric)
        self.events.append(step, EventKind.SIMULATED, node=node_id, state=node.state.value,
                           metric=node.metric, log=outcome.log[:200])

        reward = compute_reward(self.graph.nodes[parent], node, self.task,
                                review_warned=verdict.status == ReviewStatus.WARN)
        path = backpropagate(self.graph, node_id, reward)
        self.events.append(step, EventKind.BACKPROP, node=node_id, path=path, reward=reward.value,
                           components=reward.components)

        if node.state == ExecState.EVALUATED:
            previous_best = self.memory.global_tier[0] if self.memory.global_tier else None
            update_memory(self.memory, node, self.task)
            self.events.append(step, EventKind.MEMORY_UPDATE, node=node_id, branch=node.branch_id,
                               branch_tier=self.memory.branch_tier(node.branch_id),
                               global_tier=list(self.memory.global_tier))
            if self.memory.global_tier[0] == node_id and previous_best != node_id and not self.quiet:
                click.secho(f"Step {step}: new best #{node_id} {self.task.metric_name}={node.metric:.6f} "
                            f"({op.value}/{mode.value})", fg="green")

        if self.debug:
            click.echo(f"  {node}")
        return node_id

    def finalize(self) -> int:
        """
        Ensemble the global tier's top members under v0 and close the graph

        Returns:
            The best node of the run, ensemble node included

        Raises:
            NoEvaluatedSolution: Nothing was ever evaluated
        """
        step = self.step + 1
        members = self.memory.global_tier[:self.config.ensemble_num]
        if len(members) >= 2 and not self.graph.finalized:
            self.graph.step = step
            ensemble_members = [EnsembleMember(self.graph.nodes[m].payload, self.graph.nodes[m].metric)
                                for m in members]
            try:
                candidate = self.engine.ensemble(ensemble_members, self.task, job_seed(self.config.seed, step))
                verdict = code_review(candidate, self.task, self.engine)
                outcome = None
                if verdict.status != ReviewStatus.REJECT:
                    outcome = self.environment.evaluate(candidate, self.task)
            except EngineFailure as e:
                self.engine_failures += 1
                self.events.append(step, EventKind.ENGINE_FAILURE, target=SolutionGraph.ROOT_ID,
                                   operator=OperatorKind.ENSEMBLE.value, error=str(e))
                self._warn(f"Ensemble failed: {e}")
            else:
                # tree mode has no reference edges, so the ensemble hangs off v0 alone
                if self.config.mode == "tree":
                    mode, refs = ExpansionMode.PRIMARY_ONLY, None
                else:
                    mode = ExpansionMode.MULTI_BRANCH_AGG
                    refs = ReferenceSet(mode, list(members), f"ensemble of the global top {len(members)}")
                self.ensemble_node = self._apply(step, SolutionGraph.ROOT_ID, candidate, OperatorKind.ENSEMBLE,
                                                 mode, refs,
                                                 JobResult(candidate=candidate, verdict=verdict, outcome=outcome))
                if self.on_step:
                    self.on_step(self, self.ensemble_node)

        self.graph.finalize()
        best = None
        if self.memory.global_tier:
            best = best_solution(self.memory, self.task)
        self.events.append(step, EventKind.FINALIZED, best=best,
                           metric=self.memory.metric_of(best) if best is not None else None,
                           ensemble=self.ensemble_node, stopped_by=self.stopped_by)
        if best is None:
            raise NoEvaluatedSolution("no evaluated solution")
        return best

    def write_outputs(self) -> None:
        """Graph snapshot, synthetic oracle tables and the report files"""
        with open(os.path.join(self.run_dir, GRAPH_FILE), 'w') as f:
            f.write(self.graph.to_json())
        if hasattr(self.environment, "save_tables"):
            self.environment.save_tables(os.path.join(self.run_dir, TABLES_FILE))
        emit_report(self.run_dir)

    def report(self, best: Optional[int]) -> RunReport:
        node_counts: Dict[str, int] = {}
        operator_usage: Dict[str, int] = {}
        mode_usage: Dict[str, int] = {}
        for node in self.graph.nodes.values():
            if node.is_root:
                continue
            node_counts[node.state.value] = node_counts.get(node.state.value, 0) + 1
            operator_usage[node.operator_used.value] = operator_usage.get(node.operator_used.value, 0) + 1
            mode_usage[node.mode.value] = mode_usage.get(node.mode.value, 0) + 1
        return RunReport(
            task_id=self.task.task_id,
            steps=self.step,
            best_node=best,
            best_metric=self.memory.metric_of(best) if best is not None else None,
            ensemble_node=self.ensemble_node,
            stopped_by=self.stopped_by,
            node_counts=dict(sorted(node_counts.items())),
            operator_usage=dict(sorted(operator_usage.items())),
            mode_usage=dict(sorted(mode_usage.items())),
            engine_failures=self.engine_failures,
            run_dir=self.run_dir,
        )


def run(config: RunConfig, run_dir: Optional[str] = None, **kwargs: Any) -> RunReport:
    """Build an Orchestrator for config and run it"""
    return Orchestrator(config, run_dir=run_dir if run_dir is not None else config.output_dir, **kwargs).run()
