"""
Deterministic synthetic task environment and proposal engine

A design is an integer vector of length D with values in [0, K-1]. Its
metric is a sum of per-coordinate table values plus bonuses for matched
coordinate pairs, with optional seeded Gaussian noise. An out-of-range
coordinate makes the design crash (Buggy).
"""
import json
from collections import Counter
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .engine import (
    Direction,
    EnsembleMember,
    Environment,
    EvalOutcome,
    ProposalEngine,
    ProposalRequest,
    ReviewVerdict,
    TaskSpec,
)
from .errors import EngineFailure, TooFewMembers
from .graph import ExecState, OperatorKind, SolutionPayload

ROLES = ("model", "feature", "strategy", "plain")
PAIR_COUNT = 3
BOUNDARY_FLAG_RATE = 0.25


def default_roles(dims: int) -> List[str]:
    """Split the coordinates into equal model/feature/strategy/plain blocks"""
    return [ROLES[d * len(ROLES) // dims] for d in range(dims)]


@dataclass
class SyntheticDesign:
    coords: List[int]
    levels: int
    metric_name: str

    @property
    def invalid_coords(self) -> List[int]:
        return [d for d, v in enumerate(self.coords) if not 0 <= v < self.levels]

    @property
    def is_valid(self) -> bool:
        return not self.invalid_coords

    def to_artifact(self) -> Dict[str, Any]:
        return {"coords": [int(v) for v in self.coords], "metric_name": self.metric_name}

    @classmethod
    def from_payload(cls, payload: SolutionPayload, task: TaskSpec) -> 'SyntheticDesign':
        """
        Parse a payload artifact into a design

        Raises:
            ValueError: If the artifact is not a design of the task's dimension
        """
        artifact = payload.artifact
        if not isinstance(artifact, dict) or "coords" not in artifact:
            raise ValueError("artifact is not a design")
        coords = artifact["coords"]
        if not isinstance(coords, list) or len(coords) != task.dims:
            raise ValueError(f"design must have {task.dims} coordinates")
        if any(isinstance(v, bool) or not isinstance(v, int) for v in coords):
            raise ValueError("design coordinates must be integers")
        return cls(coords=list(coords), levels=task.levels,
                   metric_name=str(artifact.get("metric_name", "")))


class SyntheticEnvironment(Environment):
    """
    Seeded landscape for one task

    Tables are generated once from task.seed. Planted optima force the best
    value of a coordinate. Pair bonuses sit on the runner-up values of
    unplanted coordinates and outweigh what both coordinates give up, so the
    optimum is the coordinate-wise best design with every pair switched on.
    """

    def __init__(self, task: TaskSpec, run_seed: int = 0):
        self.task = task
        self.run_seed = run_seed
        self.dims = task.dims
        self.levels = task.levels
        self.roles = list(task.roles) if task.roles else default_roles(task.dims)
        if len(self.roles) != self.dims:
            raise ValueError(f"task {task.task_id}: {len(self.roles)} roles for {self.dims} coordinates")

        direction = task.direction
        rng = np.random.default_rng(task.seed)
        tables = rng.uniform(0.1, 0.9, size=(self.dims, self.levels)) / self.dims

        for d, value in sorted(task.planted_optima.items()):
            if not (0 <= d < self.dims and 0 <= value < self.levels):
                raise ValueError(f"task {task.task_id}: planted optimum {d}={value} out of range")
            best = self._best_index(tables[d], direction)
            tables[d][value], tables[d][best] = tables[d][best], tables[d][value]

        self.tables: List[List[float]] = [[float(v) for v in row] for row in tables]
        self.best_values: List[int] = [self._best_index(tables[d], direction) for d in range(self.dims)]
        self.runner_up_values: List[int] = [self._runner_up_index(tables[d], direction)
                                            for d in range(self.dims)]

        self.pairs: List[Tuple[int, int, int, int, float]] = []
        free = [d for d in range(self.dims) if d not in task.planted_optima]
        if len(free) >= 2 and self.levels >= 2:
            for _ in range(PAIR_COUNT):
                d1, d2 = sorted(int(d) for d in rng.choice(free, size=2, replace=False))
                cost = self._gap(d1) + self._gap(d2)
                bonus = (cost + float(rng.uniform(0.01, 0.03))) * direction.sign
                self.pairs.append((d1, self.runner_up_values[d1], d2, self.runner_up_values[d2], bonus))

        self.boundary_flags: List[bool] = [bool(f) for f in rng.random(self.dims) < BOUNDARY_FLAG_RATE]

    @staticmethod
    def _best_index(row, direction: Direction) -> int:
        return int(np.argmax(row)) if direction == Direction.MAXIMIZE else int(np.argmin(row))

    @staticmethod
    def _runner_up_index(row, direction: Direction) -> int:
        order = np.argsort(-np.asarray(row) * direction.sign, kind="stable")
        return int(order[1]) if len(order) > 1 else int(order[0])

    def _gap(self, d: int) -> float:
        """What coordinate d loses moving from its best value to its runner-up"""
        return abs(self.tables[d][self.best_values[d]] - self.tables[d][self.runner_up_values[d]])

    def role_indices(self, role: str) -> List[int]:
        indices = [d for d, r in enumerate(self.roles) if r == role]
        return indices or list(range(self.dims))

    def score(self, coords: List[int]) -> float:
        """Noise-free metric of a valid design"""
        total = 0.0
        for d, v in enumerate(coords):
            total += self.tables[d][v]
        for d1, v1, d2, v2, bonus in self.pairs:
            if coords[d1] == v1 and coords[d2] == v2:
                total += bonus
        return total

    def optimum(self) -> Tuple[List[int], float]:
        coords = list(self.best_values)
        for d1, v1, d2, v2, _ in self.pairs:
            coords[d1], coords[d2] = v1, v2
        return coords, self.score(coords)

    def evaluate(self, payload: SolutionPayload, task: TaskSpec) -> EvalOutcome:
        try:
            design = SyntheticDesign.from_payload(payload, task)
        except ValueError as e:
            return EvalOutcome(ExecState.FAILED, log=f"cannot load design: {e}")

        invalid = design.invalid_coords
        if invalid:
            return EvalOutcome(ExecState.BUGGY,
                               log=f"crash: coordinates {invalid} out of range [0, {self.levels - 1}]")

        metric = self.score(design.coords)
        if task.eval_noise_sigma > 0:
            noise_rng = np.random.default_rng([task.seed, self.run_seed] + list(design.coords))
            metric += float(noise_rng.normal(0.0, task.eval_noise_sigma))
        return EvalOutcome(ExecState.EVALUATED, metric=metric, log=f"{task.metric_name}={metric:.6f}")

    def review(self, candidate: SolutionPayload, task: TaskSpec) -> ReviewVerdict:
        """Rule-based review: structure and metric name reject, range and boundary flags warn"""
        try:
            design = SyntheticDesign.from_payload(candidate, task)
        except ValueError as e:
            return ReviewVerdict.reject(f"malformed artifact: {e}")
        if design.metric_name != task.metric_name:
            return ReviewVerdict.reject("metric-task mismatch")

        warnings = [f"coordinate {d} out of range" for d in design.invalid_coords]
        for d, flagged in enumerate(self.boundary_flags):
            if flagged and design.coords[d] in (0, self.levels - 1):
                warnings.append(f"coordinate {d} at flagged boundary value {design.coords[d]}")
        return ReviewVerdict.warn(warnings) if warnings else ReviewVerdict.passed()

    def tables_document(self) -> Dict[str, Any]:
        coords, metric = self.optimum()
        return {
            "task_id": self.task.task_id,
            "task_seed": self.task.seed,
            "run_seed": self.run_seed,
            "direction": self.task.direction.value,
            "noise_sigma": self.task.eval_noise_sigma,
            "dims": self.dims,
            "levels": self.levels,
            "roles": list(self.roles),
            "tables": self.tables,
            "pairs": [{"coords": [d1, d2], "values": [v1, v2], "bonus": bonus}
                      for d1, v1, d2, v2, bonus in self.pairs],
            "boundary_flags": list(self.boundary_flags),
            "optimum": {"coords": coords, "metric": metric},
        }

    def save_tables(self, path: str) -> None:
        with open(path, 'w') as f:
            json.dump(self.tables_document(), f, indent=2)


def ensemble_combine(env: SyntheticEnvironment, members: List[EnsembleMember],
                     task: TaskSpec) -> SolutionPayload:
    """
    Coordinate-wise majority vote

    Ties go to the value held by the highest-ranked (best metric) member.
    """
    if len(members) < 2:
        raise TooFewMembers(f"ensemble needs at least 2 members, got {len(members)}")

    ranked = sorted(members, key=lambda m: -task.direction.sign * m.metric)
    designs = [SyntheticDesign.from_payload(m.payload, task) for m in ranked]

    coords = []
    for d in range(task.dims):
        counts = Counter(design.coords[d] for design in designs)
        top = max(counts.values())
        tied = {v for v, c in counts.items() if c == top}
        coords.append(next(design.coords[d] for design in designs if design.coords[d] in tied))

    design = SyntheticDesign(coords=coords, levels=task.levels, metric_name=task.metric_name)
    return SolutionPayload(
        plan=f"Ensemble of {len(members)} solutions by coordinate-wise majority vote",
        artifact=design.to_artifact(),
        analysis="ties resolved toward the best-scoring member",
    )


class SyntheticEngine(ProposalEngine):
    """
    Seeded proposal engine over SyntheticDesign artifacts

    Every proposal is a pure function of the request (its seed included).
    """

    def __init__(self, env: SyntheticEnvironment, kb_ref_prob: float = 0.8,
                 bug_rate: float = 0.1, fusion_mutation_rate: float = 0.1,
                 fusion_crossover_rate: float = 0.25):
        self.env = env
        self.kb_ref_prob = kb_ref_prob
        self.bug_rate = bug_rate
        self.fusion_mutation_rate = fusion_mutation_rate
        self.fusion_crossover_rate = fusion_crossover_rate

    def _design(self, coords: List[int], task: TaskSpec) -> SyntheticDesign:
        return SyntheticDesign(coords=[int(v) for v in coords], levels=task.levels,
                               metric_name=task.metric_name)

    def _inject_bug(self, coords: List[int], rng: np.random.Generator, task: TaskSpec) -> Optional[int]:
        if rng.random() >= self.bug_rate:
            return None
        d = int(rng.integers(0, task.dims))
        coords[d] = int(task.levels + rng.integers(0, 4))
        return d

    def _target_coords(self, request: ProposalRequest) -> List[int]:
        try:
            return list(SyntheticDesign.from_payload(request.target_payload, request.task).coords)
        except ValueError as e:
            raise EngineFailure(f"{request.operator.value} needs a design target: {e}") from None

    def _draft(self, request: ProposalRequest, rng: np.random.Generator) -> Tuple[List[int], str]:
        task = request.task
        coords = [int(v) for v in rng.integers(0, task.levels, size=task.dims)]
        applied = []
        for snippet in request.kb_snippets:
            if not snippet.recommendation:
                continue
            if rng.random() < self.kb_ref_prob:
                for d, v in sorted(snippet.recommendation.items()):
                    if 0 <= d < task.dims:
                        coords[d] = int(v)
                applied.append(snippet.entry_id)
        note = f"drafted from scratch; knowledge used: {applied}" if applied else "drafted from scratch"
        return coords, note

    def _resample(self, request: ProposalRequest, rng: np.random.Generator, role: str) -> Tuple[List[int], str]:
        coords = self._target_coords(request)
        indices = self.env.role_indices(role)
        d = indices[int(rng.integers(0, len(indices)))]
        value = int(rng.integers(0, request.task.levels))
        source = "resampled"
        for snippet in request.kb_snippets:
            if snippet.recommendation and d in snippet.recommendation:
                if rng.random() < self.kb_ref_prob:
                    value = int(snippet.recommendation[d])
                    source = f"set from {snippet.entry_id}"
        coords[d] = value
        return coords, f"{role} coordinate {d} {source} -> {value}"

    def _improve_normal(self, request: ProposalRequest, rng: np.random.Generator) -> Tuple[List[int], str]:
        task = request.task
        coords = self._target_coords(request)
        plain = self.env.role_indices("plain")
        d = plain[int(rng.integers(0, len(plain)))]
        step = 1 if rng.random() < 0.5 else -1

        guide = self._best_reference(request)
        if guide is not None:
            target = guide[d]
            if 0 <= target < task.levels and target != coords[d]:
                step = 1 if target > coords[d] else -1

        value = coords[d] + step
        if not 0 <= value < task.levels:
            value = coords[d] - step
        moved = value - coords[d]
        coords[d] = value
        return coords, f"plain coordinate {d} moved by {moved:+d}"

    def _best_reference(self, request: ProposalRequest) -> Optional[List[int]]:
        """Coords of the best evaluated reference that beats the target, if any"""
        direction = request.task.direction
        best = None
        best_metric = request.target_metric
        for ref in request.reference_payloads:
            if ref.state != ExecState.EVALUATED or ref.metric is None:
                continue
            if best_metric is None or direction.better(ref.metric, best_metric):
                try:
                    best = SyntheticDesign.from_payload(ref.payload, request.task).coords
                except ValueError:
                    continue
                best_metric = ref.metric
        return best

    def _fusion(self, request: ProposalRequest, rng: np.random.Generator) -> Tuple[List[int], str]:
        task = request.task
        sources: List[Tuple[float, List[int]]] = []
        if request.target_metric is not None:
            try:
                sources.append((request.target_metric,
                                SyntheticDesign.from_payload(request.target_payload, task).coords))
            except ValueError:
                pass
        for ref in request.reference_payloads:
            if ref.state == ExecState.EVALUATED and ref.metric is not None:
                try:
                    sources.append((ref.metric, SyntheticDesign.from_payload(ref.payload, task).coords))
                except ValueError:
                    continue

        if not sources:
            coords = [int(v) for v in rng.integers(0, task.levels, size=task.dims)]
            return coords, "nothing to fuse; drafted from scratch"

        best = 0
        for i, (metric, _) in enumerate(sources):
            if task.direction.better(metric, sources[best][0]):
                best = i
        best_metric, best_coords = sources[best]
        donors = [coords for i, (_, coords) in enumerate(sources) if i != best]

        # crossover pulls single coordinates from the other sources, then mutation
        coords = list(best_coords)
        crossed, mutated = [], []
        for d in range(task.dims):
            if donors and rng.random() < self.fusion_crossover_rate:
                donor = donors[int(rng.integers(0, len(donors)))]
                if donor[d] != coords[d]:
                    coords[d] = int(donor[d])
                    crossed.append(d)
            if rng.random() < self.fusion_mutation_rate:
                coords[d] = int(rng.integers(0, task.levels))
                mutated.append(d)
        return coords, (f"fused {len(sources)} sources around metric {best_metric:.4f}; "
                        f"crossed {crossed}; mutated {mutated}")

    def propose(self, request: ProposalRequest) -> SolutionPayload:
        rng = np.random.default_rng(request.seed)
        task = request.task
        op = request.operator
        bug = None

        if op == OperatorKind.DRAFT:
            coords, note = self._draft(request, rng)
            bug = self._inject_bug(coords, rng, task)
        elif op == OperatorKind.DEBUG:
            coords = self._target_coords(request)
            repaired = [d for d, v in enumerate(coords) if not 0 <= v < task.levels]
            coords = [min(max(v, 0), task.levels - 1) for v in coords]
            note = f"clamped coordinates {repaired}"
        elif op == OperatorKind.IMPROVE_NORMAL:
            coords, note = self._improve_normal(request, rng)
            bug = self._inject_bug(coords, rng, task)
        elif op == OperatorKind.IMPROVE_FE:
            coords, note = self._resample(request, rng, "feature")
            bug = self._inject_bug(coords, rng, task)
        elif op == OperatorKind.IMPROVE_CS:
            coords, note = self._resample(request, rng, "strategy")
            bug = self._inject_bug(coords, rng, task)
        elif op == OperatorKind.FUSION:
            coords, note = self._fusion(request, rng)
        elif op == OperatorKind.ENSEMBLE:
            members = [EnsembleMember(r.payload, r.metric) for r in request.reference_payloads
                       if r.metric is not None]
            return ensemble_combine(self.env, members, task)
        else:
            raise EngineFailure(f"operator {op.value} does not propose candidates")

        analysis = note if bug is None else f"{note}; coordinate {bug} corrupted"
        return SolutionPayload(
            plan=f"{op.value} on a {task.dims}-coordinate design",
            artifact=self._design(coords, task).to_artifact(),
            analysis=analysis,
        )

    def review(self, candidate: SolutionPayload, task: TaskSpec) -> ReviewVerdict:
        return self.env.review(candidate, task)

    def ensemble(self, members: List[EnsembleMember], task: TaskSpec, seed: int) -> SolutionPayload:
        return ensemble_combine(self.env, members, task)
