"""
Ablation runs: no-KB tree, KB tree, KB intra-branch only and full graph search
"""
import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .config import RunConfig
from .engine import TaskSpec, load_task
from .orchestrator import Orchestrator

ABLATIONS: Dict[str, Dict[str, object]] = {
    "tree": {"mode": "tree", "use_kb": False},
    "tree+kb": {"mode": "tree", "use_kb": True},
    "intra+kb": {"mode": "graph", "use_kb": True, "intra_branch": True,
                 "cross_branch": False, "aggregation": False},
    "full": {"mode": "graph", "use_kb": True, "intra_branch": True,
             "cross_branch": True, "aggregation": True},
}


@dataclass
class AblationResult:
    seeds: List[int]
    finals: Dict[str, List[Optional[float]]] = field(default_factory=dict)

    def mean(self, name: str) -> float:
        values = [v for v in self.finals[name] if v is not None]
        return float(np.mean(values)) if values else float("nan")

    def win_rate(self, task: TaskSpec, better: str = "full", worse: str = "tree") -> float:
        """Fraction of seeds where `better` ends strictly ahead of `worse`"""
        wins = 0
        for a, b in zip(self.finals[better], self.finals[worse]):
            if a is not None and (b is None or task.direction.better(a, b)):
                wins += 1
        return wins / len(self.seeds) if self.seeds else 0.0

    def paired_stderr(self, a: str, b: str) -> float:
        """Standard error of the per-seed difference between two variants"""
        diffs = [x - y for x, y in zip(self.finals[a], self.finals[b]) if x is not None and y is not None]
        if len(diffs) < 2:
            return float("nan")
        return float(np.std(diffs, ddof=1) / np.sqrt(len(diffs)))


def ablation_config(base: RunConfig, name: str, seed: int, steps: Optional[int] = None) -> RunConfig:
    config = dataclasses.replace(base, seed=seed, key_lines={})
    for key, value in ABLATIONS[name].items():
        setattr(config, key, value)
    if steps is not None:
        config.max_steps = steps
    config.validate()
    return config


def run_ablation(base: RunConfig, seeds: List[int], steps: Optional[int] = None,
                 task: Optional[TaskSpec] = None, names: Optional[List[str]] = None) -> AblationResult:
    """
    Run every ablation configuration for every seed without writing outputs

    Returns:
        Final best metric per configuration and seed (None if nothing evaluated)
    """
    task = task or load_task(base.task_file)
    result = AblationResult(seeds=list(seeds))
    for name in names or list(ABLATIONS):
        finals = []
        for seed in seeds:
            report = Orchestrator(ablation_config(base, name, seed, steps), task=task, quiet=True).run()
            finals.append(report.best_metric)
        result.finals[name] = finals
    return result
