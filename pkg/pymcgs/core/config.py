"""
Run configuration: a flat `key: value` file over the default search settings
"""
import os
import re
from dataclasses import dataclass, field, fields
from pprint import pprint
from typing import Any, Dict, Optional

from .errors import ConfigError

ENGINES = ("synthetic", "llm")
MODES = ("graph", "tree")
TRUE_WORDS = ("true", "yes", "on", "1")
FALSE_WORDS = ("false", "no", "off", "0")


@dataclass
class RunConfig:
    """
    Settings of one search run

    Omitted keys keep the defaults below. mode = tree turns every
    reference-producing mode off, reducing the search to plain MCTS.
    """
    max_steps: int = 500
    exploration_constant: float = 1.414
    temperature: float = 0.5
    max_parallel_workers: int = 3
    max_draft_num: int = 7
    max_debug_num: int = 20
    branch_top_k: int = 5
    global_top_k: int = 10
    max_history_num: int = 7
    max_ref_num: int = 7
    max_agg_num: int = 7
    ensemble_num: int = 6
    kb_init_ref_prob: float = 0.8

    seed: int = 0
    engine: str = "synthetic"
    task_file: Optional[str] = None
    kb_file: Optional[str] = None
    output_dir: str = "mcgs-run"
    mode: str = "graph"
    intra_branch: bool = True
    cross_branch: bool = True
    aggregation: bool = True
    use_kb: bool = True
    stagnation_window: int = 5
    agg_min_trajectories: int = 5
    agg_cooldown_steps: int = 50
    time_budget: float = 43200.0
    epsilon: float = 1e-6
    improve_normal_weight: float = 0.5
    improve_fe_weight: float = 0.3
    improve_cs_weight: float = 0.2
    bug_rate: float = 0.1
    fusion_mutation_rate: float = 0.1
    fusion_crossover_rate: float = 0.25
    max_expand_children: int = 3

    llm_base_url: str = "https://api.openai.com/v1"
    llm_model: str = "gpt-4o"
    llm_token_env: str = "MCGS_LLM_TOKEN"
    llm_timeout: float = 120.0
    exec_timeout: float = 600.0

    config_file: Optional[str] = field(default=None, compare=False, repr=False)
    key_lines: Dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls) if f.name not in ("config_file", "key_lines")]

    def _where(self, line_number: int) -> str:
        return f"{self.config_file or '<config>'}:{line_number}: "

    def _convert(self, key: str, raw: str, line_number: int) -> Any:
        default = next(f.default for f in fields(self) if f.name == key)
        try:
            if isinstance(default, bool):
                word = raw.lower()
                if word in TRUE_WORDS:
                    return True
                if word in FALSE_WORDS:
                    return False
                raise ValueError(f"expected true/false, got {raw!r}")
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
        except ValueError as e:
            raise ConfigError(f"{self._where(line_number)}{key}: {e}") from None
        if default is None and raw.lower() in ("", "none"):
            return None
        return raw

    def load_line(self, line: str, line_number: int = 0) -> None:
        """
        Load one `key: value  # comment` line

        Raises:
            ConfigError: Malformed line, unknown key or unparsable value
        """
        line = line.split('#', 1)[0].strip()
        if not line:
            return
        match = re.match(r'^([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*)$', line)
        if not match:
            raise ConfigError(f"{self._where(line_number)}expected 'key: value', got {line!r}")

        key, raw = match.group(1), match.group(2).strip()
        if key not in self.keys():
            raise ConfigError(f"{self._where(line_number)}unknown key {key!r}")
        value = self._convert(key, raw, line_number)

        if key in ("task_file", "kb_file") and value and self.config_file and not os.path.isabs(value):
            value = os.path.join(os.path.dirname(os.path.abspath(self.config_file)), value)

        setattr(self, key, value)
        self.key_lines[key] = line_number

    def load(self, config_file: str) -> None:
        """Load and validate a configuration file"""
        self.config_file = config_file
        with open(config_file, 'r') as f:
            for line_number, line in enumerate(f, 1):
                self.load_line(line, line_number)
        self.validate()

    @classmethod
    def from_file(cls, config_file: Optional[str] = None) -> 'RunConfig':
        config = cls()
        if config_file:
            config.load(config_file)
        else:
            config.validate()
        return config

    def override(self, **values: Any) -> None:
        """Apply command-line overrides (None means not given), then revalidate"""
        for key, value in values.items():
            if value is None:
                continue
            if key not in self.keys():
                raise ConfigError(f"unknown key {key!r}")
            setattr(self, key, value)
            self.key_lines.pop(key, None)
        self.validate()

    def _fail(self, key: str, message: str) -> None:
        line_number = self.key_lines.get(key)
        prefix = self._where(line_number) if line_number is not None else ""
        raise ConfigError(f"{prefix}{key}: {message}")

    def validate(self) -> None:
        """
        Raises:
            ConfigError: A value is out of range
        """
        for key in ("max_steps", "max_draft_num", "max_debug_num", "agg_cooldown_steps", "seed"):
            if getattr(self, key) < 0:
                self._fail(key, "must be >= 0")
        for key in ("max_parallel_workers", "branch_top_k", "global_top_k", "max_history_num",
                    "max_ref_num", "ensemble_num", "stagnation_window", "agg_min_trajectories",
                    "max_expand_children"):
            if getattr(self, key) < 1:
                self._fail(key, "must be >= 1")
        if self.max_agg_num < 2:
            self._fail("max_agg_num", "must be >= 2")
        for key in ("exploration_constant", "epsilon", "time_budget", "llm_timeout", "exec_timeout"):
            if getattr(self, key) <= 0:
                self._fail(key, "must be > 0")
        for key in ("kb_init_ref_prob", "bug_rate", "fusion_mutation_rate", "fusion_crossover_rate"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                self._fail(key, "must be within [0, 1]")
        for key in ("improve_normal_weight", "improve_fe_weight", "improve_cs_weight"):
            if getattr(self, key) < 0:
                self._fail(key, "must be >= 0")
        if self.improve_normal_weight + self.improve_fe_weight + self.improve_cs_weight <= 0:
            self._fail("improve_normal_weight", "improve weights must not all be 0")
        if self.engine not in ENGINES:
            self._fail("engine", f"must be one of {', '.join(ENGINES)}")
        if self.mode not in MODES:
            self._fail("mode", f"must be one of {', '.join(MODES)}")

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self.keys()}

    def dump_structure(self) -> None:
        """Display the in-memory structure of the configuration"""
        print(f"Config: {self.config_file or '(defaults)'}")
        pprint(self.to_dict())
