import os

import pytest

from pymcgs.core.config import RunConfig
from pymcgs.core.errors import ConfigError


@pytest.fixture
def sample_config():
    config = RunConfig()
    config.load_line("max_steps: 40", 1)
    config.load_line("exploration_constant: 2.0   # wider search", 2)
    config.load_line("intra_branch: off", 3)
    config.load_line("engine: synthetic", 4)
    return config


def test_defaults():
    """Test the default search settings"""
    config = RunConfig()
    assert config.max_steps == 500
    assert config.exploration_constant == 1.414
    assert config.temperature == 0.5
    assert config.max_parallel_workers == 3
    assert config.max_draft_num == 7
    assert config.max_debug_num == 20
    assert config.branch_top_k == 5
    assert config.global_top_k == 10
    assert config.max_history_num == 7
    assert config.max_ref_num == 7
    assert config.max_agg_num == 7
    assert config.ensemble_num == 6
    assert config.kb_init_ref_prob == 0.8
    assert config.time_budget == 43200.0
    config.validate()


def test_load_line(sample_config):
    assert sample_config.max_steps == 40
    assert sample_config.exploration_constant == 2.0
    assert sample_config.intra_branch is False
    assert sample_config.key_lines == {"max_steps": 1, "exploration_constant": 2,
                                       "intra_branch": 3, "engine": 4}


def test_comments_and_blank_lines():
    config = RunConfig()
    config.load_line("", 1)
    config.load_line("   # only a comment", 2)
    assert config == RunConfig()


def test_config_load(tmp_path):
    config_file = tmp_path / "run.conf"
    config_file.write_text(
        "# short run\n"
        "max_steps: 25\n"
        "mode: tree\n"
        "task_file: tasks/toy.json\n"
        "output_dir: out\n"
    )

    config = RunConfig.from_file(str(config_file))
    assert config.max_steps == 25
    assert config.mode == "tree"
    assert config.task_file == os.path.join(str(tmp_path), "tasks/toy.json")
    assert config.output_dir == "out"
    assert config.config_file == str(config_file)


def test_unknown_key_reports_line(tmp_path):
    config_file = tmp_path / "bad.conf"
    config_file.write_text("max_steps: 10\nmax_stepz: 10\n")
    with pytest.raises(ConfigError, match=r"bad.conf:2: unknown key 'max_stepz'"):
        RunConfig.from_file(str(config_file))


def test_malformed_line():
    with pytest.raises(ConfigError, match="expected 'key: value'"):
        RunConfig().load_line("max_steps 10", 3)


@pytest.mark.parametrize("line", ["max_steps: many", "exploration_constant: wide", "aggregation: maybe"])
def test_unparsable_values(line):
    with pytest.raises(ConfigError, match=":7: "):
        RunConfig().load_line(line, 7)


def test_range_errors_point_at_their_line(tmp_path):
    config_file = tmp_path / "range.conf"
    config_file.write_text("seed: 3\nkb_init_ref_prob: 1.5\n")
    with pytest.raises(ConfigError, match=r"range.conf:2: kb_init_ref_prob: must be within \[0, 1\]"):
        RunConfig.from_file(str(config_file))


@pytest.mark.parametrize("values", [
    {"max_agg_num": 1},
    {"max_parallel_workers": 0},
    {"exploration_constant": 0.0},
    {"engine": "oracle"},
    {"mode": "forest"},
    {"improve_normal_weight": 0.0, "improve_fe_weight": 0.0, "improve_cs_weight": 0.0},
    {"max_steps": -1},
])
def test_validate_rejects(values):
    with pytest.raises(ConfigError):
        RunConfig(**values).validate()


def test_override(sample_config):
    """Test command-line overrides skip None and revalidate"""
    sample_config.override(max_steps=None, seed=9, mode="tree")
    assert sample_config.max_steps == 40
    assert sample_config.seed == 9
    assert sample_config.mode == "tree"

    with pytest.raises(ConfigError, match="unknown key"):
        sample_config.override(colour="red")
    with pytest.raises(ConfigError, match="max_parallel_workers"):
        sample_config.override(max_parallel_workers=0)


def test_sample_config_loads():
    sample = os.path.join(os.path.dirname(os.path.dirname(__file__)), "samples", "run.conf")
    config = RunConfig.from_file(sample)
    assert config.max_parallel_workers == 3
    assert config.llm_model == "gpt-4o"


def test_to_dict_and_dump(sample_config, capsys):
    data = sample_config.to_dict()
    assert "config_file" not in data
    assert data["max_steps"] == 40
    assert RunConfig(**data) == sample_config

    sample_config.dump_structure()
    out = capsys.readouterr().out
    assert "Config: (defaults)" in out
    assert "'max_steps': 40" in out
