import json

import numpy as np
import pytest
import yaml

from collab_bandit.cli import TRACE_HEADER, main
from collab_bandit.config import ConfigError, generate_instance, load_config, parse_config
from collab_bandit.model import gap_summary

INSTANCE = {"mu": [[1.0, 1.0], [0.5, 0.5]], "weights": [[0.5, 0.5], [0.5, 0.5]], "sigma": 0.5}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"instance": INSTANCE, "horizon": 5000, "seeds": [3, 4]}))
    return path


def test_minimal_config_defaults():
    cfg = parse_config({"instance": INSTANCE, "horizon": 100})
    assert cfg.algorithm == "cexp2"
    assert cfg.trace == "summary"
    assert cfg.seeds == (0,)
    assert not cfg.full_events


def test_seed_base_and_runs():
    cfg = parse_config({"instance": INSTANCE, "horizon": 100, "seed_base": 10, "runs": 3})
    assert cfg.seeds == (10, 11, 12)


def test_bad_weight_column_named():
    doc = {"instance": {"mu": [[1.0, 0.0], [0.0, 1.0]], "weights": [[0.5, 0.5], [0.4, 0.5]]}, "horizon": 100}
    with pytest.raises(ConfigError, match="instance: weights column 0"):
        parse_config(doc)


@pytest.mark.parametrize("doc, field", [
    ({"instance": INSTANCE, "horizon": 10}, "horizon"),
    ({"instance": INSTANCE}, "horizon"),
    ({"horizon": 100}, "instance"),
    ({"instance": INSTANCE, "horizon": 100, "seeds": []}, "seeds"),
    ({"instance": INSTANCE, "horizon": 100, "seeds": [1, "x"]}, "seeds[1]"),
    ({"instance": INSTANCE, "horizon": 100, "algorithm": "ucb"}, "algorithm"),
    ({"instance": INSTANCE, "horizon": 100, "trace": "all"}, "trace"),
    ({"instance": {"mu": [[1.0]], "weights": [[1.0]], "K": 2}, "horizon": 100}, "instance.K"),
    ({"instance": INSTANCE, "horizon": 100, "colour": 1}, "colour"),
])
def test_config_errors_name_field(doc, field):
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert str(info.value).startswith(field)


def test_instance_from_file(tmp_path):
    (tmp_path / "inst.yaml").write_text(yaml.safe_dump(INSTANCE))
    (tmp_path / "exp.yaml").write_text(yaml.safe_dump({"instance": "inst.yaml", "horizon": 100}))
    cfg = load_config(tmp_path / "exp.yaml")
    assert cfg.instance.sigma == 0.5


def test_generate_instance():
    a = generate_instance(2, 1, 0.5, seed=7)
    assert gap_summary(a).delta_min >= 0.5
    b = generate_instance(2, 1, 0.5, seed=7)
    assert a.to_dict() == b.to_dict()
    c = generate_instance(3, 3, 0.05, seed=1)
    np.testing.assert_allclose(c.weights.sum(axis=0), 1.0, atol=1e-12)


def test_generate_infeasible_floor():
    with pytest.raises(ConfigError, match="10000 attempts"):
        generate_instance(2, 1, 1.5, seed=0)


def test_run_writes_traces_and_summary(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config_file), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["summary.json", "trace_seed3.csv", "trace_seed4.csv"]
    lines = (out / "trace_seed3.csv").read_text().splitlines()
    assert lines[0] == TRACE_HEADER
    summary = json.loads((out / "summary.json").read_text())
    assert summary["aggregate"]["runs"] == 2
    assert [r["seed"] for r in summary["runs"]] == [3, 4]


def test_per_round_trace(config_file, tmp_path):
    out = tmp_path / "out"
    main(["run", "--config", str(config_file), "--out", str(out), "--seeds", "1", "--trace", "round",
          "--horizon", "400"])
    lines = (out / "trace_seed1.csv").read_text().splitlines()
    assert len(lines) == 1 + 400 * 2
    assert lines[1].startswith("1,0,0,")
    assert lines[-1].startswith("400,1,")


def test_outputs_are_byte_identical(config_file, tmp_path, monkeypatch):
    main(["run", "--config", str(config_file), "--out", str(tmp_path / "a")])
    monkeypatch.setenv("COLLAB_BANDIT_OUT", str(tmp_path / "b"))
    main(["run", "--config", str(config_file), "--workers", "2"])
    for name in ("summary.json", "trace_seed3.csv", "trace_seed4.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flags_and_algorithm_override(config_file, tmp_path):
    out = tmp_path / "o"
    main(["run", "--config", str(config_file), "--out", str(out), "--seed-base", "5", "--runs", "2",
          "--algorithm", "wcpe-reg", "--full-events"])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seeds"] == [5, 6]
    assert summary["config"]["algorithm"] == "wcpe-reg"
    assert summary["config"]["full_events"] is True


def test_small_horizon_flag_rejected(config_file, tmp_path, capsys):
    assert main(["run", "--config", str(config_file), "--out", str(tmp_path), "--horizon", "10"]) == 2
    assert "horizon" in capsys.readouterr().err


def test_lower_bounds_single_agent(tmp_path, capsys):
    path = tmp_path / "inst.yaml"
    path.write_text(yaml.safe_dump({"mu": [[1.0], [0.5]], "weights": [[1.0]]}))
    assert main(["lower-bounds", "--instance", str(path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["c_star"] == pytest.approx(4.0, rel=1e-6)
    assert doc["c_tilde_star"] == pytest.approx(8.0, rel=1e-6)
    assert doc["s_star"] == pytest.approx(8.0, rel=1e-6)
    assert doc["sandwich"]["holds"] and doc["sample_bound"]["holds"]


def test_oracle_zero_gap_fails(capsys):
    assert main(["oracle", "--gaps", "[[0.5], [0.0]]"]) == 2
    assert "gaps must be" in capsys.readouterr().err


def test_oracle_inline(capsys):
    assert main(["oracle", "--gaps", "[[0.5, 0.5], [0.5, 0.5]]", "--weights", "[[0.5, 0.5], [0.5, 0.5]]"]) == 0
    assert json.loads(capsys.readouterr().out)["objective"] == pytest.approx(8.0)


def test_generate_subcommand(tmp_path, capsys):
    assert main(["generate", "--K", "2", "--M", "1", "--gap-floor", "0.5", "--seed", "7"]) == 0
    doc = yaml.safe_load(capsys.readouterr().out)
    assert doc["K"] == 2 and doc["M"] == 1
    assert main(["generate", "--K", "2", "--M", "1", "--gap-floor", "2.0"]) == 2


def test_aborted_run_sets_exit_status(config_file, tmp_path, monkeypatch):
    from collab_bandit import cexp2

    def explode(*args):
        raise RuntimeError("oracle offline")

    monkeypatch.setattr(cexp2, "solve_relaxed", explode)
    assert main(["run", "--config", str(config_file), "--out", str(tmp_path / "x")]) == 1
    summary = json.loads((tmp_path / "x" / "summary.json").read_text())
    assert summary["aggregate"]["aborted"] == 2
