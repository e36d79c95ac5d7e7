from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from conftest import random_tt
from ttpdf.cross import worker_count
from ttpdf.errors import ConfigError
from ttpdf.experiments import (
    PLOT_COLUMNS,
    PRESETS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    config_from_mapping,
    load_config,
    make_grid,
    make_target,
    plot_data,
    preset_configs,
    relative_spread,
    run_experiment,
    summarize_records,
    tt_spread,
)
from ttpdf.targets import TargetDensity


class Gauss2(TargetDensity):
    """Correlated Gaussian on [-4, 4]^2 with the first coordinate as QoI."""

    name = "gauss2"

    def __init__(self, rho=0.5):
        super().__init__([-4.0, -4.0], [4.0, 4.0])
        self.rho = rho

    def evaluate(self, x):
        q = (x[:, 0] ** 2 - 2 * self.rho * x[:, 0] * x[:, 1] + x[:, 1] ** 2) / (1 - self.rho ** 2)
        return -0.5 * q, {"x1": x[:, 0], "x1sq": x[:, 0] ** 2}


def make_gauss(rho=0.5):
    return Gauss2(rho)


def not_a_target():
    return object()


def small_config(tmp_path, **kw):
    base = dict(target="custom", target_options={"factory": "test_experiments:make_gauss", "rho": 0.3},
                n=(24,), delta=1e-3, rho=2, max_sweeps=6, methods=("TT-MH", "TT-rIW"),
                n_samples=(512, 1024), repetitions=2, seed=11, output=str(tmp_path / "out"), workers=2)
    base.update(kw)
    return ExperimentConfig(**base).validate()


def write_ini(path, text):
    path.write_text(text)
    return path


INI = """
[experiment]
name = demo
target = rosenbrock
seed = 3
repetitions = 2

[target]
dim = 2

[cross]
n = 32, 64
delta = 0.01

[sampling]
methods = TT-MH, AM
n_samples = 256
"""


def test_load_config_parses_fields(tmp_path):
    cfg = load_config(write_ini(tmp_path / "a.ini", INI))
    assert cfg.target == "rosenbrock"
    assert cfg.target_options == {"dim": 2}
    assert cfg.n == (32, 64)
    assert cfg.methods == ("TT-MH", "AM")
    assert cfg.n_samples == (256,)
    # the normalized text round-trips
    again = load_config(write_ini(tmp_path / "b.ini", cfg.to_ini()))
    assert again.to_ini() == cfg.to_ini()


def test_inline_comments_are_stripped(tmp_path):
    text = INI.replace("target = rosenbrock", "target = rosenbrock   ; or shock")
    assert load_config(write_ini(tmp_path / "c.ini", text)).target == "rosenbrock"


@pytest.mark.parametrize("section,key,value,field", [
    ("experiment", "repetitions", "0", "experiment.repetitions"),
    ("experiment", "target", "banana", "experiment.target"),
    ("cross", "delta", "-1", "cross.delta"),
    ("cross", "delta", "abc", "cross.delta"),
    ("cross", "local_fraction", "2", "cross.local_fraction"),
    ("cross", "bogus", "1", "cross.bogus"),
    ("sampling", "methods", "TT-XX", "sampling.methods"),
    ("sampling", "n_samples", "1", "sampling.n_samples"),
    ("target", "size", "3", "target.size"),
])
def test_config_errors_name_the_field(section, key, value, field):
    data = {"experiment": {"target": "rosenbrock"}, "target": {}, "cross": {}, "sampling": {}}
    data[section][key] = value
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        config_from_mapping(data)


def test_lattice_sizes_must_be_powers_of_two():
    with pytest.raises(ConfigError, match="power of 2"):
        ExperimentConfig(methods=("TT-qIW",), n_samples=(1000,)).validate()


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        config_from_mapping({"experimnt": {}})


def test_grid_dimensions_must_match_target():
    cfg = ExperimentConfig(target="rosenbrock", target_options={"dim": 3}, n=(8, 8))
    with pytest.raises(ConfigError, match="cross.n"):
        make_grid(cfg, make_target(cfg))


def test_custom_factory(tmp_path):
    cfg = small_config(tmp_path)
    target = make_target(cfg)
    assert isinstance(target, Gauss2) and target.rho == 0.3
    bad = small_config(tmp_path, target_options={"factory": "test_experiments:not_a_target"})
    with pytest.raises(ConfigError, match="target.factory"):
        make_target(bad)
    missing = small_config(tmp_path, target_options={"factory": "no_such_module:f"})
    with pytest.raises(ConfigError, match="cannot import"):
        make_target(missing)


def test_worker_cap_from_environment(monkeypatch):
    monkeypatch.setenv("TTPDF_THREADS", "3")
    assert worker_count() == 3


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def test_run_writes_reports(tmp_path):
    out = run_experiment(small_config(tmp_path))
    records = read_jsonl(out / "results.jsonl")
    assert len(records) == 2 * 2 * 2  # repetitions x methods x sample sizes
    rec = records[0]
    for key in ("study", "repetition", "method", "N", "estimate", "stderr", "tau", "rejection_rate",
                "e_l1", "w_max", "n_evals", "cross_evals", "tt_ranks"):
        assert key in rec
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    assert {r["qoi"] for r in rows} == {"x1", "x1sq"}
    assert all(r["R"] == "2" and r["E_q"] != "" and r["E_TT"] != "" for r in rows)
    # posterior moments of the correlated Gaussian: mean 0 and variance 1
    mh = [r for r in rows if r["method"] == "TT-MH" and r["N"] == "1024"]
    by_q = {r["qoi"]: float(r["mean"]) for r in mh}
    assert abs(by_q["x1"]) < 0.2
    assert by_q["x1sq"] == pytest.approx(1.0, abs=0.2)
    assert (out / "config.ini").exists()


def test_identical_seeds_give_identical_files(tmp_path):
    a = run_experiment(small_config(tmp_path / "a", workers=2))
    b = run_experiment(small_config(tmp_path / "b", workers=1))
    for name in ("results.jsonl", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = run_experiment(small_config(tmp_path / "c", seed=12))
    assert (a / "results.jsonl").read_bytes() != (c / "results.jsonl").read_bytes()


def test_single_repetition_reports_null_error(tmp_path):
    out = run_experiment(small_config(tmp_path, repetitions=1, n_samples=(256,)))
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(r["E_q"] == "" and r["E_TT"] == "" for r in rows)
    assert relative_spread([1.0]) is None
    assert summarize_records(read_jsonl(out / "results.jsonl"), None)[0]["E_q"] is None


def test_phase_times_cover_wall_clock(tmp_path):
    out = run_experiment(small_config(tmp_path, n_samples=(4096,), methods=("TT-MH", "TT-rIW", "AM"),
                                      repetitions=1))
    timings = [t for t in read_jsonl(out / "timings.jsonl") if t["method"] != "total"]
    assert {t["method"] for t in timings} == {"cross", "TT-MH", "TT-rIW", "AM"}
    for t in timings:
        assert sum(t["seconds"].values()) >= 0.95 * t["wall"]


def test_all_methods_run_on_custom_target(tmp_path):
    cfg = small_config(tmp_path, methods=("TT-MH", "TT-rIW", "TT-qIW", "TT-MH-2L", "TT-qIW-2L", "AM"),
                       n_samples=(256,), repetitions=1, am_steps=500)
    records = read_jsonl(run_experiment(cfg) / "results.jsonl")
    assert [r["method"] for r in records] == list(cfg.methods)
    two = [r for r in records if r["method"].endswith("-2L")]
    # with g~ = g the correction only reflects the surrogate error, so it stays small
    for r in two:
        assert r["N0"] == 1024
        for q, corr in r["correction"].items():
            assert r["estimate"][q] == pytest.approx(r["coarse"][q] + corr, rel=1e-12, abs=1e-15)
            assert abs(corr) < 0.1


def test_tt_spread_matches_full_tensor_oracle():
    rng = np.random.default_rng(0)
    tts = [random_tt(rng, (5, 6, 4), (2, 3)) for _ in range(4)]
    fulls = np.array([t.full() for t in tts])
    norm2 = lambda a: float(np.sum(a * a))  # Frobenius norm of nodal values
    mean = fulls.mean(axis=0)
    expected = np.sqrt(sum(norm2(f - mean) for f in fulls) / 3 / norm2(mean))
    assert tt_spread(tts) == pytest.approx(expected, rel=1e-10)
    assert tt_spread(tts[:1]) is None


def test_relative_spread_example():
    assert relative_spread([1.0, 3.0]) == pytest.approx(0.5)
    assert relative_spread([1.0, None]) is None


@pytest.mark.parametrize("name", PRESETS)
def test_desk_presets_validate(name, tmp_path):
    cfgs = preset_configs(name, "desk", root=tmp_path)
    paper = preset_configs(name, "paper", root=tmp_path)
    assert len(cfgs) >= 1 and len(paper) >= len(cfgs)
    for c in cfgs:
        assert c.output.startswith(str(tmp_path / name))
    assert max(max(c.n_samples) for c in cfgs) <= max(max(c.n_samples) for c in paper)


def test_unknown_preset_and_scale():
    with pytest.raises(ConfigError):
        preset_configs("nope")
    with pytest.raises(ConfigError):
        preset_configs("shock-fig1", "huge")


def test_plot_data(tmp_path):
    run_experiment(small_config(tmp_path))
    path = plot_data(tmp_path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == PLOT_COLUMNS
    assert len(rows) == 2 * 2 * 2  # methods x sizes x qois
    assert all(float(r["seconds"]) > 0 for r in rows)
    with pytest.raises(ConfigError):
        plot_data(tmp_path / "empty")
