"""Experiment driver: configuration files, repeated runs, reports and presets.

A study is described by an INI file with the sections ``[experiment]``,
``[target]``, ``[cross]`` and ``[sampling]`` (see :data:`SCHEMA`). Running it
builds one TT surrogate per repetition and applies every requested estimator
for every sample size. The output directory receives

* ``results.jsonl``: one record per repetition, method and sample size;
* ``summary.csv``: aggregates over repetitions, one row per method, sample
  size and quantity of interest;
* ``timings.jsonl``: wall-clock seconds per phase, kept apart so that the
  two files above are byte-identical for identical seeds;
* ``config.ini``: the normalized configuration.
"""

from __future__ import annotations

import ast
import configparser
import csv
import importlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baseline import AMConfig, am_run
from .cd import CDSampler
from .cross import CrossConfig, cross_approximate, index_function, worker_count
from .errors import ConfigError
from .estimators import (
    METHODS,
    estimate_record,
    iact,
    importance_estimate,
    lemma_diagnostics,
    mh_correct,
    two_level_iw,
    two_level_mh,
)
from .qmc import LatticeRule, generating_vector
from .targets import Diffusion, Rosenbrock, ShockAbsorber, TargetDensity
from .tt import TTTensor

logger = logging.getLogger(__name__)

TARGETS = ("shock", "rosenbrock", "diffusion", "custom")
PRESETS = ("shock-fig1", "shock-table2", "rosen-table3", "diffusion-fig6")
SCALES = ("desk", "paper")

#: target options accepted in the ``[target]`` section, with their types
TARGET_OPTIONS = {
    "shock": {"covariates": int, "covariate_seed": int},
    "rosenbrock": {"dim": int},
    "diffusion": {"dim": int, "h": float, "nu": float, "sigma2": float, "theta0": float,
                  "m0": int, "noise": bool, "noise_seed": int, "coarsening": int},
}

#: keys of the fixed sections and the corresponding config attributes
SCHEMA = {
    "experiment": {"name": "name", "target": "target", "seed": "seed",
                   "repetitions": "repetitions", "output": "output", "workers": "workers"},
    "cross": {"n": "n", "delta": "delta", "rho": "rho", "local_fraction": "local_fraction",
              "init_rank": "init_rank", "max_sweeps": "max_sweeps", "max_evals": "max_evals"},
    "sampling": {"methods": "methods", "n_samples": "n_samples", "n0": "n0",
                 "am_steps": "am_steps", "chunk": "chunk"},
}


@dataclass
class ExperimentConfig:
    """One study.

    Attributes
    ----------
    name : str
        Label stored in every record.
    target : {"shock", "rosenbrock", "diffusion", "custom"}
    target_options : dict
        Constructor options of the target; for ``"custom"`` the key
        ``factory = module:callable`` names a callable returning a
        :class:`~ttpdf.targets.TargetDensity` and the other keys are passed
        to it as keyword arguments.
    n : tuple of int, optional
        Grid size per dimension (one value is broadcast); ``None`` uses the
        target's default sizes.
    delta, rho, local_fraction, init_rank, max_sweeps, max_evals
        TT cross settings, see :class:`~ttpdf.cross.CrossConfig`.
    methods : tuple of str
        Estimators from :data:`~ttpdf.estimators.METHODS`.
    n_samples : tuple of int
        Sample sizes ``N``; two-level methods use ``N_1 = N``.
    n0 : int, optional
        Coarse sample size of two-level methods, ``4 N`` if omitted.
    am_steps : int, optional
        Length of the single adaptive Metropolis chain per repetition; if
        omitted, one chain of length ``N`` is run for every sample size.
    repetitions : int
        Number of independent repetitions ``R``.
    seed : int
    output : str
        Output directory.
    workers : int
        Cap on concurrently running repetitions (and cross workers).
    chunk : int
        Batch size of target evaluations on samples.
    """

    target: str = "rosenbrock"
    target_options: dict = field(default_factory=dict)
    name: str = "study"
    n: Optional[tuple] = None
    delta: float = 1e-2
    rho: int = 4
    local_fraction: float = 0.5
    init_rank: int = 2
    max_sweeps: int = 20
    max_evals: Optional[int] = None
    methods: tuple = ("TT-MH",)
    n_samples: tuple = (1 << 12,)
    n0: Optional[int] = None
    am_steps: Optional[int] = None
    repetitions: int = 1
    seed: int = 0
    output: str = "ttpdf-out"
    workers: int = field(default_factory=worker_count)
    chunk: int = 1 << 14

    def validate(self) -> "ExperimentConfig":
        """Check every field; raises :class:`ConfigError` naming the offending one."""
        if self.target not in TARGETS:
            raise ConfigError(f"experiment.target: expected one of {TARGETS}, got {self.target!r}")
        if self.target == "custom":
            if "factory" not in self.target_options:
                raise ConfigError("target.factory: required for custom targets (module:callable)")
        else:
            allowed = TARGET_OPTIONS[self.target]
            for key in self.target_options:
                if key not in allowed:
                    raise ConfigError(
                        f"target.{key}: unknown option for target {self.target!r}; "
                        f"allowed: {sorted(allowed)}"
                    )
        if self.repetitions < 1:
            raise ConfigError("experiment.repetitions: must be at least 1")
        if self.workers < 1:
            raise ConfigError("experiment.workers: must be at least 1")
        if self.n is not None and any(int(v) < 2 for v in self.n):
            raise ConfigError("cross.n: every grid size must be at least 2")
        if not self.delta > 0:
            raise ConfigError("cross.delta: must be positive")
        if self.rho < 0:
            raise ConfigError("cross.rho: must be nonnegative")
        if not 0 <= self.local_fraction <= 1:
            raise ConfigError("cross.local_fraction: must lie in [0, 1]")
        if self.init_rank < 1:
            raise ConfigError("cross.init_rank: must be at least 1")
        if self.max_sweeps < 1:
            raise ConfigError("cross.max_sweeps: must be at least 1")
        if self.max_evals is not None and self.max_evals < 1:
            raise ConfigError("cross.max_evals: must be positive")
        if not self.methods:
            raise ConfigError("sampling.methods: at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"sampling.methods: unknown method {m!r}; allowed: {METHODS}")
        if not self.n_samples or any(int(v) < 2 for v in self.n_samples):
            raise ConfigError("sampling.n_samples: sample sizes must be at least 2")
        lattice = any(m in ("TT-qIW", "TT-qIW-2L") for m in self.methods)
        if lattice:
            for v in self.n_samples:
                if v & (v - 1):
                    raise ConfigError(f"sampling.n_samples: {v} is not a power of 2 (needed by TT-qIW)")
            if self.n0 is not None and self.n0 & (self.n0 - 1):
                raise ConfigError(f"sampling.n0: {self.n0} is not a power of 2 (needed by TT-qIW-2L)")
        if self.n0 is not None and self.n0 < 1:
            raise ConfigError("sampling.n0: must be positive")
        if self.am_steps is not None and self.am_steps < 2:
            raise ConfigError("sampling.am_steps: must be at least 2")
        if self.chunk < 1:
            raise ConfigError("sampling.chunk: must be positive")
        return self

    def to_ini(self) -> str:
        """Normalized configuration text, readable by :func:`load_config`."""
        cp = configparser.ConfigParser()
        cp.optionxform = str

        def fmt(v):
            if isinstance(v, (tuple, list)):
                return ", ".join(str(x) for x in v)
            return repr(v) if isinstance(v, float) else str(v)

        for section, keys in SCHEMA.items():
            cp[section] = {}
            for key, attr in keys.items():
                value = getattr(self, attr)
                if value is None:
                    continue
                if attr == "workers":
                    continue
                cp[section][key] = fmt(value)
        cp["target"] = {k: fmt(v) for k, v in sorted(self.target_options.items())}
        lines = []
        for section in ("experiment", "target", "cross", "sampling"):
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _parse_field(section: str, key: str, text: str):
    attr = SCHEMA[section][key]
    try:
        if attr in ("name", "target", "output"):
            return text.strip()
        if attr == "n":
            return None if text.strip().lower() == "default" else _parse_ints(text)
        if attr == "n_samples":
            return _parse_ints(text)
        if attr == "methods":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        if attr in ("delta", "local_fraction"):
            return float(text)
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def _parse_target_option(target: str, key: str, text: str):
    if target == "custom":
        if key == "factory":
            return text.strip()
        try:
            return ast.literal_eval(text.strip())
        except (ValueError, SyntaxError):
            return text.strip()
    kind = TARGET_OPTIONS.get(target, {}).get(key)
    if kind is None:
        allowed = sorted(TARGET_OPTIONS.get(target, {}))
        raise ConfigError(f"target.{key}: unknown option for target {target!r}; allowed: {allowed}")
    try:
        return _parse_bool(text) if kind is bool else kind(text)
    except ValueError as exc:
        raise ConfigError(f"target.{key}: {exc}") from None


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Build a validated config from ``{section: {key: text}}``."""
    unknown = set(data) - set(SCHEMA) - {"target", "DEFAULT"}
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    kwargs = {}
    for section, keys in SCHEMA.items():
        for key, text in data.get(section, {}).items():
            if key not in keys:
                raise ConfigError(f"{section}.{key}: unknown key; allowed: {sorted(keys)}")
            kwargs[keys[key]] = _parse_field(section, key, text)
    target = kwargs.get("target", ExperimentConfig.target)
    options = {k: _parse_target_option(target, k, v) for k, v in data.get("target", {}).items()}
    return ExperimentConfig(target_options=options, **kwargs).validate()


def load_config(path) -> ExperimentConfig:
    """Read an INI study description."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping({s: dict(cp[s]) for s in cp.sections()})


def make_target(cfg: ExperimentConfig) -> TargetDensity:
    """Instantiate the target described by ``cfg``."""
    o = dict(cfg.target_options)
    if cfg.target == "shock":
        kw = {"n_cov": o.get("covariates", 2)}
        if "covariate_seed" in o:
            kw["seed"] = o["covariate_seed"]
        return ShockAbsorber(**kw)
    if cfg.target == "rosenbrock":
        return Rosenbrock(o.get("dim", 2))
    if cfg.target == "diffusion":
        rename = {"dim": "d", "noise_seed": "seed"}
        return Diffusion(**{rename.get(k, k): v for k, v in o.items()})
    spec = o.pop("factory")
    module, _, attr = spec.partition(":")
    try:
        factory = getattr(importlib.import_module(module), attr)
    except (ImportError, AttributeError, ValueError) as exc:
        raise ConfigError(f"target.factory: cannot import {spec!r}: {exc}") from None
    target = factory(**o)
    if not isinstance(target, TargetDensity):
        raise ConfigError(f"target.factory: {spec!r} did not return a TargetDensity")
    return target


def make_grid(cfg: ExperimentConfig, target: TargetDensity):
    if cfg.n is None:
        sizes = target.default_sizes()
        if sizes is None:
            raise ConfigError(f"cross.n: target {cfg.target!r} has no default grid sizes")
        return target.grid(sizes)
    n = cfg.n
    if len(n) == 1:
        n = n * target.dim
    if len(n) != target.dim:
        raise ConfigError(f"cross.n: {len(n)} sizes given for a {target.dim}-dimensional target")
    return target.grid(list(n))


class _Clock:
    """Accumulates wall-clock seconds per named phase."""

    def __init__(self):
        self.seconds: dict = {}

    @contextmanager
    def __call__(self, phase: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[phase] = self.seconds.get(phase, 0.0) + time.perf_counter() - t0


def _evaluate(target: TargetDensity, x: np.ndarray, chunk: int):
    """Target log density (shifted by ``log_scale``) and QoI series in chunks."""
    logs, qois = [], []
    for s in range(0, x.shape[0], chunk):
        lp, q = target.evaluate(x[s:s + chunk])
        logs.append(lp)
        qois.append(q)
    logp = np.concatenate(logs) - target.log_scale
    qoi = {k: np.concatenate([q[k] for q in qois]) for k in qois[0]}
    return logp, qoi


def _surrogate(target: TargetDensity, x: np.ndarray, chunk: int) -> dict:
    parts = [target.surrogate_integrands(x[s:s + chunk]) for s in range(0, x.shape[0], chunk)]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _rng(cfg: ExperimentConfig, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=tuple(int(k) for k in key)))


def _lattice(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return LatticeRule(generating_vector(d, n), n, shift=rng.random(d)).points()


@dataclass
class Repetition:
    """Everything produced by one repetition."""

    index: int
    tt: TTTensor
    records: list
    timings: list


def _tt_method(method, cfg, target, sampler, n, rng, clock):
    d = target.dim
    two_level = method.endswith("-2L")
    lattice = method in ("TT-qIW", "TT-qIW-2L")
    extra: dict = {}
    if two_level:
        n0 = cfg.n0 if cfg.n0 is not None else 4 * n
        with clock("sampling"):
            seeds0 = _lattice(d, n0, rng) if lattice else rng.random((n0, d))
            coarse = sampler.transform(seeds0, "lattice" if lattice else "iid")
        with clock("target"):
            gt0 = _surrogate(target, coarse.x, cfg.chunk)
        extra["N0"] = n0
    with clock("sampling"):
        seeds = _lattice(d, n, rng) if lattice else rng.random((n, d))
        batch = sampler.transform(seeds, "lattice" if lattice else "iid")
    with clock("target"):
        logp, qoi = _evaluate(target, batch.x, cfg.chunk)
        gt1 = _surrogate(target, batch.x, cfg.chunk) if two_level else None
    n_evals = n
    with clock("estimation"):
        batch = batch.with_target(logp)
        g = target.integrands(qoi)
        values = {**qoi, **g}
        stderr: dict = {}
        tau = None
        rejection = None
        if method == "TT-MH":
            chain = mh_correct(batch, rng, g)
            diag = lemma_diagnostics(batch, chain)
            est = target.summarize({k: v[chain.index] for k, v in values.items()})
            tau = chain.tau
            rejection = chain.rejection_rate
            for k, v in g.items():
                sd = float(np.std(v[chain.index]))
                stderr[k] = sd * np.sqrt(max(tau[k], 0.0) / n) if np.isfinite(tau[k]) else None
        elif method in ("TT-rIW", "TT-qIW"):
            w = batch.weights
            est = target.summarize(values, weights=w)
            for k, v in g.items():
                stderr[k] = None if lattice else importance_estimate(w, v).stderr
            we = importance_estimate(w, np.zeros(n))
            diag = {"e_l1": we.e_l1, "w_max": we.max_w}
        else:
            est, coarse_est, corr = {}, {}, {}
            if method == "TT-MH-2L":
                seed = int(rng.integers(2 ** 63))
                for k in g:
                    two = two_level_mh(gt0[k], batch, g[k], gt1[k], np.random.default_rng(seed))
                    est[k], coarse_est[k], corr[k] = two.estimate, two.coarse, two.correction
                    stderr[k] = float(np.sqrt(np.var(gt0[k]) / gt0[k].size + two.correction_var / n))
                chain = two.chain
                tau = {k: iact(v[chain.index]) if n >= 100 else None for k, v in g.items()}
                rejection = chain.rejection_rate
                diag = lemma_diagnostics(batch, chain)
            else:
                w = batch.weights
                for k in g:
                    two = two_level_iw(gt0[k], w, g[k], gt1[k])
                    est[k], coarse_est[k], corr[k] = two.estimate, two.coarse, two.correction
                    stderr[k] = None
                we = importance_estimate(w, np.zeros(n))
                diag = {"e_l1": we.e_l1, "w_max": we.max_w}
            extra["coarse"] = coarse_est
            extra["correction"] = corr
    return estimate_record(
        method, n, est, stderr, tau, rejection, diag["e_l1"],
        w_max=diag["w_max"], n_evals=n_evals, **extra,
    )


def _am_method(cfg, target, steps, rng, clock):
    with clock("chain"):
        shift = target.log_scale

        def logp(x):
            return target.log_density(x) - shift

        chain = am_run(logp, target.lower, target.upper, steps, rng, AMConfig())
    with clock("target"):
        start = int(AMConfig().burn_in * steps)
        kept = chain.states[start:]
        uniq, inverse = np.unique(kept, axis=0, return_inverse=True)
        _, q = _evaluate(target, uniq, cfg.chunk)
    with clock("estimation"):
        inverse = np.asarray(inverse).reshape(-1)
        qoi = {k: v[inverse] for k, v in q.items()}
        g = target.integrands(qoi)
        est = target.summarize({**qoi, **g})
        tau, stderr = {}, {}
        for k, v in g.items():
            tau[k] = iact(v) if v.size >= 100 else float("nan")
            stderr[k] = float(np.std(v)) * np.sqrt(max(tau[k], 0.0) / v.size) if np.isfinite(tau[k]) else None
        for k, v in chain.tau.items():
            tau[k] = v
    return estimate_record(
        "AM", steps, est, stderr, tau, chain.rejection_rate, None,
        n_evals=int(chain.estimates["n_evals"]) + uniq.shape[0],
    )


def run_repetition(cfg: ExperimentConfig, target: TargetDensity, grid, index: int,
                   cross_workers: int = 1) -> Repetition:
    """Build the surrogate of repetition ``index`` and apply every method and sample size."""
    clock = _Clock()
    timings = []
    needs_tt = any(m != "AM" for m in cfg.methods)
    tt = None
    cross_info: dict = {}
    t0 = time.perf_counter()
    if needs_tt:
        with clock("cross"):
            ccfg = CrossConfig(
                rank=cfg.init_rank, rho=cfg.rho, tol=cfg.delta, max_sweeps=cfg.max_sweeps,
                max_evals=cfg.max_evals, local_fraction=cfg.local_fraction, workers=cross_workers,
            )
            shift = target.log_scale
            res = cross_approximate(
                index_function(lambda x: np.exp(target.log_density(x) - shift), grid),
                grid, ccfg, _rng(cfg, index, 0),
            )
            tt = res.tt
            sampler = CDSampler(tt)
        cross_info = {"cross_evals": res.n_evals, "sweeps": res.sweeps,
                      "converged": res.converged, "tt_ranks": list(tt.ranks)}
        timings.append({"repetition": index, "method": "cross", "N": None,
                        "seconds": dict(clock.seconds), "wall": time.perf_counter() - t0})
    records = []
    for mi, method in enumerate(cfg.methods):
        sizes = cfg.n_samples
        if method == "AM" and cfg.am_steps is not None:
            sizes = (cfg.am_steps,)
        for ni, n in enumerate(sizes):
            clock = _Clock()
            t0 = time.perf_counter()
            rng = _rng(cfg, index, 1 + mi, ni)
            if method == "AM":
                rec = _am_method(cfg, target, n, rng, clock)
            else:
                rec = _tt_method(method, cfg, target, sampler, n, rng, clock)
                rec.update(cross_info)
            rec = {"study": cfg.name, "repetition": index, **rec}
            records.append(rec)
            timings.append({"repetition": index, "method": method, "N": rec["N"],
                            "seconds": dict(clock.seconds), "wall": time.perf_counter() - t0})
            logger.info("%s rep %d %s N=%d done", cfg.name, index, method, n)
    return Repetition(index, tt, records, timings)


def tt_spread(tts: Sequence[TTTensor]) -> Optional[float]:
    """Relative empirical standard deviation of TT surrogates from their Gram matrix.

    ``sqrt(sum_i ||t_i - mean||^2 / (R - 1) / ||mean||^2)``; ``None`` for ``R < 2``.
    """
    R = len(tts)
    if R < 2:
        return None
    G = np.array([[tts[i].inner(tts[j]) for j in range(R)] for i in range(R)])
    G = 0.5 * (G + G.T)
    mean_sq = G.sum() / R ** 2
    if mean_sq <= 0:
        return None
    dev = np.diag(G) - 2.0 * G.mean(axis=1) + mean_sq
    return float(np.sqrt(max(dev.sum(), 0.0) / (R - 1) / mean_sq))


def relative_spread(values: Sequence[float]) -> Optional[float]:
    """Mean relative deviation ``mean_i |q_i - qbar| / |qbar|`` over repetitions; ``None`` for fewer than two."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size < 2 or v.size != len(values):
        return None
    m = v.mean()
    if m == 0:
        return None
    return float(np.mean(np.abs(v - m)) / abs(m))


SUMMARY_COLUMNS = (
    "study", "method", "N", "R", "qoi", "mean", "stderr", "E_q", "E_q_avg", "E_TT",
    "rejection_rate", "tau", "e_l1", "w_max", "n_evals", "cross_evals",
)


def summarize_records(records: Sequence[dict], e_tt: Optional[float]) -> list[dict]:
    """Aggregate per-repetition records into summary rows."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec["method"], rec["N"]), []).append(rec)
    rows = []

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    for (method, n), recs in groups.items():
        qois = list(recs[0]["estimate"])
        errs = {q: relative_spread([r["estimate"].get(q) for r in recs]) for q in qois}
        known = [e for e in errs.values() if e is not None]
        e_avg = float(np.mean(known)) if known and len(known) == len(errs) else None
        for q in qois:
            rows.append({
                "study": recs[0]["study"], "method": method, "N": n, "R": len(recs), "qoi": q,
                "mean": mean([r["estimate"].get(q) for r in recs]),
                "stderr": mean([(r.get("stderr") or {}).get(q) for r in recs]),
                "E_q": errs[q], "E_q_avg": e_avg,
                "E_TT": e_tt if method != "AM" else None,
                "rejection_rate": mean([r.get("rejection_rate") for r in recs]),
                "tau": mean([(r.get("tau") or {}).get(q) for r in recs]),
                "e_l1": mean([r.get("e_l1") for r in recs]),
                "w_max": mean([r.get("w_max") for r in recs]),
                "n_evals": mean([r.get("n_evals") for r in recs]),
                "cross_evals": mean([r.get("cross_evals") for r in recs]),
            })
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run a study and write its report files; returns the output directory.

    Repetitions run concurrently up to ``cfg.workers``. Records are flushed
    after every repetition, and on interruption the summary of the finished
    repetitions is still written.
    """
    cfg.validate()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    target = make_target(cfg)
    grid = make_grid(cfg, target) if any(m != "AM" for m in cfg.methods) else None
    _ = target.log_scale  # computed once before any threads start
    if any(m.endswith("-2L") for m in cfg.methods):
        target.surrogate_integrands(0.5 * (target.lower + target.upper)[None, :])
    parallel = min(cfg.workers, cfg.repetitions)
    cross_workers = 1 if parallel > 1 else cfg.workers
    done: list[Repetition] = []
    t_start = time.perf_counter()
    with open(out / "results.jsonl", "w") as fres, open(out / "timings.jsonl", "w") as ftim:
        try:
            if parallel > 1:
                with ThreadPoolExecutor(parallel) as pool:
                    reps = pool.map(lambda i: run_repetition(cfg, target, grid, i, cross_workers),
                                    range(cfg.repetitions))
                    for rep in reps:
                        _flush(rep, fres, ftim)
                        done.append(rep)
            else:
                for i in range(cfg.repetitions):
                    rep = run_repetition(cfg, target, grid, i, cross_workers)
                    _flush(rep, fres, ftim)
                    done.append(rep)
        finally:
            tts = [r.tt for r in done if r.tt is not None]
            rows = summarize_records([rec for r in done for rec in r.records], tt_spread(tts))
            write_summary(out / "summary.csv", rows)
            ftim.write(_dump({"repetition": None, "method": "total", "N": None, "seconds": {},
                              "wall": time.perf_counter() - t_start}) + "\n")
    return out


def _flush(rep: Repetition, fres, ftim) -> None:
    for rec in rep.records:
        fres.write(_dump(rec) + "\n")
    for t in rep.timings:
        ftim.write(_dump(t) + "\n")
    fres.flush()
    ftim.flush()


# ---------------------------------------------------------------- presets

def preset_configs(name: str, scale: str = "desk", root="ttpdf-out", seed: int = 0) -> list[ExperimentConfig]:
    """Studies making up a named preset.

    ``scale="paper"`` uses the full-size sample sizes, grids and repetition
    counts; ``"desk"`` shrinks them to run in minutes while keeping the
    structure of each study.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {PRESETS}")
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}; expected one of {SCALES}")
    paper = scale == "paper"
    root = Path(root) / name
    cfgs = []

    def add(sub, **kw):
        kw.setdefault("seed", seed)
        cfgs.append(ExperimentConfig(name=f"{name}/{sub}", output=str(root / sub), **kw).validate())

    if name == "shock-fig1":
        common = dict(target="shock", target_options={"covariates": 2}, rho=8, max_sweeps=20,
                      methods=("TT-MH",), n_samples=(1 << 20,) if paper else (1 << 14,),
                      repetitions=32 if paper else 4)
        for n in ((16, 32, 64, 128, 256, 512) if paper else (32, 64, 128)):
            add(f"n{n}", n=(n,), delta=1e-5, **common)
        n_fixed = 512 if paper else 64
        for delta in ((1e-1, 1e-2, 1e-3, 1e-4, 1e-5) if paper else (1e-1, 1e-2, 1e-3)):
            add(f"delta{delta:g}", n=(n_fixed,), delta=delta, **common)
    elif name == "shock-table2":
        common = dict(target="shock", target_options={"covariates": 6}, rho=8, max_sweeps=20,
                      n_samples=(1 << 18,) if paper else (1 << 14,), repetitions=32 if paper else 2)
        for n, delta in ((12, 0.5), (16, 0.5), (16, 0.05), (32, 0.05)):
            add(f"n{n}-delta{delta:g}", n=(n,), delta=delta, methods=("TT-MH",), **common)
        add("am", methods=("AM",), am_steps=(1 << 20) if paper else (1 << 15), **common)
    elif name == "rosen-table3":
        for d in ((2, 4, 8, 16, 32) if paper else (2, 4, 8)):
            add(f"d{d}", target="rosenbrock", target_options={"dim": d}, n=None, delta=3e-3,
                rho=32, max_sweeps=30, methods=("TT-MH", "AM"),
                n_samples=(1 << 17,) if paper else (1 << 14,),
                am_steps=(1 << 20) if paper else (1 << 15), repetitions=4 if paper else 1)
    else:
        opts = {"dim": 11, "h": 2.0 ** -6} if paper else {"dim": 5, "h": 2.0 ** -5}
        sizes = tuple(1 << k for k in (range(10, 17, 2) if paper else range(8, 13, 2)))
        add("estimators", target="diffusion", target_options=opts, n=(32,) if paper else (16,),
            delta=0.1, rho=4, max_sweeps=10,
            methods=("TT-MH", "TT-qIW", "TT-MH-2L", "TT-qIW-2L", "AM"),
            n_samples=sizes, repetitions=16 if paper else 4)
    return cfgs


def run_preset(name: str, scale: str = "desk", root="ttpdf-out", seed: int = 0) -> list[Path]:
    return [run_experiment(c) for c in preset_configs(name, scale, root, seed)]


# ---------------------------------------------------------------- plot data

PLOT_COLUMNS = ("study", "method", "qoi", "N", "seconds", "E_q", "mean")


def plot_data(study_dir, out=None) -> Path:
    """Error-versus-N and error-versus-time series of every study below ``study_dir``.

    For each study, method, QoI and sample size the CSV holds ``N``, the
    mean wall-clock seconds per repetition (surrogate construction plus the
    method itself) and ``E_q``. Plotting is left to external tools.
    """
    study_dir = Path(study_dir)
    results = sorted(study_dir.rglob("results.jsonl"))
    if not results:
        raise ConfigError(f"no results.jsonl found below {study_dir}")
    rows = []
    for path in results:
        records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        secs: dict = {}
        tpath = path.with_name("timings.jsonl")
        if tpath.exists():
            for line in tpath.read_text().splitlines():
                t = json.loads(line)
                secs[(t["repetition"], t["method"], t["N"])] = t["wall"]
        for row in summarize_records(records, None):
            recs = [r for r in records if r["method"] == row["method"] and r["N"] == row["N"]]
            times = []
            for r in recs:
                t = secs.get((r["repetition"], r["method"], r["N"]))
                if t is None:
                    continue
                times.append(t + secs.get((r["repetition"], "cross", None), 0.0))
            rows.append({
                "study": row["study"], "method": row["method"], "qoi": row["qoi"], "N": row["N"],
                "seconds": float(np.mean(times)) if times else None,
                "E_q": row["E_q"], "mean": row["mean"],
            })
    out = Path(out) if out is not None else study_dir / "plot_data.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLOT_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in PLOT_COLUMNS])
    return out
