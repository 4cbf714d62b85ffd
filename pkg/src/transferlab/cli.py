"""Batch command line: transferlab <command> --config FILE [--seed N] [--out DIR].

Exit codes: 0 when every check of the command passes, 2 when a check
fails, 1 on usage or configuration errors.  The config is a JSON object
validated against ``RunConfig``; unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .chains import (AcceptanceStats, breiman_average, config_ball_metric, cylinder_balls,
                     empirical_stationarity, support_probe)
from .coupling import fit_polynomial_decay, coupling_cost_series
from .limits import correlation_series, fclt_experiment
from .oracle import equivalence_grid, grid_potential
from .potential import ModulusOfContinuity, Observable, coordinate_observable, dyson_potential
from .rng import substream
from .space import AprioriMeasure, ContractViolation, sample_configs
from .systems import (WeightedShiftSystem, chaos_game, discarded_tail_bound, dyadic_ifs,
                      ifs_irreducibility_witness, strong_transitivity_witness, summability_check,
                      weighted_shift_balls, weighted_shift_metric)
from .transfer import FullShift, NormalizeConfig, normalize

SCHEMA_VERSION = 1
COMMANDS = ("normalize", "decay", "fclt", "breiman", "support", "oracle-check")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NormalizeSection(_Section):
    K_check: int = Field(100_000, ge=1)
    K_rho: int = Field(20_000, ge=1)
    n_max: int = Field(64, ge=4)
    n_cesaro: int = Field(256, ge=1)
    K_cesaro: int = Field(10_000, ge=1)
    bank_particles: int = Field(8192, ge=1)
    bank_per_term: int = Field(16, ge=1)
    probes: int = Field(32, ge=1)
    tolerance: float = Field(0.02, gt=0)
    override_flatness: bool = False


class DecaySection(_Section):
    n_max: int = Field(64, ge=6)
    K: int = Field(2000, ge=2)
    omega_epsilon: float = Field(2.0, gt=0)
    corr_lags: int = Field(32, ge=6)
    corr_chains: int = Field(200, ge=2)
    corr_length: int = Field(2048, ge=8)
    burn_in: int = Field(1000, ge=0)
    threshold: float = 1.2


class FcltSection(_Section):
    n: int = Field(4096, ge=4)
    R: int = Field(400, ge=200)
    n_corr: int = Field(32, ge=6)
    poisson_chains: int = Field(16, ge=2)
    snapshots: int = Field(4, ge=1)
    burn_in: int = Field(1000, ge=0)


class BreimanSection(_Section):
    n: int = Field(100_000, ge=10)
    chains: int = Field(32, ge=2)
    K: int = Field(1000, ge=1)
    tolerance: float = Field(0.01, gt=0)
    checkpoints: int = Field(8, ge=3)
    slope_band: tuple[float, float] = (-1.3, -0.7)
    stationarity_n: int = Field(2000, ge=10)


class SupportSection(_Section):
    steps: int = Field(100_000, ge=1)
    balls: int = Field(20, ge=1)
    radius: float = Field(0.5, gt=0)
    center_scale: float = Field(0.5, gt=0)
    max_nonzero: int = Field(3, ge=1)
    seeds: int = Field(5, ge=1)
    summability_N: int = Field(40, ge=10)
    witness_radius: float = Field(0.5, gt=0)
    witness_n_max: int = Field(16, ge=1)
    cylinder_length: int = Field(3, ge=1)
    ks_threshold: float = Field(0.02, gt=0)
    ifs_target: float = 0.8125
    ifs_radius: float = Field(0.01, gt=0)
    ifs_k_max: int = Field(8, ge=0)


class OracleSection(_Section):
    cases: int = Field(200, ge=1)
    threshold: float = Field(0.99, gt=0, le=1)


class RunConfig(_Section):
    model: Literal["full-shift-finite", "dyson-sphere", "dyson-halfline", "weighted-shift", "ifs"]
    epsilon: float = Field(3.0, gt=0)
    N: int = Field(2, ge=2)
    alphabet_size: int = Field(2, ge=2)
    potential: Literal["none", "field", "pair", "table"] = "pair"
    beta: float = 1.0
    weights: list[float] = Field(default_factory=lambda: [2.0])
    dim: int = Field(32, ge=2)
    p: float = Field(1.0, ge=1)
    ifs: Literal["dyadic"] = "dyadic"
    depth: int = Field(64, ge=2)
    seed: int = Field(0, ge=0)
    out: str = "out"
    workers: int = Field(1, ge=1)
    normalize: NormalizeSection = Field(default_factory=NormalizeSection)
    decay: DecaySection = Field(default_factory=DecaySection)
    fclt: FcltSection = Field(default_factory=FcltSection)
    breiman: BreimanSection = Field(default_factory=BreimanSection)
    support: SupportSection = Field(default_factory=SupportSection)
    oracle: OracleSection = Field(default_factory=OracleSection)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, dict):
        return {str(k): _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_num(x) for x in v]
    return v


class Writer:
    """Collects artifacts in the output directory, in the order they are written."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def csv(self, name: str, header: list[str], rows):
        with open(self.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self.files.append(name)

    def json(self, name: str, payload: dict):
        with open(self.out / name, "w") as fh:
            json.dump(_num(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(name)


def config_hash(cfg: RunConfig) -> str:
    payload = cfg.model_dump(exclude={"out", "workers"})
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# models


def _normalized(cfg: RunConfig):
    kernel, f = _shift_model(cfg)
    n = cfg.normalize
    nc = NormalizeConfig(depth=cfg.depth, seed=cfg.seed, n_max=n.n_max, K_rho=n.K_rho, n_cesaro=n.n_cesaro,
                         K_cesaro=n.K_cesaro, bank_particles=n.bank_particles, bank_per_term=n.bank_per_term,
                         probes=n.probes, K_check=n.K_check, tolerance=n.tolerance,
                         override_flatness=n.override_flatness)
    return normalize(kernel, f, nc)


def _shift_model(cfg: RunConfig):
    if cfg.model == "full-shift-finite":
        if cfg.potential == "none":
            raise ConfigError("potential 'none' has no normalization; use it with the breiman command")
        f, _ = grid_potential(cfg.potential, cfg.alphabet_size, cfg.beta, substream(cfg.seed, "table"))
    elif cfg.model == "dyson-sphere":
        f = dyson_potential("sphere", cfg.epsilon, cfg.N)
    elif cfg.model == "dyson-halfline":
        f = dyson_potential("halfline", cfg.epsilon)
    else:
        raise ConfigError(f"model {cfg.model!r} has no shift-space potential for this command")
    return FullShift(AprioriMeasure(f.alphabet)), f


def _first_coordinate(alphabet) -> Observable:
    return coordinate_observable(alphabet)


def _test_functions(alphabet) -> list[Observable]:
    """Three bounded test functions reading the first two coordinates."""
    if alphabet.point_shape:
        return [Observable(lambda c: c[..., 0, 0], 1.0, "x1[0]", 1),
                Observable(lambda c: np.einsum("...f,...f->...", c[..., 0, :], c[..., 1, :]), 1.0, "x1.x2", 2),
                Observable(lambda c: c[..., 0, 1] ** 2, 1.0, "x1[1]^2", 1)]
    if alphabet.is_finite:
        m = float(max(abs(p) for p in alphabet.points))
        return [Observable(lambda c: c[..., 0], m, "x1", 1),
                Observable(lambda c: c[..., 0] * c[..., 1], m * m, "x1*x2", 2),
                Observable(lambda c: (c[..., 0] == c[..., 1]).astype(float), 1.0, "[x1=x2]", 2)]
    return [Observable(lambda c: np.tanh(c[..., 0]), 1.0, "tanh(x1)", 1),
            Observable(lambda c: np.exp(-c[..., 0]), 1.0, "exp(-x1)", 1),
            Observable(lambda c: np.cos(c[..., 0] - c[..., 1]), 1.0, "cos(x1-x2)", 2)]


# ---------------------------------------------------------------------------
# commands


def cmd_normalize(cfg: RunConfig, w: Writer) -> dict:
    sysn = _normalized(cfg)
    d = sysn.diagnostics
    rows = [(i, float(d.probe_values[i]), float(d.probe_errors[i]), float(d.log_h[i]),
             float(abs(d.probe_values[i] - 1.0))) for i in range(len(d.probe_values))]
    w.csv("probes.csv", ["probe", "L1", "std_error", "log_h", "drift"], rows)
    w.json("normalization.json", {"lambda": sysn.lam, "rho_std_error": sysn.spectral.std_error,
                                  "sup_drift": d.sup_drift, "tolerance": sysn.tolerance,
                                  "exact_check": d.exact, "log_h_lower": sysn.eigenfunction.log_lower,
                                  "log_h_upper": sysn.eigenfunction.log_upper, "heuristic": sysn.heuristic})
    return {"normalization": sysn.accepted}


def cmd_decay(cfg: RunConfig, w: Writer) -> dict:
    sysn = _normalized(cfg)
    if not sysn.accepted:
        return {"normalization": False}
    dc = cfg.decay
    kernel = sysn.kernel
    omega = ModulusOfContinuity.log(dc.omega_epsilon, kernel.alphabet.diameter)
    # configurations deep enough that the prepended words never push the difference off the end
    X = sample_configs(kernel.apriori, 2, cfg.depth + dc.n_max, substream(cfg.seed, "decay-pair"))
    series = coupling_cost_series(kernel, sysn.fbar, omega, X[0], X[1], dc.n_max, dc.K,
                                  substream(cfg.seed, "decay-cost"))
    w.csv("coupling.csv", ["n", "cost", "std_error"],
          [(n + 1, s.value, s.std_error) for n, s in enumerate(series)])
    phi = _first_coordinate(kernel.alphabet)
    corr, corr_se = correlation_series(sysn, phi, dc.corr_lags, dc.corr_chains, dc.corr_length, cfg.seed,
                                       dc.burn_in, cfg.depth, workers=cfg.workers)
    w.csv("correlations.csv", ["n", "correlation", "std_error"],
          [(n, float(corr[n]), float(corr_se[n])) for n in range(len(corr))])
    fits, verdict = {}, {}
    for name, pts, se in (("coupling", [(n + 1, s.value) for n, s in enumerate(series)],
                           [s.std_error for s in series]),
                          ("correlation", list(zip(range(len(corr)), corr)), corr_se)):
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                fit = fit_polynomial_decay(pts, se)
            fits[name] = {"exponent": fit.exponent, "exponent_se": fit.exponent_se, "constant": fit.constant,
                          "residual_rms": fit.residual_rms, "n_range": list(fit.n_range), "points": fit.points,
                          "dropped": fit.dropped, "warnings": [str(c.message) for c in caught]}
            verdict[f"{name}_decay"] = fit.exponent <= -dc.threshold
        except ContractViolation as exc:
            fits[name] = {"refused": str(exc)}
            verdict[f"{name}_decay"] = False
    w.json("fit.json", {"threshold": -dc.threshold, "fits": fits})
    return verdict


def cmd_fclt(cfg: RunConfig, w: Writer) -> dict:
    sysn = _normalized(cfg)
    if not sysn.accepted:
        return {"normalization": False}
    fc = cfg.fclt
    phi = _first_coordinate(sysn.alphabet)
    ex = fclt_experiment(sysn, phi, fc.n, fc.R, cfg.seed, n_corr=fc.n_corr, poisson_chains=fc.poisson_chains,
                         snapshots=fc.snapshots, burn_in=fc.burn_in, depth=cfg.depth, workers=cfg.workers)
    r = ex.report
    w.csv("endpoints.csv", ["replicate", "Y_0.25", "Y_0.5", "Y_0.75", "Y_1"],
          [(i,) + tuple(float(v) for v in ex.paths[i]) for i in range(len(ex.paths))])
    w.csv("correlations.csv", ["n", "correlation", "std_error"],
          [(n, float(ex.correlations[n]), float(ex.correlation_errors[n])) for n in range(len(ex.correlations))])
    w.json("report.json", {
        "sigma2": r.sigma2, "sigma2_se": ex.variance.std_error, "sigma2_gk": r.sigma2_gk,
        "sigma2_gk_se": ex.sigma2_gk_time_se, "sigma2_alt_reading": ex.variance.sigma2_alt,
        "sigma2_gk_points": ex.variance.sigma2_gk, "consistent": ex.consistent,
        "variance_rejected": ex.variance.rejected,
        "ks": {str(k): v for k, v in r.ks.items()}, "ks_threshold": r.ks_threshold,
        "linearity": r.linearity, "linearity_threshold": r.linearity_threshold,
        "increment_correlation": r.increment_correlation, "correlation_threshold": r.correlation_threshold,
        "R": r.R, "n": r.n, "accepted": r.accepted, "truncation_N": ex.poisson.N,
        "decay_exponent": None if ex.decay is None else ex.decay.exponent, "centering_mean": ex.centering.mean,
        "centering_bound": ex.centering.bound, "poisson_residuals_ok": ex.poisson.accepted,
        "acceptance_rate": ex.acceptance})
    return {"fclt": r.accepted, "variance_consistent": ex.consistent, "variance_positive": not ex.variance.rejected}


def cmd_breiman(cfg: RunConfig, w: Writer) -> dict:
    bc = cfg.breiman
    if cfg.model == "full-shift-finite" and cfg.potential == "none":
        from .space import Alphabet
        model = FullShift(AprioriMeasure(Alphabet.finite(list(range(cfg.alphabet_size)))))
        alphabet, sysn = model.alphabet, None
    else:
        sysn = _normalized(cfg)
        if not sysn.accepted:
            return {"normalization": False}
        model, alphabet = sysn, sysn.alphabet
    tests = _test_functions(alphabet)
    depth = max(cfg.depth if sysn is not None else 8, 3)
    res = breiman_average(model, tests, bc.n, substream(cfg.seed, "breiman"), K=bc.K, chains=bc.chains,
                          depth=depth)
    marks = np.unique(np.geomspace(max(10, bc.n // 100), bc.n, bc.checkpoints).astype(int))
    rows = []
    slopes = {}
    for phi, r in zip(tests, res):
        var = r.averages[:, marks - 1].var(axis=0, ddof=1)
        for m, v, a in zip(marks, var, r.averages[0, marks - 1]):
            rows.append((phi.name, int(m), float(a), float(v)))
        slopes[phi.name] = float(np.polyfit(np.log(marks), np.log(var), 1)[0])
    w.csv("convergence.csv", ["test_function", "m", "A_m_chain0", "var_A_m"], rows)
    finals = {phi.name: float(np.max(r.final)) for phi, r in zip(tests, res)}
    verdict = {"averages_vanish": all(v <= bc.tolerance for v in finals.values()),
               "variance_rate": all(bc.slope_band[0] <= s <= bc.slope_band[1] for s in slopes.values())}
    payload = {"max_abs_A_n": finals, "tolerance": bc.tolerance, "log_variance_slopes": slopes,
               "slope_band": list(bc.slope_band), "n": bc.n, "chains": bc.chains}
    if sysn is not None:
        st = empirical_stationarity(sysn, tests, bc.stationarity_n, substream(cfg.seed, "stationarity"), K=bc.K,
                                    depth=depth, chains=bc.chains)
        payload["stationarity"] = {"names": list(st.names), "nu_P": st.nu_P, "nu": st.nu,
                                   "discrepancy": st.discrepancy, "tolerance": st.tolerance}
        verdict["stationarity"] = st.accepted
    w.json("breiman.json", payload)
    return verdict


def _support_weighted_shift(cfg: RunConfig, w: Writer) -> dict:
    sc = cfg.support
    wsys = WeightedShiftSystem(tuple(cfg.weights), cfg.dim, cfg.p)
    summ = summability_check(wsys, 1.0, sc.summability_N)
    kernel = wsys.kernel()
    balls = weighted_shift_balls(wsys, sc.balls, sc.radius, sc.max_nonzero, sc.center_scale, seed=cfg.seed)
    # a ball counts as hit only if the truncated state is inside it by more than the discarded tail
    margin = discarded_tail_bound(wsys, r_max=6.0)
    metric = weighted_shift_metric(wsys, margin)
    stepper = lambda x, rng: kernel.advance(x[None], kernel.draw(rng, 1))[0]
    rows, all_hit = [], True
    for s in range(sc.seeds):
        rng = substream(cfg.seed, "support", s)
        start = np.zeros(wsys.dim)
        start[0] = 2.0 * (sc.center_scale + sc.radius) + 1.0    # outside every ball, so hits count only visits
        rep = support_probe(stepper, balls, sc.steps, rng, start, metric)
        all_hit &= rep.all_hit
        rows += [(s, b, int(rep.hits[b]), int(rep.first_hit[b])) for b in range(len(balls))]
    w.csv("hits.csv", ["seed", "ball", "hits", "first_hit"], rows)
    e1 = np.zeros(wsys.dim)
    e1[0] = 1.0
    wit = strong_transitivity_witness(wsys, e1, np.zeros(wsys.dim), sc.witness_radius, sc.witness_n_max)
    w.json("witness.json", {"summability_partial_sums": summ.partial_sums, "summability_ratio": summ.ratio,
                            "summable": summ.summable, "transitivity_found": wit.found, "transitivity_n": wit.n,
                            "transitivity_word": None if wit.word is None else wit.word,
                            "transitivity_distance": wit.distance, "tail_margin": margin,
                            "ball_centers": [b[0][:sc.max_nonzero] for b in balls]})
    return {"summable": summ.summable, "all_balls_hit": bool(all_hit), "transitivity_witness": wit.found}


def _support_ifs(cfg: RunConfig, w: Writer) -> dict:
    from scipy import stats
    sc = cfg.support
    ifs = dyadic_ifs()
    rows, ks_ok = [], True
    for s in range(sc.seeds):
        path = chaos_game(ifs, [0.5], sc.steps, substream(cfg.seed, "chaos", s))[:, 0, 0]
        ks = float(stats.kstest(path, "uniform").statistic)
        ks_ok &= ks <= sc.ks_threshold
        rows.append((s, ks))
    w.csv("stationary_ks.csv", ["seed", "ks_uniform"], rows)
    wit = ifs_irreducibility_witness(ifs, [0.0], [sc.ifs_target], sc.ifs_radius, sc.ifs_k_max)
    w.json("witness.json", {"found": wit.found, "index": None if wit.index is None else list(wit.index),
                            "point": None if wit.point is None else wit.point, "nearest": wit.nearest,
                            "ks_threshold": sc.ks_threshold})
    return {"stationary_uniform": bool(ks_ok), "irreducibility_witness": wit.found}


def _support_full_shift(cfg: RunConfig, w: Writer) -> dict:
    sc = cfg.support
    sysn = _normalized(cfg)
    if not sysn.accepted:
        return {"normalization": False}
    from .chains import psi_advance
    depth = max(8, sc.cylinder_length + 1)
    balls = cylinder_balls(sysn.alphabet, sc.cylinder_length, depth)
    metric = config_ball_metric(sysn.alphabet)
    stepper = lambda x, rng: psi_advance(sysn, x[None], rng)[0]
    rows, all_hit = [], True
    for s in range(sc.seeds):
        rng = substream(cfg.seed, "support", s)
        start = sample_configs(sysn.kernel.apriori, 1, depth, rng)[0]
        rep = support_probe(stepper, balls, sc.steps, rng, start, metric)
        all_hit &= rep.all_hit
        rows += [(s, b, int(rep.hits[b]), int(rep.first_hit[b])) for b in range(len(balls))]
    w.csv("hits.csv", ["seed", "ball", "hits", "first_hit"], rows)
    return {"all_balls_hit": bool(all_hit)}


def cmd_support(cfg: RunConfig, w: Writer) -> dict:
    if cfg.model == "weighted-shift":
        return _support_weighted_shift(cfg, w)
    if cfg.model == "ifs":
        return _support_ifs(cfg, w)
    if cfg.model == "full-shift-finite":
        return _support_full_shift(cfg, w)
    raise ConfigError(f"support probes are not defined for model {cfg.model!r}")


def cmd_oracle_check(cfg: RunConfig, w: Writer) -> dict:
    rep = equivalence_grid(cfg.oracle.cases, cfg.seed, cfg.workers)
    w.csv("grid.csv", ["case", "potential", "s", "k", "beta", "quantity", "estimate", "std_error", "exact", "z"],
          [(c.index, c.potential, c.s, c.k, c.beta, c.quantity, c.estimate, c.std_error, c.exact, float(c.z))
           for c in rep.cases])
    return {"within_3se_rate": rep.rate >= cfg.oracle.threshold}


HANDLERS = {"normalize": cmd_normalize, "decay": cmd_decay, "fclt": cmd_fclt, "breiman": cmd_breiman,
            "support": cmd_support, "oracle-check": cmd_oracle_check}


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def load_config(path: str, seed: int | None = None, out: str | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    env = os.environ.get("TOOL_SEED")
    if env is not None:
        try:
            raw["seed"] = int(env)
        except ValueError as exc:
            raise ConfigError(f"TOOL_SEED must be an integer, got {env!r}") from exc
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        parts = []
        for e in exc.errors():
            loc = ".".join(str(p) for p in e["loc"]) or "<root>"
            parts.append(f"{loc}: {e['msg']}")
        raise ConfigError("invalid config: " + "; ".join(parts)) from exc


def run(command: str, cfg: RunConfig) -> tuple[int, dict]:
    w = Writer(Path(cfg.out))
    t0 = time.perf_counter()
    verdicts = {k: bool(v) for k, v in HANDLERS[command](cfg, w).items()}
    ok = all(verdicts.values())
    summary = {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "command": command,
               "config_hash": config_hash(cfg), "seed": cfg.seed, "model": cfg.model,
               "wall_time_s": round(time.perf_counter() - t0, 3), "verdicts": verdicts, "accepted": ok,
               "artifacts": w.files + ["summary.json"]}
    w.json("summary.json", summary)
    return (0 if ok else 2), summary


def main(argv: list[str] | None = None) -> int:
    parser = _Parser(prog="transferlab", description="Transfer-operator numerical laboratory.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="master seed (TOOL_SEED is overridden by this)")
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        code, summary = run(args.command, cfg)
    except (ConfigError, ContractViolation) as exc:
        print(f"transferlab: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"command": summary["command"], "accepted": summary["accepted"],
                      "verdicts": summary["verdicts"], "out": cfg.out}, sort_keys=True))
    return code
