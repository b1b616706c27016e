"""Command-line experiment runner.

Subcommands
-----------
pareto        achievable singular-value region by weighted-sum sweeps
rate-sweep    mean achievable rate versus transmit power and group size
power-sweep   mean channel power gain versus surface size and group size
bounds-check  Monte-Carlo soundness and attainment check of every bound
example       reproduce the worked two-, three- and four-element examples
robustness    rate loss when the RIS channels are estimated with error

All commands are deterministic in ``(config, seed)``. The process exits with
status 1 when any internal invariant (unitarity, monotonicity, bound
satisfaction, example agreement) is violated, and 2 on usage or config errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np
import yaml

from . import __version__
from .bounds import (
    capacity_extreme_bounds,
    dof_range,
    horn_r1_check,
    power_bounds_nd,
    product_bounds_nd,
    rank_deficient_T,
    sv_bounds_nd,
    sv_bounds_nd_report,
    sv_bounds_rank_deficient,
)
from .channel import ChannelSet, Scenario, assemble, perturb, sample_channels
from .designs import dof_extremal, power_extremal_nd, sv_extremal_nd, sv_pivot
from .errors import ShapingError
from .manifold import BlockUnitary, OptimizerConfig
from .numerics import numerical_rank, pad, random_unitary, svdvals
from .solvers import (
    capacity,
    eigenmode_precoder,
    maximize_power_saa,
    maximize_rate_ao,
    maximize_rate_two_stage,
    pareto_frontier,
)

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2
REL_SLACK = 1e-9

# ---------------------------------------------------------------------------
# Configuration

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

_SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lambda0_db": _NUM,
        "gamma_D": _NUM,
        "gamma_F": _NUM,
        "gamma_B": _NUM,
        "d_D": {"type": "number", "exclusiveMinimum": 0},
        "d_F": {"type": "number", "exclusiveMinimum": 0},
        "d_B": {"type": "number", "exclusiveMinimum": 0},
        "kappa_D": {"type": "number", "minimum": 0},
        "kappa_F": {"type": "number", "minimum": 0},
        "kappa_B": {"type": "number", "minimum": 0},
        "n_t": _POS_INT,
        "n_s": _POS_INT,
        "n_r": _POS_INT,
        "group_size": _POS_INT,
        "noise_db": _NUM,
        "seed": {"type": "integer", "minimum": 0},
        "direct": {"type": "boolean"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scenario": _SCENARIO_SCHEMA,
        "seed": {"type": "integer", "minimum": 0},
        "trials": _POS_INT,
        "thetas": _POS_INT,
        "power_db": {"type": "array", "items": _NUM, "minItems": 1},
        "group_sizes": {"type": "array", "items": _POS_INT, "minItems": 1},
        "n_s_list": {"type": "array", "items": _POS_INT, "minItems": 1},
        "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "weight_count": {"type": "integer", "minimum": 2},
        "weights": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        },
        "methods": {
            "type": "array",
            "minItems": 1,
            "items": {"enum": ["ao", "two-stage", "no-ris"]},
        },
        "forward_rank": {"type": ["integer", "null"], "minimum": 0},
        "backward_rank": {"type": ["integer", "null"], "minimum": 0},
        "rel_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "max_outer_iters": _POS_INT,
        "ao_rounds": _POS_INT,
    },
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "pareto": {
        "scenario": {"n_t": 2, "n_r": 2, "n_s": 32, "direct": False},
        "group_sizes": [1, 32],
        "weight_count": 17,
        "trials": 1,
    },
    "rate-sweep": {
        "scenario": {"n_t": 4, "n_r": 4, "n_s": 16},
        "power_db": [-20, -10, 0, 10, 20],
        "group_sizes": [1, 4, 16],
        "methods": ["ao", "two-stage", "no-ris"],
        "trials": 3,
    },
    "power-sweep": {
        "scenario": {"n_t": 4, "n_r": 4},
        "n_s_list": [16, 32, 64],
        "group_sizes": [1, 4, 16, 64],
        "trials": 5,
    },
    "bounds-check": {
        "scenario": {"n_t": 4, "n_r": 4, "n_s": 8},
        "trials": 50,
        "thetas": 500,
    },
    "robustness": {
        "scenario": {"n_t": 4, "n_r": 4, "n_s": 16},
        "power_db": [20],
        "epsilons": [0.0, 0.01, 0.1, 0.5],
        "group_sizes": [1, 16],
        "methods": ["two-stage"],
        "trials": 5,
    },
}

_COMMON_DEFAULTS = {
    "seed": 0,
    "rel_tolerance": 1e-8,
    "max_outer_iters": 2000,
    "ao_rounds": 100,
    "forward_rank": None,
    "backward_rank": None,
}


class ConfigError(ValueError):
    pass


def validate_config(doc: Any) -> dict:
    """Check ``doc`` against the config schema; errors name the offending key."""
    if doc is None:
        return {}
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at '{where}': {e.message}")
    return dict(doc)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return validate_config(doc)


def resolve(command: str, user: dict, args: argparse.Namespace) -> dict:
    """Merge command defaults, the user config and command-line overrides."""
    cfg = dict(_COMMON_DEFAULTS)
    base = DEFAULTS.get(command, {})
    cfg.update({k: v for k, v in base.items() if k != "scenario"})
    cfg.update({k: v for k, v in user.items() if k != "scenario"})
    scen = dict(base.get("scenario", {}))
    scen.update(user.get("scenario", {}))
    cfg["scenario"] = scen
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        cfg["trials"] = args.trials
    try:
        Scenario.from_dict(scen)
    except ShapingError as exc:
        raise ConfigError(f"config error at 'scenario': {exc}") from exc
    return cfg


def trial_seed(seed: int, trial: int) -> int:
    """Independent 63-bit seed for trial ``trial`` of a run seeded with ``seed``."""
    state = np.random.SeedSequence([int(seed), int(trial)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _opt(cfg: dict) -> OptimizerConfig:
    return OptimizerConfig(rel_tolerance=cfg["rel_tolerance"], max_outer_iters=cfg["max_outer_iters"])


def _channels(cfg: dict, seed: int, **scenario_overrides) -> ChannelSet:
    scen = Scenario.from_dict({**cfg["scenario"], **scenario_overrides, "seed": seed})
    ch = sample_channels(scen)
    return _force_ranks(ch, cfg.get("backward_rank"), cfg.get("forward_rank"))


def _truncate(m: np.ndarray, rank: int | None) -> np.ndarray:
    if rank is None:
        return m
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    s = s.copy()
    s[rank:] = 0.0
    return (u * s) @ vh


def _force_ranks(ch: ChannelSet, rb: int | None, rf: int | None) -> ChannelSet:
    if rb is None and rf is None:
        return ch
    return ChannelSet(ch.h_d, _truncate(ch.h_b, rb), _truncate(ch.h_f, rf))


def _run_pool(fn: Callable, items: list, threads: int) -> list:
    """Ordered map; results come back in input order whatever the pool does."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _divisors(values, n_s: int) -> list[int]:
    return sorted({int(v) for v in values if n_s % int(v) == 0})


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def _rate_on(h: np.ndarray, w: np.ndarray, eta: float) -> float:
    """Rate in bits of precoder ``w`` on channel ``h``."""
    if w.shape[1] == 0:
        return 0.0
    hw = h @ w
    sign, logdet = np.linalg.slogdet(np.eye(hw.shape[1]) + hw.conj().T @ hw / eta)
    return float(logdet) / math.log(2.0)


def _unitary_ok(theta: BlockUnitary) -> bool:
    return theta.unitarity_error() <= 1e-8


def _monotone(trace, slack: float = REL_SLACK) -> bool:
    return all(b >= a - slack * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))


# ---------------------------------------------------------------------------
# pareto


def _weights(cfg: dict, n: int) -> list[np.ndarray]:
    if "weights" in cfg and cfg["weights"] is not None:
        out = [np.asarray(w, dtype=float) for w in cfg["weights"]]
        for w in out:
            if w.size != n or not np.any(w > 0):
                raise ConfigError(f"config error at 'weights': each vector needs {n} entries, not all zero")
        return out
    if n == 2:
        k = cfg["weight_count"]
        angles = np.linspace(0.0, math.pi / 2, k)
        return [np.array([math.cos(a), math.sin(a)]) for a in angles]
    # Per-mode extremes plus the equal-weight point for N > 2.
    return [np.eye(n)[i] for i in range(n)] + [np.ones(n) / n]


def _pareto_trial(job):
    cfg, t = job
    seed = trial_seed(cfg["seed"], t)
    ch = _channels(cfg, seed)
    n = min(ch.n_r, ch.n_t)
    weights = _weights(cfg, n)
    rows, bad = [], []
    no_direct = not ch.has_direct
    b, f = svdvals(ch.h_b), svdvals(ch.h_f)
    for l in _divisors(cfg["group_sizes"], ch.n_s):
        pts = pareto_frontier(ch, weights, l, _opt(cfg))
        for p in pts:
            if not _unitary_ok(p.theta):
                bad.append(f"trial {t}: non-unitary scattering matrix (L={l})")
            if no_direct:
                for m, s in enumerate(p.achieved_sv):
                    _, hi = sv_bounds_nd(pad(b, ch.n_s), pad(f, ch.n_s), m)
                    if s > hi * (1 + 1e-8) + 1e-300:
                        bad.append(f"trial {t}: sigma_{m} above its bound (L={l})")
            rows.append([*map(float, p.weights), *map(float, pad(p.achieved_sv, n)), l, seed])
    return rows, bad


def cmd_pareto(cfg: dict, threads: int = 1):
    n = min(cfg["scenario"].get("n_t", 4), cfg["scenario"].get("n_r", 4))
    header = [f"weight_{i + 1}" for i in range(n)] + [f"sigma_{i + 1}" for i in range(n)] + ["group_size", "trial_seed"]
    results = _run_pool(_pareto_trial, [(cfg, t) for t in range(cfg["trials"])], threads)
    rows = [r for rs, _ in results for r in rs]
    bad = [v for _, vs in results for v in vs]
    return header, rows, bad


# ---------------------------------------------------------------------------
# rate-sweep and robustness share one trial routine


def _rate_designs(design: ChannelSet, truth: ChannelSet, cfg: dict, eta: float):
    """Rates on ``truth`` of designs computed on ``design`` for every power, group size and method.

    AO runs are warm-started along increasing group sizes from the previous
    solution, so each row's feasible set contains the previous one.
    """
    out: dict[tuple, float] = {}
    bad: list[str] = []
    methods = cfg["methods"]
    sizes = _divisors(cfg["group_sizes"], design.n_s)
    opt = _opt(cfg)
    for pdb in cfg["power_db"]:
        p = 10.0 ** (pdb / 10.0)
        if "no-ris" in methods:
            w, _, _ = eigenmode_precoder(design.h_d, p, eta)
            out[(pdb, 0, "no-ris")] = _rate_on(truth.h_d, w, eta)
        prev_theta, prev_rate = None, -math.inf
        for l in sizes:
            if "two-stage" in methods or "ao" in methods:
                ts = maximize_rate_two_stage(design, l, p, eta, opt)
                _check_rate(ts, p, bad, f"two-stage L={l} P={pdb}dB")
            if "two-stage" in methods:
                out[(pdb, l, "two-stage")] = _rate_on(assemble(truth, ts.theta), ts.precoder, eta)
            if "ao" in methods:
                # Start from the better of the two-stage design and the nested
                # solution for the previous (smaller) group size.
                theta0, start_rate = ts.theta, ts.rate
                if prev_theta is not None and l % prev_theta.group_size == 0 and prev_rate > start_rate:
                    theta0, start_rate = prev_theta.regroup(l), prev_rate
                res = maximize_rate_ao(design, l, p, eta, opt, theta0=theta0, max_rounds=cfg["ao_rounds"])
                _check_rate(res, p, bad, f"ao L={l} P={pdb}dB")
                if not _monotone(res.trace):
                    bad.append(f"ao rate trace decreased (L={l}, P={pdb}dB)")
                floor = max(start_rate, ts.rate)
                if res.rate < floor - REL_SLACK * max(1.0, abs(floor)):
                    bad.append(f"ao rate with L={l} below its warm start (P={pdb}dB)")
                prev_theta, prev_rate = res.theta, res.rate
                out[(pdb, l, "ao")] = _rate_on(assemble(truth, res.theta), res.precoder, eta)
    return out, bad


def _check_rate(res, p: float, bad: list, label: str) -> None:
    if not _unitary_ok(res.theta):
        bad.append(f"{label}: non-unitary scattering matrix")
    power = float(np.sum(np.abs(res.precoder) ** 2))
    if power > p * (1 + REL_SLACK):
        bad.append(f"{label}: precoder exceeds the power budget")


def _rate_trial(job):
    cfg, t = job
    seed = trial_seed(cfg["seed"], t)
    ch = _channels(cfg, seed)
    eta = Scenario.from_dict({**cfg["scenario"], "seed": seed}).noise
    return _rate_designs(ch, ch, cfg, eta)


def _mean_rows(results, keys_order) -> list[list]:
    n = len(results)
    rows = []
    for key in keys_order:
        total = 0.0
        for res, _ in results:
            total += res[key]
        rows.append([*key, total / n, n])
    return rows


def _rate_keys(cfg: dict, n_s: int) -> list[tuple]:
    keys = []
    for pdb in cfg["power_db"]:
        if "no-ris" in cfg["methods"]:
            keys.append((pdb, 0, "no-ris"))
        for l in _divisors(cfg["group_sizes"], n_s):
            for m in ("ao", "two-stage"):
                if m in cfg["methods"]:
                    keys.append((pdb, l, m))
    return keys


def cmd_rate_sweep(cfg: dict, threads: int = 1):
    results = _run_pool(_rate_trial, [(cfg, t) for t in range(cfg["trials"])], threads)
    n_s = Scenario.from_dict(cfg["scenario"]).n_s
    rows = [[float(r[0]), *r[1:]] for r in _mean_rows(results, _rate_keys(cfg, n_s))]
    bad = [v for _, vs in results for v in vs]
    return ["power_db", "group_size", "method", "mean_rate", "trials"], rows, bad


def _robust_trial(job):
    cfg, t = job
    seed = trial_seed(cfg["seed"], t)
    truth = _channels(cfg, seed)
    scen = Scenario.from_dict({**cfg["scenario"], "seed": seed})
    out, bad = {}, []
    for eps in cfg["epsilons"]:
        est = perturb(truth, eps, scen.lambda_B, scen.lambda_F, seed)
        res, b = _rate_designs(est, truth, cfg, scen.noise)
        bad.extend(b)
        for (pdb, l, m), v in res.items():
            out[(float(eps), pdb, l, m)] = v
    return out, bad


def cmd_robustness(cfg: dict, threads: int = 1):
    results = _run_pool(_robust_trial, [(cfg, t) for t in range(cfg["trials"])], threads)
    n_s = Scenario.from_dict(cfg["scenario"]).n_s
    keys = [(float(e), *k) for e in cfg["epsilons"] for k in _rate_keys(cfg, n_s)]
    rows = [[r[0], float(r[1]), *r[2:]] for r in _mean_rows(results, keys)]
    bad = [v for _, vs in results for v in vs]
    return ["epsilon", "power_db", "group_size", "method", "mean_rate", "trials"], rows, bad


# ---------------------------------------------------------------------------
# power-sweep


def _power_trial(job):
    cfg, t = job
    seed = trial_seed(cfg["seed"], t)
    out, bad = {}, []
    for n_s in cfg["n_s_list"]:
        ch = _channels(cfg, seed, n_s=n_s, group_size=1)
        out[(n_s, 0, "no-ris")] = float(np.sum(np.abs(ch.h_d) ** 2))
        prev, prev_val = None, -math.inf
        for l in _divisors(cfg["group_sizes"], n_s):
            theta0 = prev.regroup(l) if prev is not None and l % prev.group_size == 0 else None
            res = maximize_power_saa(ch, l, _opt(cfg), theta0=theta0)
            if not _monotone(res.trace):
                bad.append(f"saa power trace decreased (N_S={n_s}, L={l})")
            if not _unitary_ok(res.theta):
                bad.append(f"non-unitary scattering matrix (N_S={n_s}, L={l})")
            if theta0 is not None and res.value < prev_val * (1 - REL_SLACK):
                bad.append(f"power with L={l} below the nested smaller group (N_S={n_s})")
            prev, prev_val = res.theta, res.value
            out[(n_s, l, "saa")] = res.value
    return out, bad


def cmd_power_sweep(cfg: dict, threads: int = 1):
    results = _run_pool(_power_trial, [(cfg, t) for t in range(cfg["trials"])], threads)
    keys = []
    for n_s in cfg["n_s_list"]:
        keys.append((n_s, 0, "no-ris"))
        keys.extend((n_s, l, "saa") for l in _divisors(cfg["group_sizes"], n_s))
    rows = []
    for r in _mean_rows(results, keys):
        mean = r[3]
        rows.append([*r[:3], mean, 10.0 * math.log10(mean) if mean > 0 else -math.inf, r[4]])
    bad = [v for _, vs in results for v in vs]
    return ["n_s", "group_size", "method", "mean_power", "mean_power_db", "trials"], rows, bad


# ---------------------------------------------------------------------------
# bounds-check


class _Tally:
    """Per-bound counters: number of checks, violations and the worst normalised slack."""

    def __init__(self):
        self.data: dict[str, dict] = {}

    def add(self, name: str, value, limit, scale: float, upper: bool = True) -> None:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        limit = np.broadcast_to(np.asarray(limit, dtype=float), value.shape)
        finite = np.isfinite(limit)
        entry = self.data.setdefault(name, {"checks": 0, "violations": 0, "max_slack": -math.inf})
        if not np.any(finite):
            return
        excess = (value - limit) if upper else (limit - value)
        excess = excess[finite] / max(scale, np.finfo(float).tiny)
        entry["checks"] += int(excess.size)
        entry["violations"] += int(np.sum(excess > REL_SLACK))
        entry["max_slack"] = max(entry["max_slack"], float(np.max(excess)))

    def merge(self, other: "_Tally") -> None:
        for k, v in other.data.items():
            e = self.data.setdefault(k, {"checks": 0, "violations": 0, "max_slack": -math.inf})
            e["checks"] += v["checks"]
            e["violations"] += v["violations"]
            e["max_slack"] = max(e["max_slack"], v["max_slack"])


def _random_thetas(n_s: int, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Alternate diagonal-phase and fully-connected Haar scattering matrices."""
    out = []
    for k in range(count):
        if k % 2 == 0:
            out.append(np.diag(np.exp(2j * np.pi * rng.random(n_s))))
        else:
            out.append(random_unitary(n_s, rng))
    return out


def _bounds_trial(job):
    cfg, t = job
    seed = trial_seed(cfg["seed"], t)
    ch = _channels(cfg, seed)
    scen = Scenario.from_dict({**cfg["scenario"], "seed": seed})
    tally = _Tally()
    attain: list[dict] = []
    n_r, n_s, n_t = ch.n_r, ch.n_s, ch.n_t
    n = min(n_r, n_t)
    n_bar = max(n_r, n_s, n_t)
    b, f = svdvals(ch.h_b), svdvals(ch.h_f)
    bp, fp = pad(b, n_s), pad(f, n_s)
    scale_amp = bp[0] * fp[0]
    nd = sv_bounds_nd_report(bp, fp, n_modes=n)
    p_lo, p_hi = power_bounds_nd(b, f, n_s)
    prods = [product_bounds_nd(b, f, k, n_bar) for k in range(1, n_bar + 1)]
    # Capacity bounds are scale-free in rho * |H|^2; use the scenario SNR at 0 dB transmit power.
    rho = 1.0 / scen.noise
    caps = capacity_extreme_bounds(b, f, rho, n)
    r_b, r_f = numerical_rank(b), numerical_rank(f)
    rd = []
    if r_f >= 1:
        rd.append(("rank-deficient-forward", sv_bounds_rank_deficient(rank_deficient_T(ch.h_d, ch.h_f, "forward"), r_f, n)))
    if r_b >= 1:
        rd.append(("rank-deficient-backward", sv_bounds_rank_deficient(rank_deficient_T(ch.h_d, ch.h_b, "backward"), r_b, n)))
    full_scale = max(svdvals(ch.h_d)[0] + scale_amp, np.finfo(float).tiny)
    vacuous = {name: bool(not np.any(rep.valid_upper) and not np.any(rep.lower > 0)) for name, rep in rd}

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(7,))))
    thetas = _random_thetas(n_s, cfg["thetas"], rng)
    for theta in thetas:
        ind = ch.h_b @ theta @ ch.h_f
        sv = pad(svdvals(ind), n_bar)
        tally.add("sv-nd-upper", sv[:n], nd.upper, scale_amp)
        tally.add("sv-nd-lower", sv[:n], nd.lower, scale_amp, upper=False)
        for v in horn_r1_check(b, f, sv):
            tally.add("horn-r1", v["sigma_h"], v["limit"], scale_amp)
        tally.add("horn-r1", 0.0, 0.0, 1.0)  # count the check even when it passes
        for k, (lo, hi) in enumerate(prods, start=1):
            tally.add("product-largest", np.prod(sv[:k]), hi, scale_amp ** k)
            tally.add("product-smallest", np.prod(sv[n_bar - k:]), lo, scale_amp ** k, upper=False)
        pw = float(np.sum(sv ** 2))
        tally.add("power-upper", pw, p_hi, scale_amp ** 2)
        tally.add("power-lower", pw, p_lo, scale_amp ** 2, upper=False)
        c_nats = capacity(ind, 1.0, scen.noise) * math.log(2.0)
        tally.add("capacity-low-snr", c_nats / math.log(2.0), caps.low, max(caps.low, 1.0))
        if math.isfinite(caps.high) and np.all(sv[:n] > 0):
            approx = (n * math.log(rho / n) + 2.0 * float(np.sum(np.log(sv[:n])))) / math.log(2.0)
            tally.add("capacity-high-snr", approx, caps.high, max(abs(caps.high), 1.0))
        full = pad(svdvals(ch.h_d + ind), n)
        for name, rep in rd:
            tally.add(name + "-upper", full[rep.valid_upper], rep.upper[rep.valid_upper], full_scale)
            tally.add(name + "-lower", full[rep.valid_lower], rep.lower[rep.valid_lower], full_scale, upper=False)

    # Extremal designs must meet their bounds with equality.
    ind_ch = ch.drop_direct()
    for m in range(min(n, n_s)):
        for maximize in (True, False):
            th = sv_extremal_nd(ch.h_b, ch.h_f, m, maximize)
            got = float(pad(svdvals(assemble(ind_ch, th)), n)[m])
            want = nd.upper[m] if maximize else nd.lower[m]
            ok = abs(got - want) <= REL_SLACK * max(scale_amp, np.finfo(float).tiny)
            attain.append({"design": "sv-max" if maximize else "sv-min", "mode": m, "target": want, "achieved": got, "ok": ok})
    for maximize, want in ((True, p_hi), (False, p_lo)):
        got = float(np.sum(np.abs(assemble(ind_ch, power_extremal_nd(ch.h_b, ch.h_f, maximize))) ** 2))
        ok = abs(got - want) <= REL_SLACK * max(p_hi, np.finfo(float).tiny)
        attain.append({"design": "power-max" if maximize else "power-min", "mode": None, "target": want, "achieved": got, "ok": ok})
    lo, hi = dof_range(ch.h_b, ch.h_f)
    for maximize, want in ((True, hi), (False, lo)):
        got = numerical_rank(assemble(ind_ch, dof_extremal(ch.h_b, ch.h_f, maximize)), scale=scale_amp)
        attain.append({"design": "dof-max" if maximize else "dof-min", "mode": None, "target": want, "achieved": got, "ok": got == want})
    return tally, attain, vacuous


def cmd_bounds_check(cfg: dict, threads: int = 1):
    results = _run_pool(_bounds_trial, [(cfg, t) for t in range(cfg["trials"])], threads)
    tally = _Tally()
    attain_fail = 0
    attain_total = 0
    vacuous: dict[str, int] = {}
    for t, (tl, at, vac) in enumerate(results):
        tally.merge(tl)
        attain_total += len(at)
        attain_fail += sum(not a["ok"] for a in at)
        for k, v in vac.items():
            vacuous[k] = vacuous.get(k, 0) + int(v)
    total_viol = sum(v["violations"] for v in tally.data.values())
    report = {
        "trials": cfg["trials"],
        "thetas_per_trial": cfg["thetas"],
        "bounds": {
            k: {**v, "max_slack": v["max_slack"] if math.isfinite(v["max_slack"]) else None}
            for k, v in sorted(tally.data.items())
        },
        "vacuous_rank_deficient_trials": dict(sorted(vacuous.items())),
        "attainment": {"checks": attain_total, "failures": attain_fail},
        "total_violations": total_viol,
    }
    bad = []
    if total_viol:
        bad.append(f"{total_viol} bound violations")
    if attain_fail:
        bad.append(f"{attain_fail} extremal designs missed their bound")
    header = ["bound", "checks", "violations", "max_slack"]
    rows = [[k, v["checks"], v["violations"], v["max_slack"]] for k, v in sorted(tally.data.items())]
    rows.append(["attainment", attain_total, attain_fail, float("nan")])
    return header, rows, bad, report


# ---------------------------------------------------------------------------
# example


EX2_H_B = np.array([[-0.2059 + 0.5914j, -0.0909 + 0.5861j], [0.4131 + 0.2651j, -0.1960 + 0.4650j]])
EX2_H_F = np.array([[-0.6362 + 0.1332j, -0.1572 + 1.5538j], [0.0196 + 0.4011j, -0.3170 - 0.2303j]])
EX3_H_B = np.array([[1, 1, 0, 0], [0, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0]], dtype=complex)
EX3_H_F = np.diag([1, 1, 0, 0]).astype(complex)
EX4_H_B = np.diag([3.0, 2.0, 1.0]).astype(complex)
EX4_H_F = np.diag([4.0, 0.0, 5.0]).astype(complex)


def manipulation_range(svs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Percent swing ``(max - avg) / avg`` and ``(min - avg) / avg`` per mode, ``avg`` the midrange."""
    hi, lo = svs.max(axis=0), svs.min(axis=0)
    avg = 0.5 * (hi + lo)
    return 100.0 * (hi - avg) / avg, 100.0 * (lo - avg) / avg


def example2_grids(points: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Singular values of the example channel over diagonal and symmetric 2x2 scattering grids."""
    t = np.linspace(0.0, 2.0 * np.pi, points, endpoint=False)
    a, b = np.meshgrid(t, t, indexing="ij")
    diag = np.zeros((a.size, 2, 2), dtype=complex)
    diag[:, 0, 0] = np.exp(1j * a.ravel())
    diag[:, 1, 1] = np.exp(1j * b.ravel())
    alpha, psi = a.ravel(), b.ravel()
    sym = np.empty((alpha.size, 2, 2), dtype=complex)
    sym[:, 0, 0] = np.exp(1j * alpha) * np.cos(psi)
    sym[:, 1, 1] = np.exp(-1j * alpha) * np.cos(psi)
    sym[:, 0, 1] = sym[:, 1, 0] = 1j * np.sin(psi)
    sv_d = np.linalg.svd(EX2_H_B @ diag @ EX2_H_F, compute_uv=False)
    sv_bd = np.linalg.svd(EX2_H_B @ sym @ EX2_H_F, compute_uv=False)
    return sv_d, sv_bd


def _item(name, expected, observed, tol, ok=None):
    if ok is None:
        ok = abs(float(observed) - float(expected)) <= tol
    return {"item": name, "expected": expected, "observed": observed, "tolerance": tol, "status": "PASS" if ok else "FAIL"}


def run_example(name: str) -> list[dict]:
    items = []
    if name == "ex2":
        sv_d, sv_bd = example2_grids(64)
        for label, svs, target in (("d-ris", sv_d, 9.0), ("bd-ris-symmetric", sv_bd, 42.0)):
            up, down = manipulation_range(svs)
            for m in range(2):
                items.append(_item(f"{label} eta_{m + 1}+ (%)", target, float(up[m]), 3.0))
                items.append(_item(f"{label} eta_{m + 1}- (%)", -target, float(down[m]), 3.0))
    elif name == "ex3":
        ch = ChannelSet.without_direct(EX3_H_B, EX3_H_F)
        h_max = assemble(ch, dof_extremal(EX3_H_B, EX3_H_F, True))
        h_min = assemble(ch, dof_extremal(EX3_H_B, EX3_H_F, False))
        items.append(_item("rank with dof-max design", 2, numerical_rank(h_max, scale=2.0), 0))
        items.append(_item("||H||_F with dof-min design", 0.0, float(np.linalg.norm(h_min)), 1e-12))
        lo, hi = dof_range(EX3_H_B, EX3_H_F)
        items.append(_item("dof range min", 0, lo, 0))
        items.append(_item("dof range max", 2, hi, 0))
        sv = svdvals(h_max)
        for m, want in enumerate([math.sqrt(2.0), 1.0, 0.0, 0.0]):
            items.append(_item(f"dof-max sigma_{m + 1}", want, float(sv[m]), 1e-9))
    elif name == "ex4":
        ch = ChannelSet.without_direct(EX4_H_B, EX4_H_F)
        rng = np.random.default_rng(4)
        phases = [np.eye(3)] + [np.diag(np.exp(2j * np.pi * rng.random(3))) for _ in range(4)]
        worst = max(float(np.max(np.abs(svdvals(assemble(ch, p)) - [12.0, 5.0, 0.0]))) for p in phases)
        items.append(_item("d-ris sv deviation from [12, 5, 0]", 0.0, worst, 1e-9))
        b, f = svdvals(EX4_H_B), svdvals(EX4_H_F)
        for m, (wlo, whi) in enumerate([(8.0, 15.0), (4.0, 10.0), (0.0, 0.0)]):
            lo, hi = sv_bounds_nd(b, f, m)
            items.append(_item(f"sigma_{m + 1} lower bound", wlo, lo, 1e-12))
            items.append(_item(f"sigma_{m + 1} upper bound", whi, hi, 1e-12))
            for maximize, want in ((False, wlo), (True, whi)):
                got = float(svdvals(assemble(ch, sv_extremal_nd(EX4_H_B, EX4_H_F, m, maximize)))[m])
                side = "upper" if maximize else "lower"
                items.append(_item(f"sigma_{m + 1} {side} bound attained", want, got, 1e-9 * max(want, 1.0)))
        items.append(_item("pivot sigma_1 max (1-based)", "(1, 1)", str(tuple(i + 1 for i in sv_pivot(EX4_H_B, EX4_H_F, 0, True))), 0,
                           ok=sv_pivot(EX4_H_B, EX4_H_F, 0, True) == (0, 0)))
        items.append(_item("pivot sigma_2 min (1-based)", "(3, 2)", str(tuple(i + 1 for i in sv_pivot(EX4_H_B, EX4_H_F, 1, False))), 0,
                           ok=sv_pivot(EX4_H_B, EX4_H_F, 1, False) == (2, 1)))
        lo, hi = power_bounds_nd(b, f)
        items.append(_item("power upper bound", 289.0, hi, 1e-9))
        items.append(_item("power lower bound", 89.0, lo, 1e-9))
        items.append(_item("horn r=1 violations for [12, 5, 0]", 0, len(horn_r1_check(b, f, [12.0, 5.0, 0.0])), 0))
    else:
        raise ConfigError(f"unknown example {name!r}; choose ex2, ex3 or ex4")
    return items


# ---------------------------------------------------------------------------
# Output


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(type(x))


def _clean(x):
    """Replace non-finite floats by the tags used in bound reports."""
    if isinstance(x, float):
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "unbounded" if x > 0 else "neg_infinity"
        return x
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def render(header: list, rows: list, fmt: str, extra: dict | None = None) -> str:
    if fmt == "json":
        doc = extra if extra is not None else {"columns": header, "rows": rows}
        return json.dumps(_clean(doc), indent=2, sort_keys=True, default=_json_default) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write output {out}: {exc}") from exc


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--seed", type=int, metavar="U64", help="base RNG seed (overrides config)")
    common.add_argument("--trials", type=int, metavar="N", help="Monte-Carlo trials (overrides config)")
    common.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    common.add_argument("--format", choices=["csv", "json"], help="output format")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="worker processes")

    parser = argparse.ArgumentParser(prog="bdshape", description="BD-RIS channel shaping experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pareto", parents=[common], help="singular-value region sweep")
    sub.add_parser("rate-sweep", parents=[common], help="rate versus transmit power")
    sub.add_parser("power-sweep", parents=[common], help="power gain versus surface size")
    sub.add_parser("bounds-check", parents=[common], help="Monte-Carlo bound soundness check")
    ex = sub.add_parser("example", parents=[common], help="reproduce a worked example")
    ex.add_argument("name", choices=["ex2", "ex3", "ex4"])
    sub.add_parser("robustness", parents=[common], help="channel estimation error sweep")
    return parser


_COMMANDS = {
    "pareto": cmd_pareto,
    "rate-sweep": cmd_rate_sweep,
    "power-sweep": cmd_power_sweep,
    "robustness": cmd_robustness,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_USAGE
    try:
        user = load_config(args.config)
        if args.command == "example":
            items = run_example(args.name)
            header = ["item", "expected", "observed", "tolerance", "status"]
            rows = [[i[k] for k in header] for i in items]
            bad = [i["item"] for i in items if i["status"] != "PASS"]
            fmt = args.format or "json"
            text = render(header, rows, fmt, {"example": args.name, "items": items} if fmt == "json" else None)
        elif args.command == "bounds-check":
            cfg = resolve(args.command, user, args)
            header, rows, bad, report = cmd_bounds_check(cfg, args.threads)
            fmt = args.format or "json"
            text = render(header, rows, fmt, report if fmt == "json" else None)
        else:
            cfg = resolve(args.command, user, args)
            header, rows, bad = _COMMANDS[args.command](cfg, args.threads)
            fmt = args.format or "csv"
            text = render(header, rows, fmt)
        emit(text, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if bad:
        for b in bad[:20]:
            print(f"invariant violated: {b}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
