"""Experiment drivers.

Every driver takes a master ``seed`` and a ``threads`` count and returns an
`ExperimentReport`. Random numbers come from per-task substreams (per draw
block, per transition, per pair or per replica), so results do not depend
on ``threads``.
"""

from __future__ import annotations

import logging
import time

import numpy as np
from scipy import stats

from ..flows import EXACT, Flow, coefficients
from ..gaussmodel import (ScaleBlockTarget, ShellSpec, default_shell, in_position_shell, in_velocity_set,
                          sample_phase_point, shell_growth, two_scale_norm)
from ..hmc import HMCKernel, IntegrationTimeLaw, exact_contraction_rate
from ..nuts import STOP_REASONS, NUTSKernel, OrbitParams, build_orbit, select_index
from ..rng import parallel_chunks, substream, substreams
from ..uturn import block_gram, f_unif
from .predict import predict_t_star, uniformization_bound
from .report import ExperimentReport, Table

logger = logging.getLogger(__name__)

__all__ = [
    "concentration_experiment",
    "orbit_statistics_experiment",
    "index_selection_experiment",
    "contraction_experiment",
    "mixing_experiment",
    "uniformization_experiment",
    "radial_ks",
    "start_positions",
]

WEAK_CONCENTRATION_RATIO = 10.0
_COALESCED = 1e-10


def _stationary_x(target: ScaleBlockTarget, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(target.dim) / np.sqrt(target.m_coord)


def _time_coefficients(target: ScaleBlockTarget, times, flow: Flow):
    times = np.asarray(times, dtype=float)
    if flow.kind == EXACT:
        return coefficients(target, times, flow)
    return coefficients(target, flow.to_index(times), flow)


def _pair_dots(gram, coef_v, coef_x):
    """``v_{t_j} . x_{t_k}`` for all pairs, shape ``(R, J, K)``, from the block Gram."""
    _, _, c, e = coef_v
    a, b, _, _ = coef_x
    sxx, sxv, svv = gram[..., 0], gram[..., 1], gram[..., 2]
    return (np.einsum("jb,kb,rb->rjk", c, a, sxx) + np.einsum("jb,kb,rb->rjk", c, b, sxv)
            + np.einsum("jb,kb,rb->rjk", e, a, sxv) + np.einsum("jb,kb,rb->rjk", e, b, svv))


def concentration_experiment(target: ScaleBlockTarget, flow: Flow, t_minus, t_plus, n_draws: int, seed: int,
                             threads: int = 1, batch: int = 1000, config: dict | None = None) -> ExperimentReport:
    """Distribution of the U-turn diagnostic over a ``(t_-, t_+)`` grid at stationarity.

    Per cell: mean of ``v_+ . (x_+ - x_-)`` against the uniform term, and
    mean/std/quantiles of ``f - f_unif``. Draw block ``b`` uses stream
    ``(seed, "draw", b)``.
    """
    start = time.perf_counter()
    t_minus = np.asarray(t_minus, dtype=float)
    t_plus = np.asarray(t_plus, dtype=float)
    if t_minus.max() > t_plus.min():
        raise ValueError("every t_minus must be <= every t_plus")
    flow.check_target(target)
    cm = _time_coefficients(target, t_minus, flow)
    cp = _time_coefficients(target, t_plus, flow)
    hbar = flow.hbar
    dt = t_plus[None, :] - t_minus[:, None]
    fu = np.asarray(f_unif(target, dt, hbar))
    n_blocks = -(-n_draws // batch)

    def run(lo, hi):
        prods, devs = [], []
        for blk in range(lo, hi):
            size = min(batch, n_draws - blk * batch)
            p = sample_phase_point(target, substream(seed, "draw", blk), size)
            g = block_gram(target, p.x, p.v)
            vp_xp = np.diagonal(_pair_dots(g, cp, cp), axis1=1, axis2=2)  # (R, J)
            vm_xm = np.diagonal(_pair_dots(g, cm, cm), axis1=1, axis2=2)  # (R, I)
            vp_xm = _pair_dots(g, cp, cm).transpose(0, 2, 1)  # (R, I, J)
            vm_xp = _pair_dots(g, cm, cp)  # (R, I, J)
            plus = vp_xp[:, None, :] - vp_xm
            minus = vm_xp - vm_xm[:, :, None]
            prods.append(plus)
            devs.append(np.minimum(plus, minus) - fu)
        return np.concatenate(prods), np.concatenate(devs)

    parts = parallel_chunks(run, n_blocks, threads)
    prod = np.concatenate([p for p, _ in parts])
    dev = np.concatenate([d for _, d in parts])

    mean_prod = prod.mean(axis=0)
    se_prod = prod.std(axis=0, ddof=1) / np.sqrt(n_draws)
    within = np.abs(mean_prod - fu) <= 3 * se_prod + 1e-12 * (1 + np.abs(fu))
    mean_dev = dev.mean(axis=0)
    std_dev = dev.std(axis=0, ddof=1)
    q = np.quantile(dev, [0.05, 0.5, 0.95], axis=0)

    # Bernstein-shape tail fit: log P(|dev| >= r) ~ log 2 - c min(r^2 / tr C, r / max sigma)
    absdev = np.abs(dev).ravel()
    radii = np.quantile(absdev, [0.5, 0.8, 0.9, 0.95, 0.99, 0.999])
    radii = radii[radii > 0]
    sigma_max = float(np.max(1.0 / np.sqrt(target.m)))
    xs = np.minimum(radii**2 / target.trace_cov, radii / sigma_max)
    exceed = np.array([(absdev >= r).mean() for r in radii])
    keep = exceed > 0
    ys = np.log(exceed[keep] / 2.0)
    c_hat = float(-np.sum(xs[keep] * ys) / np.sum(xs[keep] ** 2)) if keep.any() else float("nan")

    ratio = target.trace_sqrt_cov / np.sqrt(target.trace_cov)
    report = ExperimentReport("concentration", config or {}, seed)
    table = Table(["seed", "i", "j", "t_minus", "t_plus", "f_unif", "mean_vplus", "se_vplus", "within_3se",
                   "mean_dev", "std_dev", "q05_dev", "q50_dev", "q95_dev"])
    for i in range(t_minus.size):
        for j in range(t_plus.size):
            table.add(seed, i, j, t_minus[i], t_plus[j], fu[i, j], mean_prod[i, j], se_prod[i, j],
                      bool(within[i, j]), mean_dev[i, j], std_dev[i, j], q[0, i, j], q[1, i, j], q[2, i, j])
    report.tables["cells"] = table
    report.summary = {
        "n_draws": n_draws,
        "fraction_within_3se": float(within.mean()),
        "pooled_std_dev": float(np.sqrt(np.mean(std_dev**2))),
        "tail_constant": c_hat,
        "trace_cov": target.trace_cov,
        "trace_sqrt_cov": target.trace_sqrt_cov,
        "uniform_to_deviation_scale": float(ratio),
        "weak_concentration": bool(ratio < WEAK_CONCENTRATION_RATIO),
        "matrices": {"f_unif": fu, "mean_vplus": mean_prod, "std_dev": std_dev, "mean_dev": mean_dev},
    }
    report.check("trace_mean_within_3se", float(within.mean()), 0.95, ">=",
                 "fraction of cells whose mean of v_+.(x_+ - x_-) is within 3 SE of the trace formula")
    report.wall_clock_s = time.perf_counter() - start
    report.threads = threads
    return report


def _transition_records(target, kernel: NUTSKernel, n: int, seed: int, threads: int, batch: int):
    """Independent NUTS transitions from fresh stationary draws; transition ``i`` uses stream ``(seed, "trial", i)``."""

    def run(lo, hi):
        out = []
        for s in range(lo, hi, batch):
            e = min(s + batch, hi)
            gens = substreams(seed, "trial", e - s, start=s)
            x = np.stack([_stationary_x(target, g) for g in gens])
            x_new, info = kernel.step(x, gens, return_info=True)
            out.append((x, x_new, info))
        return out

    chunks = [c for part in parallel_chunks(run, n, threads) for c in part]
    cat = lambda name: np.concatenate([getattr(i, name) for _, _, i in chunks])  # noqa: E731
    return {
        "x": np.concatenate([x for x, _, _ in chunks]),
        "orbit_len": cat("orbit_len"),
        "min_index": cat("min_index"),
        "stop_code": cat("stop_code"),
        "iota": cat("iota"),
        "delta_h": cat("delta_h"),
        "in_uniform_part": cat("in_uniform_part"),
        "v": cat("v"),
    }


def orbit_statistics_experiment(target: ScaleBlockTarget, params: OrbitParams, n_transitions: int, seed: int,
                                threads: int = 1, batch: int = 500, min_fraction: float = 0.99,
                                p_min: float = 1e-3, config: dict | None = None) -> ExperimentReport:
    """Selected orbit lengths, stop reasons and placement uniformity at stationarity."""
    start = time.perf_counter()
    kernel = NUTSKernel(target, params)
    rec = _transition_records(target, kernel, n_transitions, seed, threads, batch)
    pred = predict_t_star(target, params)
    lengths = rec["orbit_len"]
    values, counts = np.unique(lengths, return_counts=True)
    modal = int(values[np.argmax(counts)])
    frac_pred = float(np.mean(lengths == pred.orbit_len))

    sel = lengths == pred.orbit_len
    n_sel = int(sel.sum())
    n_place = pred.orbit_len
    if n_sel > 0 and n_place > 1:
        placement = -rec["min_index"][sel]  # in 0 .. 2^k - 1
        obs = np.bincount(placement, minlength=n_place)[:n_place]
        chi_min = stats.chisquare(obs)
        offset = rec["iota"][sel] - rec["min_index"][sel]
        chi_iota = stats.chisquare(np.bincount(offset, minlength=n_place)[:n_place])
        p_place, p_iota = float(chi_min.pvalue), float(chi_iota.pvalue)
    else:
        p_place = p_iota = float("nan")

    report = ExperimentReport("orbits", config or {}, seed)
    table = Table(["seed", "transition", "orbit_len", "min_index", "stop_reason", "iota", "delta_h"])
    for i in range(n_transitions):
        table.add(seed, i, int(lengths[i]), int(rec["min_index"][i]), STOP_REASONS[rec["stop_code"][i]],
                  int(rec["iota"][i]), float(rec["delta_h"][i]))
    report.tables["transitions"] = table
    hist = Table(["seed", "orbit_len", "physical_length", "count", "frequency"])
    for v, c in zip(values, counts):
        hist.add(seed, int(v), float(params.h * (v - 1)), int(c), c / n_transitions)
    report.tables["orbit_lengths"] = hist
    report.summary = {
        "predicted": {"t_star": pred.t_star, "k_star": pred.k_star, "capped": pred.capped,
                      "orbit_len": pred.orbit_len},
        "modal_orbit_len": modal,
        "modal_physical_length": float(params.h * (modal - 1)),
        "fraction_predicted_len": frac_pred,
        "stop_reasons": {r: int(np.sum(rec["stop_code"] == k)) for k, r in enumerate(STOP_REASONS)},
        "placement_chi2_pvalue": p_place,
        "index_chi2_pvalue": p_iota,
        "uniform_part_fraction": float(np.mean(rec["in_uniform_part"])),
    }
    report.check("fraction_predicted_len", frac_pred, min_fraction, ">=",
                 f"transitions selecting |I| = {pred.orbit_len}")
    report.check("placement_uniformity_pvalue", p_place, p_min, ">",
                 "chi-square of min I over its placements given |I| = 2^k*")
    report.wall_clock_s = time.perf_counter() - start
    report.threads = threads
    return report


def index_selection_experiment(target: ScaleBlockTarget, params: OrbitParams, n_draws: int, seed: int,
                               p_min: float = 1e-3, config: dict | None = None) -> ExperimentReport:
    """Repeated index selection on one fixed orbit, tested for uniformity."""
    start = time.perf_counter()
    rng = substream(seed, "init", 0)
    p = sample_phase_point(target, rng)
    trace = build_orbit(target, p, params, rng)
    draws = substream(seed, "draw", 0)
    iota = np.array([select_index(trace, target, p, draws) for _ in range(n_draws)])
    n = len(trace.orbit)
    counts = np.bincount(iota - trace.orbit.i_min, minlength=n)
    pval = float(stats.chisquare(counts).pvalue) if n > 1 else 1.0
    report = ExperimentReport("index_selection", config or {}, seed)
    table = Table(["seed", "index", "count"])
    for k, c in enumerate(counts):
        table.add(seed, trace.orbit.i_min + k, int(c))
    report.tables["index_counts"] = table
    report.summary = {"orbit": [trace.orbit.i_min, trace.orbit.i_max], "stop_reason": trace.stop_reason,
                      "chi2_pvalue": pval}
    report.check("index_uniformity_pvalue", pval, p_min, ">")
    report.wall_clock_s = time.perf_counter() - start
    return report


def contraction_experiment(target: ScaleBlockTarget, law: IntegrationTimeLaw, flow: Flow, n_pairs: int,
                           n_steps: int, seed: int, threads: int = 1, batch: int = 1000,
                           config: dict | None = None) -> ExperimentReport:
    """Synchronously coupled HMC pairs from independent stationary starts.

    Reports per-step ratios ``|X - X~|_2S / |x - x~|_2S`` (total and per
    block) and compares their mean with ``1 - rho``.
    """
    start = time.perf_counter()
    kernel = HMCKernel(target, law, flow)
    rho = exact_contraction_rate(target, law, flow.hbar)
    sqrt_m = np.sqrt(target.m)

    def run(lo, hi):
        tot, blk = [], []
        for s in range(lo, hi, batch):
            e = min(s + batch, hi)
            gens = substreams(seed, "pair", e - s, start=s)
            x = np.stack([_stationary_x(target, g) for g in gens])
            y = np.stack([_stationary_x(target, g) for g in gens])
            dist = [two_scale_norm(target, x - y)]
            bdist = [np.sqrt(target.block_sq_norms(x - y)) * sqrt_m]
            for _ in range(n_steps):
                x, y = kernel.coupled_step(x, y, gens)
                dist.append(two_scale_norm(target, x - y))
                bdist.append(np.sqrt(target.block_sq_norms(x - y)) * sqrt_m)
            tot.append(np.stack(dist, axis=1))
            blk.append(np.stack(bdist, axis=1))
        return np.concatenate(tot), np.concatenate(blk)

    parts = parallel_chunks(run, n_pairs, threads)
    dist = np.concatenate([p for p, _ in parts])  # (P, n_steps + 1)
    bdist = np.concatenate([b for _, b in parts])  # (P, n_steps + 1, B)
    # Past numerical coalescence the difference is rounding noise; times are
    # fresh each step, so dropping those steps does not bias later ratios.
    floor = _COALESCED * dist[:, :1]
    bfloor = _COALESCED * bdist[:, :1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dist[:, :-1] > floor, dist[:, 1:] / dist[:, :-1], np.nan)
        bratio = np.where(bdist[:, :-1] > bfloor, bdist[:, 1:] / bdist[:, :-1], np.nan)

    def mean_se(r):
        # per-step ratios are independent given fresh (v, T), so pool them
        vals = r[np.isfinite(r)]
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))

    mean, se = mean_se(ratio)
    bound = 1.0 - rho
    report = ExperimentReport("contraction", config or {}, seed)
    table = Table(["seed", "step", "mean_ratio", "se_ratio", "geo_mean_ratio"]
                  + [f"mean_ratio_block{b}" for b in range(target.n_blocks)])
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(ratio)
    for k in range(n_steps):
        col = ratio[:, k][np.isfinite(ratio[:, k])]
        lk = logs[:, k][np.isfinite(logs[:, k])]
        geo = float(np.exp(lk.mean())) if lk.size else 0.0
        se_k = float(col.std(ddof=1) / np.sqrt(col.size)) if col.size > 1 else float("nan")
        table.add(seed, k + 1, float(col.mean()), se_k, geo,
                  *[float(np.nanmean(bratio[:, k, b])) for b in range(target.n_blocks)])
    report.tables["steps"] = table
    report.summary = {"rho": rho, "bound": bound, "mean_ratio": mean, "se_ratio": se, "n_pairs": n_pairs,
                      "n_steps": n_steps}
    report.check("contraction_factor", mean, bound + 3 * se, "<=", f"1 - rho = {bound:.6g} plus 3 SE")
    if target.n_blocks > 1:
        per_block = []
        for b in range(target.n_blocks):
            mb, sb = mean_se(bratio[:, :, b])
            per_block.append({"mean_ratio": mb, "se_ratio": sb})
            report.check(f"contraction_factor_block{b}", mb, bound + 3 * sb, "<=")
        report.summary["per_block"] = per_block
    report.wall_clock_s = time.perf_counter() - start
    report.threads = threads
    return report


def radial_ks(target: ScaleBlockTarget, x) -> np.ndarray:
    """Per-block KS distance of the whitened squared radii from ``chi2(d_i)``."""
    return _ks_from_radii(target, target.whitened_sq_radii(x))


def _ks_from_radii(target: ScaleBlockTarget, radii) -> np.ndarray:
    return np.array([stats.kstest(radii[:, b], "chi2", args=(int(target.d[b]),)).statistic
                     for b in range(target.n_blocks)])


def start_positions(target: ScaleBlockTarget, kind: str, n: int, seed: int, point=None) -> np.ndarray:
    """``point`` (default origin), ``stationary`` or ``overdispersed`` (stationary draw scaled by 3)."""
    if kind == "point":
        x0 = np.zeros(target.dim) if point is None else target.check_dim(np.asarray(point, dtype=float))
        return np.tile(x0, (n, 1))
    gens = substreams(seed, "init", n)
    x = np.stack([_stationary_x(target, g) for g in gens])
    if kind == "stationary":
        return x
    if kind == "overdispersed":
        return 3.0 * x
    raise ValueError(f"unknown start {kind!r}")


def mixing_experiment(target: ScaleBlockTarget, kernel, n_replicas: int, horizon: int, checkpoints, start: str,
                      seed: int, eps: float = 0.05, threads: int = 1, shell_c: float = 3.0, point=None,
                      max_estimate: float | None = None, config: dict | None = None) -> ExperimentReport:
    """Per-block radial KS distance over time for independent replica chains.

    The mixing estimate is the first checkpoint whose largest per-block KS
    distance is below ``eps``; if none is, the estimate is censored at the
    horizon. Replica ``r`` uses stream ``(seed, "replica", r)`` for its
    transitions and ``(seed, "init", r)`` for its start. Shell exits are
    counted against the grown shell of a ``c sqrt(d)`` initial shell.
    """
    t0 = time.perf_counter()
    checkpoints = sorted({int(c) for c in checkpoints})
    if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] > horizon):
        raise ValueError("checkpoints must lie in [0, horizon]")
    ck_index = {c: k for k, c in enumerate(checkpoints)}
    x_start = start_positions(target, start, n_replicas, seed, point)
    is_nuts = isinstance(kernel, NUTSKernel)
    hbar = kernel.flow.hbar

    def run(lo, hi):
        gens = substreams(seed, "replica", hi - lo, start=lo)
        x = x_start[lo:hi].copy()
        snaps = np.empty((len(checkpoints), hi - lo, target.n_blocks))
        n_uniform = np.zeros(horizon, np.int64)
        len_sum = np.zeros(horizon)
        if 0 in ck_index:
            snaps[ck_index[0]] = target.whitened_sq_radii(x)
        for t in range(1, horizon + 1):
            if is_nuts:
                x, info = kernel.step(x, gens, return_info=True)
                n_uniform[t - 1] = int(info.in_uniform_part.sum())
                len_sum[t - 1] = float(info.orbit_len.sum())
            else:
                x = kernel.step(x, gens)
            if t in ck_index:
                snaps[ck_index[t]] = target.whitened_sq_radii(x)
        return snaps, n_uniform, len_sum

    parts = parallel_chunks(run, n_replicas, threads)
    snaps = np.concatenate([p[0] for p in parts], axis=1)
    n_uniform = sum(p[1] for p in parts)
    len_sum = sum(p[2] for p in parts)

    shell0 = default_shell(target, shell_c)
    exited = np.zeros(n_replicas, bool)
    ks = np.zeros((len(checkpoints), target.n_blocks))
    exits = np.zeros(len(checkpoints), np.int64)
    for k, c in enumerate(checkpoints):
        ks[k] = _ks_from_radii(target, snaps[k])
        grown = shell_growth(shell0, shell0.r, hbar, c, target)
        exited |= np.any(np.abs(snaps[k] - target.d) > np.asarray(grown.alpha), axis=-1)
        exits[k] = int(exited.sum())
    max_ks = ks.max(axis=1) if len(checkpoints) else np.zeros(0)
    below = np.flatnonzero(max_ks < eps)
    censored = below.size == 0
    estimate = float(horizon) if censored else float(checkpoints[below[0]])

    report = ExperimentReport("mixing", config or {}, seed)
    table = Table(["seed", "checkpoint", "max_ks"] + [f"ks_block{b}" for b in range(target.n_blocks)]
                  + ["shell_exits"])
    for k, c in enumerate(checkpoints):
        table.add(seed, c, float(max_ks[k]), *[float(v) for v in ks[k]], int(exits[k]))
    report.tables["checkpoints"] = table
    report.summary = {
        "mixing_estimate": estimate,
        "censored": bool(censored),
        "eps": eps,
        "n_replicas": n_replicas,
        "horizon": horizon,
        "start": start,
        "max_ks_all_checkpoints": float(max_ks.max()) if max_ks.size else float("nan"),
        "shell_exits": int(exits[-1]) if exits.size else 0,
        "shell0": shell0.to_json(),
    }
    if is_nuts:
        report.summary["uniform_part_rejection_rate"] = float(1 - n_uniform.sum() / (horizon * n_replicas))
        report.summary["mean_orbit_len"] = float(len_sum.sum() / (horizon * n_replicas))
    if start == "stationary":
        report.check("stationary_ks", report.summary["max_ks_all_checkpoints"], eps, "<",
                     "largest per-block KS over all checkpoints")
    if max_estimate is not None:
        report.check("mixing_estimate", estimate, max_estimate, "<=",
                     "censored at horizon" if censored else "")
    report.wall_clock_s = time.perf_counter() - t0
    report.threads = threads
    return report


def uniformization_experiment(target: ScaleBlockTarget, params: OrbitParams, n_transitions: int, seed: int,
                              shell: ShellSpec | None = None, threads: int = 1, batch: int = 200,
                              config: dict | None = None) -> ExperimentReport:
    """Frequency of ``v`` leaving the velocity set or index selection leaving its uniform part.

    Starts are fresh stationary draws; only those inside the position shell
    count, matching the bound's hypothesis.
    """
    start = time.perf_counter()
    shell = shell or default_shell(target)
    kernel = NUTSKernel(target, params)
    rec = _transition_records(target, kernel, n_transitions, seed, threads, batch)
    x, v = rec["x"], rec["v"]
    in_shell = in_position_shell(target, x, shell)
    v_ok = in_velocity_set(target, x, v, shell)
    bad = ~(v_ok & rec["in_uniform_part"])
    n_in = int(in_shell.sum())
    freq = float(bad[in_shell].mean()) if n_in else float("nan")
    bound = uniformization_bound(target, shell, params.hbar)
    report = ExperimentReport("uniformization", config or {}, seed)
    table = Table(["seed", "transition", "in_shell", "v_in_set", "in_uniform_part", "orbit_len", "delta_h"])
    for i in range(n_transitions):
        table.add(seed, i, bool(in_shell[i]), bool(v_ok[i]), bool(rec["in_uniform_part"][i]),
                  int(rec["orbit_len"][i]), float(rec["delta_h"][i]))
    report.tables["transitions"] = table
    report.summary = {
        "h": params.h,
        "k_max": params.k_max,
        "shell": shell.to_json(),
        "n_in_shell": n_in,
        "complement_frequency": freq,
        "bound": bound,
        "bound_vacuous": bool(bound >= 1.0),
        "uniform_part_rejection_frequency": float(1 - rec["in_uniform_part"].mean()),
        "velocity_set_miss_frequency": float(1 - v_ok.mean()),
        "max_abs_delta_h": float(np.abs(rec["delta_h"]).max()),
    }
    report.check("uniformization_complement", freq, bound, "<=")
    report.wall_clock_s = time.perf_counter() - start
    report.threads = threads
    return report
