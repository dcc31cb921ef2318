"""Critical orbit length, the orbit-selection condition, and the accelerated phase."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from ..gaussmodel import ScaleBlockTarget, ShellSpec, sample_phase_point
from ..nuts import OrbitParams
from ..uturn import block_gram, delta_bound, f_unif, gram_products

__all__ = [
    "TStarPrediction",
    "predict_t_star",
    "SelectionCheck",
    "check_selection_condition",
    "empirical_deviation",
    "leapfrog_mixing_step",
    "uniformization_bound",
    "PhasePointQuery",
    "PhaseResult",
    "phase_membership",
    "phase_scan",
    "phase_boundary_constant",
    "phase_boundary_ratio",
    "phase_boundary_asymptotic",
]


@dataclass(frozen=True)
class TStarPrediction:
    t_star: float
    k_star: int
    capped: bool

    @property
    def orbit_len(self) -> int:
        return 2**self.k_star


def predict_t_star(target: ScaleBlockTarget, params: OrbitParams, hbar: float | None = None) -> TStarPrediction:
    """First menu length with negative uniform term, else the longest length (capped)."""
    hbar = params.hbar if hbar is None else hbar
    menu = params.menu
    if menu.size == 0:
        return TStarPrediction(0.0, 0, True)
    f = np.atleast_1d(f_unif(target, menu, hbar))
    neg = np.flatnonzero(f < 0)
    if neg.size:
        k = int(neg[0])
        return TStarPrediction(float(menu[k]), k + 1, False)
    return TStarPrediction(float(menu[-1]), int(params.k_max), True)


@dataclass
class SelectionCheck:
    ok: bool
    offenders: list[tuple[float, float]]
    delta: np.ndarray
    lengths: np.ndarray
    f_unif: np.ndarray


def check_selection_condition(target: ScaleBlockTarget, params: OrbitParams, hbar: float | None = None,
                              shell: ShellSpec | None = None, delta=None) -> SelectionCheck:
    """No menu length may have ``-delta <= f_unif < delta``.

    ``delta`` defaults to `delta_bound` for ``shell``; an array gives one
    value per menu length (for the empirical-deviation override).
    """
    hbar = params.hbar if hbar is None else hbar
    menu = params.menu
    if delta is None:
        if shell is None:
            raise ValueError("need a shell or an explicit delta")
        delta = delta_bound(target, shell, hbar)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), menu.shape)
    f = np.atleast_1d(f_unif(target, menu, hbar)) if menu.size else np.zeros(0)
    bad = (f >= -delta) & (f < delta)
    offenders = [(float(t), float(v)) for t, v in zip(menu[bad], f[bad])]
    return SelectionCheck(not offenders, offenders, np.array(delta), menu, f)


def empirical_deviation(target: ScaleBlockTarget, params: OrbitParams, n_draws: int,
                        rng: np.random.Generator, factor: float = 4.0) -> np.ndarray:
    """``factor`` times the measured std of ``f - f_unif`` at each menu length (``t_- = 0``)."""
    flow = params.flow_obj
    p = sample_phase_point(target, rng, n_draws)
    gram = block_gram(target, p.x, p.v)
    steps = (2 ** np.arange(1, int(params.k_max) + 1) - 1).astype(np.int64)
    lo = np.zeros((n_draws, steps.size), np.int64)
    hi = np.broadcast_to(steps, lo.shape)
    p_hi, p_lo = gram_products(target, flow, gram, lo, hi)
    f = np.minimum(p_hi, p_lo)
    dev = f - np.asarray(f_unif(target, params.menu, params.hbar))
    return factor * dev.std(axis=0, ddof=1)


def leapfrog_mixing_step(target: ScaleBlockTarget, t_star: float, c: float = 0.5) -> float:
    """``c m_max^(-1/2) dim^(-1/4) min(m_min^(1/2) t*, 1)^2``."""
    m1, m2 = float(target.m.min()), float(target.m.max())
    return float(c / np.sqrt(m2) * target.dim ** -0.25 * min(np.sqrt(m1) * t_star, 1.0) ** 2)


def uniformization_bound(target: ScaleBlockTarget, shell: ShellSpec, hbar: float) -> float:
    """Upper bound on ``P(v outside the velocity set, or index selection leaves its uniform part)``.

    ``8 exp(-min_i r_i^2 / (8 d_i)) + 2 hbar^2 max_i (m_i max(a_i, r_i) + hbar^2 m_i^2 d_i)``;
    values of 1 or more are vacuous.
    """
    alpha, r = shell._arrays(target)
    d = target.d.astype(float)
    m = target.m
    gauss = 8.0 * np.exp(-np.min(r**2 / d) / 8.0)
    energy = 2.0 * hbar**2 * np.max(m * np.maximum(alpha, r) + hbar**2 * m**2 * d)
    return float(gauss + energy)


# -- accelerated phase ----------------------------------------------------------------

_GRID_POINTS = 10_000
_BOUNDARY_TOL = 1e-10


@dataclass(frozen=True)
class PhasePointQuery:
    """Condition number ``kappa >= 1`` and dimension ratio ``d2/d1 > 0``."""

    kappa: float
    ratio: float

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa >= 1):
            raise ValueError(f"kappa must be finite and >= 1, got {self.kappa}")
        if not (np.isfinite(self.ratio) and self.ratio > 0):
            raise ValueError(f"ratio must be finite and > 0, got {self.ratio}")


@dataclass(frozen=True)
class PhaseResult:
    accelerated: bool
    boundary: bool
    min_value: float
    t_min: float
    rule: str


def _g(t, kappa, ratio):
    s = np.sqrt(kappa)
    return np.sin(t / s) + np.sin(t) * ratio / s


def _g_min(kappa: float, ratio: float):
    """Smallest interior local minimum of ``g`` on ``(0, 2 pi)``, refined to 1e-12 in ``t``.

    ``g`` vanishes linearly at ``t = 0``, so the infimum near that end is not
    attained and is skipped; with no interior local minimum the value at the
    right end is returned.
    """
    t = np.linspace(0.0, 2 * np.pi, _GRID_POINTS + 2)[1:-1]
    g = _g(t, kappa, ratio)
    interior = np.flatnonzero((g[1:-1] <= g[:-2]) & (g[1:-1] <= g[2:])) + 1
    if interior.size == 0:
        end = 2 * np.pi
        return float(_g(end, kappa, ratio)), end
    best = (np.inf, np.nan)
    for i in interior:
        res = minimize_scalar(lambda s: _g(s, kappa, ratio), bounds=(t[i - 1], t[i + 1]), method="bounded",
                              options={"xatol": 1e-12})
        val, arg = (float(res.fun), float(res.x)) if res.fun < g[i] else (float(g[i]), float(t[i]))
        if val < best[0]:
            best = (val, arg)
    return best


def phase_membership(q) -> PhaseResult:
    """Whether ``(kappa, d2/d1)`` lies in the accelerated phase.

    For ``kappa >= 4`` this is ``min g >= 0`` over ``(0, 2 pi)``, with values
    within ``1e-10`` of zero reported as boundary (and not accelerated).
    For ``1 <= kappa < 4`` the fast scale cannot complete a half period
    before the slow one does and every ratio is accelerated.
    """
    if not isinstance(q, PhasePointQuery):
        q = PhasePointQuery(*q)
    g_min, t_min = _g_min(q.kappa, q.ratio)
    if q.kappa < 4:
        return PhaseResult(True, False, g_min, t_min, "kappa<4")
    boundary = abs(g_min) <= _BOUNDARY_TOL
    return PhaseResult(bool(g_min >= 0 and not boundary), bool(boundary), g_min, t_min, "min-g")


def phase_scan(kappas, ratios) -> np.ndarray:
    """Boolean membership matrix of shape ``(len(kappas), len(ratios))``."""
    return np.array([[phase_membership(PhasePointQuery(k, r)).accelerated for r in ratios] for k in kappas])


def phase_boundary_constant() -> tuple[float, float]:
    """``a = min_{t in (pi, 2 pi)} -t / sin t`` and its minimizer."""
    res = minimize_scalar(lambda t: -t / np.sin(t), bounds=(np.pi + 1e-9, 2 * np.pi - 1e-9),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.fun), float(res.x)


def phase_boundary_ratio(kappa: float, r_max: float = 1e4) -> float:
    """Ratio at which membership switches for ``kappa >= 4``, by root finding on ``min g``."""
    if kappa < 4:
        return float("inf")
    def fn(r):
        return _g_min(kappa, r)[0]
    if fn(r_max) >= 0:
        return float("inf")
    return float(brentq(fn, 1e-12, r_max, xtol=1e-12))


def phase_boundary_asymptotic(kappa: float) -> float:
    """Large-kappa approximation ``sqrt(kappa) sin(a / sqrt(kappa))`` of the switching ratio."""
    a, _ = phase_boundary_constant()
    s = np.sqrt(kappa)
    return float(s * np.sin(a / s))
