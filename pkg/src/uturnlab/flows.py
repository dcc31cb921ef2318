"""Exact Hamiltonian flow and leapfrog flow for scale-block Gaussian targets.

Both flows act blockwise as a linear map on ``(x, v)``::

    x_t = a x + b v
    v_t = c x + e v

with scalar coefficients per block. For the exact flow ``a = e = cos(w t)``,
``b = sin(w t)/w`` and ``c = -w sin(w t)`` where ``w = sqrt(m)``. Leapfrog
with step ``h`` is the same rotation at the slowed-down frequency
``beta(h^2 m) w`` with ``b`` and ``c`` rescaled by ``q = sqrt(1 - h^2 m/4)``.
Leapfrog times are integer step counts, never floats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .gaussmodel import PhasePoint, ScaleBlockTarget

logger = logging.getLogger(__name__)

__all__ = [
    "EXACT",
    "LEAPFROG",
    "Flow",
    "FlowDomainError",
    "InstabilityError",
    "GridError",
    "beta",
    "coefficients",
    "exact_flow",
    "leapfrog_flow",
    "velocity_verlet",
    "flow_states",
    "grid_coefficients",
    "hamiltonian",
    "modified_hamiltonian",
    "energy_error_max",
]

EXACT = "exact"
LEAPFROG = "leapfrog"

_GRID_TOL = 1e-9
_WARNED: set = set()


class FlowDomainError(ValueError):
    """Argument of beta outside ``[0, 4)``."""


class InstabilityError(ValueError):
    """Leapfrog step with ``h^2 m >= 4`` for some block."""


class GridError(ValueError):
    """A leapfrog time that is not an integer multiple of the step size."""


def beta(xi):
    """Frequency correction ``arccos(1 - xi/2) / sqrt(xi)`` of the leapfrog rotation.

    Evaluated as ``2 arcsin(sqrt(xi)/2) / sqrt(xi)``, the same function
    without the cancellation of ``arccos`` near ``xi = 0``. ``beta(0) = 1``.
    """
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0) or np.any(xi_arr >= 4) or np.any(~np.isfinite(xi_arr)):
        raise FlowDomainError(f"beta is defined on [0, 4), got {xi}")
    s = np.sqrt(xi_arr)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(s > 0, 2.0 * np.arcsin(s / 2.0) / np.where(s > 0, s, 1.0), 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Flow:
    """Which flow generates orbits, and its step size.

    The exact flow may carry a step size too: NUTS still walks the grid
    ``h * Z`` with it.
    """

    kind: str = EXACT
    h: float | None = None

    def __post_init__(self):
        if self.kind not in (EXACT, LEAPFROG):
            raise ValueError(f"unknown flow {self.kind!r}")
        if self.kind == LEAPFROG and (self.h is None or not self.h > 0):
            raise ValueError("leapfrog flow needs a positive step size")
        if self.h is not None and not self.h > 0:
            raise ValueError("step size must be positive")

    @classmethod
    def exact(cls, h: float | None = None) -> "Flow":
        return cls(EXACT, h)

    @classmethod
    def leapfrog(cls, h: float) -> "Flow":
        return cls(LEAPFROG, h)

    @property
    def hbar(self) -> float:
        """0 for the exact flow, ``h`` for leapfrog."""
        return float(self.h) if self.kind == LEAPFROG else 0.0

    def check_target(self, target: ScaleBlockTarget) -> None:
        if self.kind == LEAPFROG:
            check_stability(target, self.h)

    def to_index(self, t) -> np.ndarray:
        """Grid index of physical time ``t``; raises `GridError` off the grid."""
        if self.h is None:
            raise GridError("exact flow without step size has no grid")
        n = np.asarray(t, dtype=float) / self.h
        k = np.rint(n)
        if np.any(np.abs(n - k) > _GRID_TOL * np.maximum(1.0, np.abs(n))):
            raise GridError(f"time {t} is not on the grid h*Z with h={self.h}")
        return k.astype(np.int64)


def check_stability(target: ScaleBlockTarget, h: float) -> None:
    xi = h * h * target.m
    if np.any(xi >= 4):
        raise InstabilityError(f"leapfrog unstable: h^2 m = {xi.max():.4g} >= 4")
    if np.any(xi > 1):
        key = (float(h), float(xi.max()))
        if key not in _WARNED:
            _WARNED.add(key)
            logger.warning("h^2 m = %.4g exceeds 1; stability-regime bounds do not apply", xi.max())


def coefficients(target: ScaleBlockTarget, t, flow: Flow):
    """Blockwise flow coefficients ``(a, b, c, e)``.

    For the exact flow ``t`` is physical time; for leapfrog it is the integer
    step count. Each output has shape ``np.shape(t) + (n_blocks,)``.
    """
    w = np.sqrt(target.m)
    if flow.kind == EXACT:
        theta = np.multiply.outer(np.asarray(t, dtype=float), w)
        s, co = np.sin(theta), np.cos(theta)
        return co, s / w, -w * s, co
    h = float(flow.h)
    check_stability(target, h)
    n = np.asarray(t)
    if not np.issubdtype(n.dtype, np.integer):
        if np.any(n != np.rint(n)):
            raise GridError("leapfrog step counts must be integers")
        n = n.astype(np.int64)
    xi = h * h * target.m
    q = np.sqrt(1.0 - xi / 4.0)
    freq = beta(xi) * w * h
    theta = np.multiply.outer(n.astype(float), freq)
    s, co = np.sin(theta), np.cos(theta)
    return co, s / (q * w), -(q * w) * s, co


def _apply(target: ScaleBlockTarget, p: PhasePoint, coef) -> PhasePoint:
    a, b, c, e = (target.expand(k) for k in coef)
    return PhasePoint(a * p.x + b * p.v, c * p.x + e * p.v)


def exact_flow(target: ScaleBlockTarget, p: PhasePoint, t) -> PhasePoint:
    """Closed-form Hamiltonian flow for time ``t`` (scalar or batch-shaped)."""
    target.check_dim(p.x)
    return _apply(target, p, coefficients(target, t, Flow.exact()))


def leapfrog_flow(target: ScaleBlockTarget, p: PhasePoint, n, h: float) -> PhasePoint:
    """``n`` leapfrog steps of size ``h`` by the closed form; negative ``n`` runs backward."""
    target.check_dim(p.x)
    return _apply(target, p, coefficients(target, n, Flow.leapfrog(h)))


def _as_index(idx) -> np.ndarray:
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        if np.any(idx != np.rint(idx)):
            raise GridError("grid indices must be integers")
    return idx.astype(np.int64)


def flow_states(target: ScaleBlockTarget, p: PhasePoint, idx, flow: Flow) -> PhasePoint:
    """States at grid indices ``idx`` of a single phase point: shape ``(len(idx), dim)``."""
    idx = _as_index(idx)
    if flow.kind == EXACT:
        if flow.h is None:
            raise GridError("exact flow needs a step size to index a grid")
        return exact_flow(target, p, idx * float(flow.h))
    return leapfrog_flow(target, p, idx, float(flow.h))


def velocity_verlet(target: ScaleBlockTarget, p: PhasePoint, n: int, h: float) -> PhasePoint:
    """Stepwise velocity Verlet (half kick, drift, half kick); reference integrator."""
    m = target.m_coord
    step = h if n >= 0 else -h
    x = np.array(p.x, dtype=float)
    v = np.array(p.v, dtype=float)
    for _ in range(abs(int(n))):
        v = v - 0.5 * step * m * x
        x = x + step * v
        v = v - 0.5 * step * m * x
    return PhasePoint(x, v)


def hamiltonian(target: ScaleBlockTarget, p: PhasePoint):
    """``sum m x^2 / 2 + |v|^2 / 2`` (normalizing constant dropped)."""
    x = target.check_dim(p.x)
    out = 0.5 * np.sum(target.m_coord * x * x, axis=-1) + 0.5 * np.sum(p.v * p.v, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def modified_hamiltonian(target: ScaleBlockTarget, p: PhasePoint, h: float):
    """Shadow energy ``H - sum_i (h^2 m_i / 8) |sqrt(m_i) x^i|^2`` conserved by leapfrog."""
    corr = np.sum((h * h * target.m / 8.0) * target.whitened_sq_radii(p.x), axis=-1)
    out = hamiltonian(target, p) - corr
    return float(out) if np.ndim(out) == 0 else out


def energy_error_max(target: ScaleBlockTarget, p: PhasePoint, h: float, index_range: Iterable[int],
                     flow: str = LEAPFROG) -> float:
    """``max_l |H(Phi^l(p)) - H(p)|`` over the given step indices."""
    idx = np.fromiter(index_range, dtype=np.int64)
    if idx.size == 0:
        return 0.0
    fl = Flow(flow, h)
    states = flow_states(target, p, idx, fl)
    return float(np.max(np.abs(hamiltonian(target, states) - hamiltonian(target, p))))


def leapfrog_bound_ok(target: ScaleBlockTarget, h: float) -> bool:
    """``h^2 max m <= 1``, the regime in which the deviation bounds hold."""
    return bool(h * h * target.m.max() <= 1.0)


def grid_coefficients(target: ScaleBlockTarget, idx, flow: Flow):
    """`coefficients` at integer grid indices, for either flow."""
    idx = _as_index(idx)
    if flow.kind == EXACT:
        if flow.h is None:
            raise GridError("exact flow needs a step size to index a grid")
        return coefficients(target, idx * float(flow.h), flow)
    return coefficients(target, idx, flow)
