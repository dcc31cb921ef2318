"""HMC with state-independent integration-time laws, and its couplings.

A transition draws a fresh velocity ``v ~ N(0, I)`` and a fresh time ``T``
from the law, then returns the position of the flow at ``T``. The
triangular law ``tau*`` is the one NUTS reduces to when orbit length is
deterministic; its contraction rate and regularization constant are exact
finite sums over its support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .flows import EXACT, LEAPFROG, Flow, GridError, beta, coefficients
from .gaussmodel import ScaleBlockTarget

__all__ = [
    "POINT",
    "TRIANGULAR",
    "EXPONENTIAL",
    "LawFlowError",
    "IntegrationTimeLaw",
    "tau_star_weights",
    "hmc_transition",
    "HMCKernel",
    "exact_contraction_rate",
    "coupled_hmc_step",
    "maximal_shift_meet",
    "meeting_probability",
    "shift_vector",
    "shift_coupled_hmc_step",
    "band_set",
    "RegularizationResult",
    "exact_regularization_constant",
]

POINT = "point"
TRIANGULAR = "triangular"
EXPONENTIAL = "exponential"


class LawFlowError(ValueError):
    """Integration-time law not supported by the chosen flow."""


def tau_star_weights(h: float, k_star: int) -> dict[int, float]:
    """Triangular weights ``max(2^k - |j|, 0) / 2^(2k)`` on offsets ``j`` (times ``h j``).

    Every weight is a dyadic rational, so the floats are exact and sum to 1.
    """
    if int(k_star) != k_star or k_star < 0:
        raise ValueError(f"k_star must be a nonnegative integer, got {k_star}")
    n = 2 ** int(k_star)
    denom = float(n) ** 2
    return {j: (n - abs(j)) / denom for j in range(-(n - 1), n)}


@dataclass(frozen=True)
class IntegrationTimeLaw:
    """Law of the integration time: ``point(t)``, ``triangular(h, k_star)`` or ``exponential(rate)``."""

    variant: str
    t: float | None = None
    h: float | None = None
    k_star: int | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.variant == POINT:
            if self.t is None or not np.isfinite(self.t):
                raise ValueError("point law needs a finite time t")
        elif self.variant == TRIANGULAR:
            if self.h is None or not self.h > 0:
                raise ValueError("triangular law needs h > 0")
            if self.k_star is None or int(self.k_star) != self.k_star or self.k_star < 0:
                raise ValueError("triangular law needs an integer k_star >= 0")
        elif self.variant == EXPONENTIAL:
            if self.rate is None or not self.rate > 0:
                raise ValueError("exponential law needs rate > 0")
        else:
            raise ValueError(f"unknown law variant {self.variant!r}")

    @classmethod
    def point(cls, t: float) -> "IntegrationTimeLaw":
        return cls(POINT, t=float(t))

    @classmethod
    def triangular(cls, h: float, k_star: int) -> "IntegrationTimeLaw":
        return cls(TRIANGULAR, h=float(h), k_star=int(k_star))

    @classmethod
    def exponential(cls, rate: float) -> "IntegrationTimeLaw":
        return cls(EXPONENTIAL, rate=float(rate))

    def support(self):
        """``(times, weights)`` for discrete laws."""
        if self.variant == POINT:
            return np.array([self.t]), np.array([1.0])
        if self.variant == TRIANGULAR:
            w = tau_star_weights(self.h, self.k_star)
            j = np.fromiter(w, dtype=np.int64)
            return self.h * j, np.fromiter(w.values(), dtype=float)
        raise ValueError("exponential law has no discrete support")

    def check_flow(self, flow: Flow) -> None:
        """Leapfrog needs every possible time on its grid ``h Z``."""
        if flow.kind != LEAPFROG:
            return
        if self.variant == EXPONENTIAL:
            raise LawFlowError("exponential integration times require the exact flow")
        probe = self.t if self.variant == POINT else self.h
        try:
            flow.to_index(probe)
        except GridError as exc:
            raise LawFlowError(f"law times are not on the leapfrog grid: {exc}") from exc

    def draw(self, rng: np.random.Generator) -> float:
        """One physical integration time."""
        if self.variant == POINT:
            return float(self.t)
        if self.variant == TRIANGULAR:
            u = rng.integers(0, 2 ** int(self.k_star), size=2)
            return float(self.h * (int(u[0]) - int(u[1])))
        return float(rng.exponential(1.0 / self.rate))

    def to_json(self) -> dict:
        if self.variant == POINT:
            return {"variant": POINT, "t": self.t}
        if self.variant == TRIANGULAR:
            return {"variant": TRIANGULAR, "h": self.h, "k_star": self.k_star}
        return {"variant": EXPONENTIAL, "rate": self.rate}

    @classmethod
    def from_json(cls, obj: dict) -> "IntegrationTimeLaw":
        obj = dict(obj)
        variant = obj.pop("variant")
        allowed = {POINT: {"t"}, TRIANGULAR: {"h", "k_star"}, EXPONENTIAL: {"rate"}}.get(variant)
        if allowed is None:
            raise ValueError(f"unknown law variant {variant!r}")
        extra = set(obj) - allowed
        if extra:
            raise ValueError(f"unexpected law fields {sorted(extra)}")
        return cls(variant, **obj)


def _time_coefficients(target: ScaleBlockTarget, t, flow: Flow):
    if flow.kind == EXACT:
        return coefficients(target, t, flow)
    return coefficients(target, flow.to_index(t), flow)


def hmc_transition(target: ScaleBlockTarget, x, law: IntegrationTimeLaw, flow: Flow,
                   rng: np.random.Generator):
    """Position of ``phi_T(x, v)`` with fresh ``v ~ N(0, I)`` and ``T ~ law``."""
    law.check_flow(flow)
    flow.check_target(target)
    x = target.check_dim(x)
    v = rng.standard_normal(target.dim)
    t = law.draw(rng)
    a, b, _, _ = (target.expand(c) for c in _time_coefficients(target, t, flow))
    return a * x + b * v


class HMCKernel:
    """Replica-batched HMC; replica ``r`` draws ``v`` then ``T`` from ``gens[r]``."""

    def __init__(self, target: ScaleBlockTarget, law: IntegrationTimeLaw, flow: Flow):
        law.check_flow(flow)
        flow.check_target(target)
        self.target = target
        self.law = law
        self.flow = flow

    def draw(self, gens):
        v = np.empty((len(gens), self.target.dim))
        t = np.empty(len(gens))
        for r, g in enumerate(gens):
            v[r] = g.standard_normal(self.target.dim)
            t[r] = self.law.draw(g)
        return v, t

    def _move(self, x, v, t):
        a, b, _, _ = (self.target.expand(c) for c in _time_coefficients(self.target, t, self.flow))
        return a * x + b * v

    def step(self, x, gens, return_info: bool = False):
        x = self.target.check_dim(np.atleast_2d(x))
        v, t = self.draw(gens)
        x_new = self._move(x, v, t)
        return (x_new, {"t": t, "v": v}) if return_info else x_new

    def coupled_step(self, x, x_tilde, gens):
        """Synchronous coupling: both copies share ``v`` and ``T``."""
        x = self.target.check_dim(np.atleast_2d(x))
        x_tilde = self.target.check_dim(np.atleast_2d(x_tilde))
        v, t = self.draw(gens)
        return self._move(x, v, t), self._move(x_tilde, v, t)


def exact_contraction_rate(target: ScaleBlockTarget, law: IntegrationTimeLaw, hbar: float = 0.0) -> float:
    """``1/2 min_m sum_j w_j sin^2(beta(hbar^2 m) sqrt(m) h j)`` over the law's support.

    Point laws are accepted as the one-atom case.
    """
    if law.variant == EXPONENTIAL:
        raise ValueError("contraction rate needs a discrete law")
    times, weights = law.support()
    m = np.unique(target.m)
    freq = beta(hbar**2 * m) * np.sqrt(m)
    per_m = np.sin(np.multiply.outer(freq, times)) ** 2 @ weights
    return float(0.5 * per_m.min())


def coupled_hmc_step(target: ScaleBlockTarget, x, x_tilde, law: IntegrationTimeLaw, flow: Flow,
                     rng: np.random.Generator, t: float | None = None):
    """Synchronously coupled pair of transitions; ``t`` overrides the drawn time."""
    law.check_flow(flow)
    x = target.check_dim(x)
    x_tilde = target.check_dim(x_tilde)
    v = rng.standard_normal(target.dim)
    drawn = law.draw(rng)
    t = drawn if t is None else t
    a, b, _, _ = (target.expand(c) for c in _time_coefficients(target, t, flow))
    return a * x + b * v, a * x_tilde + b * v


def meeting_probability(s) -> float:
    """Total-variation overlap ``2 Phi(-|s|/2)`` of ``N(0, I)`` and ``N(s, I)``."""
    return float(2.0 * norm.cdf(-np.linalg.norm(s) / 2.0))


def maximal_shift_meet(v, s, rng: np.random.Generator):
    """Couple ``v ~ N(0, I)`` with ``v_tilde ~ N(0, I)`` so that ``v_tilde = v + s`` maximally often.

    Reflection coupling along ``e = s/|s|``: with ``z = v . e`` and
    ``a = |s|``, accept the shifted coordinate ``z + a`` with probability
    ``min(1, phi(z + a)/phi(z))``, otherwise reflect to ``-z``. The
    orthogonal complement is shared. Consumes one uniform per vector.

    ``v`` may carry leading batch axes ``(..., d)``; ``s`` broadcasts
    against it. Returns ``(v_tilde, met)`` with ``met`` of shape ``v.shape[:-1]``
    (a plain bool for a single vector).
    """
    v = np.asarray(v, dtype=float)
    s = np.broadcast_to(np.asarray(s, dtype=float), v.shape)
    batch = v.shape[:-1]
    u = rng.random(batch) if batch else rng.random()
    a = np.linalg.norm(s, axis=-1)
    safe = np.where(a > 0, a, 1.0)
    e = s / safe[..., None]
    z = np.einsum("...i,...i->...", v, e)
    # log phi(z + a) - log phi(z)
    log_ratio = -a * z - 0.5 * a * a
    with np.errstate(divide="ignore"):
        met = (np.log(u) <= log_ratio) | (a == 0)
    z_new = np.where(met, z + a, -z)
    out = v + ((z_new - z) * (a > 0))[..., None] * e
    if not batch:
        return out, bool(met)
    return out, met


def _angle(target: ScaleBlockTarget, t: float, flow: Flow):
    """Per-block rotation angle and the ``q sqrt(m)`` scale of the flow at time ``t``."""
    w = np.sqrt(target.m)
    if flow.kind == EXACT:
        return w * t, w
    xi = flow.h**2 * target.m
    n = float(flow.to_index(t))
    return beta(xi) * w * flow.h * n, np.sqrt(1.0 - xi / 4.0) * w


def shift_vector(target: ScaleBlockTarget, x, x_tilde, t: float, flow: Flow):
    """Velocity shift making both copies land on the same position at time ``t``.

    ``s = cot(theta) q sqrt(m) (x - x_tilde)`` per block; infinite where
    ``sin(theta) = 0`` and the blocks differ.
    """
    theta, scale = _angle(target, t, flow)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.cos(theta) / np.sin(theta) * scale
    diff = np.asarray(x, dtype=float) - np.asarray(x_tilde, dtype=float)
    return target.expand(factor) * diff


def shift_coupled_hmc_step(target: ScaleBlockTarget, x, x_tilde, law: IntegrationTimeLaw, flow: Flow,
                           rng: np.random.Generator):
    """One transition of each copy under the maximal shift coupling.

    Returns ``(X, X_tilde, met)``; when ``met`` both positions coincide up
    to rounding.
    """
    law.check_flow(flow)
    x = target.check_dim(x)
    x_tilde = target.check_dim(x_tilde)
    v = rng.standard_normal(target.dim)
    t = law.draw(rng)
    s = shift_vector(target, x, x_tilde, t, flow)
    if not np.all(np.isfinite(s)):
        v_tilde, met = v.copy(), False
        rng.random()
    else:
        v_tilde, met = maximal_shift_meet(v, s, rng)
    a, b, _, _ = (target.expand(c) for c in _time_coefficients(target, t, flow))
    return a * x + b * v, a * x_tilde + b * v_tilde, met


def band_set(target: ScaleBlockTarget, law: IntegrationTimeLaw, delta: float, hbar: float = 0.0):
    """Intervals ``[(pi l - delta)/f, (pi l + delta)/f)`` with ``f = beta(hbar^2 m) sqrt(m)``.

    One family per distinct stiffness, with ``l`` covering the law's
    support; the union is returned as a list of ``(lo, hi)`` pairs.
    """
    if not delta >= 0:
        raise ValueError("delta must be nonnegative")
    times, _ = law.support()
    t_max = float(np.max(np.abs(times)))
    out = []
    for m in np.unique(target.m):
        f = beta(hbar**2 * m) * np.sqrt(m)
        l_max = int(np.ceil((f * t_max + delta) / np.pi))
        for l in range(-l_max, l_max + 1):
            out.append(((np.pi * l - delta) / f, (np.pi * l + delta) / f))
    return out


@dataclass(frozen=True)
class RegularizationResult:
    value: float
    excluded_mass: float
    infinite: bool


def exact_regularization_constant(target: ScaleBlockTarget, law: IntegrationTimeLaw, hbar: float,
                                  excluded_set) -> RegularizationResult:
    """``sup_m (sum_{t not in B} w_t cot^2(beta(hbar^2 m) sqrt(m) t))^(1/2)``.

    ``excluded_set`` is a list of half-open intervals ``(lo, hi)``. A kept
    support point on a cotangent pole gives ``infinite=True`` and
    ``value=inf``.
    """
    times, weights = law.support()
    excluded = np.zeros(times.shape, bool)
    for lo, hi in excluded_set:
        excluded |= (times >= lo) & (times < hi)
    kept_t = times[~excluded]
    kept_w = weights[~excluded]
    excluded_mass = float(weights[excluded].sum())
    best = 0.0
    for m in np.unique(target.m):
        theta = beta(hbar**2 * m) * np.sqrt(m) * kept_t
        s = np.sin(theta)
        if np.any(np.abs(s) <= 1e-12 * np.maximum(1.0, np.abs(theta))):
            return RegularizationResult(float("inf"), excluded_mass, True)
        total = float(np.sum(kept_w * (np.cos(theta) / s) ** 2))
        best = max(best, total)
    return RegularizationResult(float(np.sqrt(best)), excluded_mass, False)
