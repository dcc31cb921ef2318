"""The U-turn diagnostic, U-turn and sub-U-turn predicates, and the uniform term.

Two evaluation routes are provided. `OrbitStates` materializes phase states
along an orbit and computes endpoint dot products from them; it backs the
reference predicates `has_uturn` and `has_sub_uturn`. The block-Gram route
(`block_gram`, `gram_products`) uses that for Gaussian scale blocks every
endpoint dot product is a bilinear form in the three per-block scalars
``|x^i|^2``, ``x^i . v^i`` and ``|v^i|^2``; it costs O(n_blocks) per
product and drives the batched sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flows import EXACT, LEAPFROG, Flow, beta, exact_flow, flow_states, grid_coefficients
from .gaussmodel import PhasePoint, ScaleBlockTarget, ShellSpec

__all__ = [
    "IndexOrbit",
    "OrbitStates",
    "UniformTermSpec",
    "uturn_diagnostic",
    "has_uturn",
    "has_sub_uturn",
    "f_unif",
    "delta_bound",
    "block_gram",
    "gram_products",
    "gram_energy_error",
]


@dataclass(frozen=True)
class IndexOrbit:
    """Consecutive integer range ``[i_min, i_max]``."""

    i_min: int
    i_max: int

    def __post_init__(self):
        if self.i_min > self.i_max:
            raise ValueError(f"empty index orbit [{self.i_min}, {self.i_max}]")

    def __len__(self) -> int:
        return self.i_max - self.i_min + 1

    def __contains__(self, i) -> bool:
        return self.i_min <= i <= self.i_max

    def indices(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_max + 1, dtype=np.int64)

    def is_dyadic(self) -> bool:
        n = len(self)
        return n & (n - 1) == 0

    def extension(self, forward: bool) -> "IndexOrbit":
        """The equal-length orbit adjacent on the right (or left)."""
        n = len(self)
        if forward:
            return IndexOrbit(self.i_max + 1, self.i_max + n)
        return IndexOrbit(self.i_min - n, self.i_min - 1)

    def union(self, other: "IndexOrbit") -> "IndexOrbit":
        if other.i_min > self.i_max + 1 or self.i_min > other.i_max + 1:
            raise ValueError("orbits are not adjacent")
        return IndexOrbit(min(self.i_min, other.i_min), max(self.i_max, other.i_max))

    def dyadic_suborbits(self):
        """All orbits obtained by repeated halving, including the orbit itself."""
        if not self.is_dyadic():
            raise ValueError(f"orbit length {len(self)} is not a power of two")
        size = len(self)
        while size >= 1:
            for lo in range(self.i_min, self.i_max + 1, size):
                yield IndexOrbit(lo, lo + size - 1)
            size //= 2


def _endpoint_diagnostic(x_lo, v_lo, x_hi, v_hi):
    dx = x_hi - x_lo
    return np.minimum(np.sum(v_hi * dx, axis=-1), np.sum(v_lo * dx, axis=-1))


class OrbitStates:
    """Grow-on-demand cache of phase states along the grid orbit of one point."""

    def __init__(self, target: ScaleBlockTarget, p: PhasePoint, flow: Flow):
        self.target = target
        self.p = p
        self.flow = flow
        self._x: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._x)

    def get(self, idx):
        """Positions and velocities at ``idx``, shape ``(len(idx), dim)``."""
        idx = [int(i) for i in np.atleast_1d(idx)]
        missing = sorted({i for i in idx if i not in self._x})
        if missing:
            states = flow_states(self.target, self.p, missing, self.flow)
            for k, i in enumerate(missing):
                self._x[i] = states.x[k]
                self._v[i] = states.v[k]
        return (np.stack([self._x[i] for i in idx]), np.stack([self._v[i] for i in idx]))

    def diagnostic(self, orbit: IndexOrbit) -> float:
        x, v = self.get([orbit.i_min, orbit.i_max])
        return float(_endpoint_diagnostic(x[0], v[0], x[1], v[1]))

    def visited(self) -> np.ndarray:
        return np.array(sorted(self._x), dtype=np.int64)


def uturn_diagnostic(target: ScaleBlockTarget, p: PhasePoint, t_minus: float, t_plus: float,
                     flow: Flow) -> float:
    """``min(v_+ . (x_+ - x_-), v_- . (x_+ - x_-))`` between two times.

    Exact flow accepts any real times; leapfrog requires both on ``h Z``.
    """
    if t_minus > t_plus:
        raise ValueError("t_minus must not exceed t_plus")
    if t_minus == t_plus:
        return 0.0
    if flow.kind == LEAPFROG:
        n = flow.to_index([t_minus, t_plus])
        ends = flow_states(target, p, n, flow)
    else:
        ends = exact_flow(target, p, np.array([t_minus, t_plus], dtype=float))
    return float(_endpoint_diagnostic(ends.x[0], ends.v[0], ends.x[1], ends.v[1]))


def has_uturn(target: ScaleBlockTarget, p: PhasePoint, orbit: IndexOrbit, flow: Flow,
              states: OrbitStates | None = None) -> bool:
    """Strict ``f < 0`` at the orbit endpoints; singletons never U-turn."""
    if len(orbit) == 1:
        return False
    states = states or OrbitStates(target, p, flow)
    return states.diagnostic(orbit) < 0


def has_sub_uturn(target: ScaleBlockTarget, p: PhasePoint, orbit: IndexOrbit, flow: Flow,
                  states: OrbitStates | None = None) -> bool:
    """Whether any dyadic sub-orbit of ``orbit`` (itself included) has a U-turn."""
    if not orbit.is_dyadic():
        raise ValueError(f"orbit length {len(orbit)} is not a power of two")
    n = len(orbit)
    if n == 1:
        return False
    states = states or OrbitStates(target, p, flow)
    x, v = states.get(orbit.indices())
    size = n
    while size >= 2:
        xb = x.reshape(n // size, size, -1)
        vb = v.reshape(n // size, size, -1)
        f = _endpoint_diagnostic(xb[:, 0], vb[:, 0], xb[:, -1], vb[:, -1])
        if np.any(f < 0):
            return True
        size //= 2
    return False


@dataclass(frozen=True)
class UniformTermSpec:
    """Uniform term ``sum_i d_i sin(beta(hbar^2 m_i) sqrt(m_i) t) / sqrt(m_i)``."""

    target: ScaleBlockTarget
    hbar: float = 0.0

    def __post_init__(self):
        if self.hbar < 0:
            raise ValueError("hbar must be nonnegative")
        if self.hbar**2 * self.target.m.max() >= 4:
            raise ValueError("hbar^2 max m must be below 4")

    @property
    def frequencies(self) -> np.ndarray:
        return beta(self.hbar**2 * self.target.m) * np.sqrt(self.target.m)

    def __call__(self, dt):
        w = np.sqrt(self.target.m)
        terms = np.sin(np.multiply.outer(np.asarray(dt, dtype=float), self.frequencies)) * (self.target.d / w)
        out = terms.sum(axis=-1)
        return float(out) if np.ndim(out) == 0 else out


def f_unif(spec, dt, hbar: float = 0.0):
    """Uniform term at physical length ``dt``; ``spec`` is a `UniformTermSpec` or a target."""
    if isinstance(spec, ScaleBlockTarget):
        spec = UniformTermSpec(spec, hbar)
    if np.any(np.asarray(dt) < 0):
        raise ValueError("dt must be nonnegative")
    return spec(dt)


def delta_bound(target: ScaleBlockTarget, shell: ShellSpec, hbar: float = 0.0) -> float:
    """Deviation bound ``sum_i (5 max(a_i, r_i) / sqrt(d_i) + hbar^2 m_i sqrt(d_i)) sqrt(d_i / m_i)``."""
    alpha, r = shell._arrays(target)
    d = target.d.astype(float)
    m = target.m
    per_block = (5.0 * np.maximum(alpha, r) / np.sqrt(d) + hbar**2 * m * np.sqrt(d)) * np.sqrt(d / m)
    return float(per_block.sum())


# -- block-Gram route ---------------------------------------------------------------

def block_gram(target: ScaleBlockTarget, x, v) -> np.ndarray:
    """Per-block ``(|x|^2, x.v, |v|^2)``, shape ``x.shape[:-1] + (n_blocks, 3)``."""
    return np.stack(
        [target.block_sum(x * x), target.block_sum(x * v), target.block_sum(v * v)], axis=-1
    )


def gram_products(target: ScaleBlockTarget, flow: Flow, gram: np.ndarray, i_lo, i_hi):
    """Both endpoint dot products of the orbits ``[i_lo, i_hi]``.

    ``gram`` has shape ``batch + (n_blocks, 3)``; ``i_lo`` and ``i_hi`` have
    shape ``batch + (k,)``. Returns ``(v_hi . dx, v_lo . dx)`` with
    ``dx = x_hi - x_lo``, each of shape ``batch + (k,)``.
    """
    a_l, b_l, c_l, e_l = grid_coefficients(target, i_lo, flow)
    a_h, b_h, c_h, e_h = grid_coefficients(target, i_hi, flow)
    g = gram[..., None, :, :]
    sxx, sxv, svv = g[..., 0], g[..., 1], g[..., 2]
    da = a_h - a_l
    db = b_h - b_l

    def dot(c, e):
        return np.sum(c * da * sxx + (c * db + e * da) * sxv + e * db * svv, axis=-1)

    return dot(c_h, e_h), dot(c_l, e_l)


def gram_energy_error(target: ScaleBlockTarget, flow: Flow, gram: np.ndarray, idx) -> np.ndarray:
    """``H(Phi^i(x, v)) - H(x, v)`` at indices ``idx`` (shape ``batch + (k,)``).

    Zero for the exact flow. For leapfrog the conserved shadow energy gives
    ``sum_i (h^2 m_i / 8) m_i (|x_i|^2 - |x|^2)`` per block.
    """
    idx = np.asarray(idx)
    if flow.kind == EXACT:
        return np.zeros(idx.shape)
    a, b, _, _ = grid_coefficients(target, idx, flow)
    g = gram[..., None, :, :]
    sxx, sxv, svv = g[..., 0], g[..., 1], g[..., 2]
    xx = a * a * sxx + 2 * a * b * sxv + b * b * svv
    h = float(flow.h)
    w = h * h * target.m * target.m / 8.0
    return np.sum(w * (xx - sxx), axis=-1)

