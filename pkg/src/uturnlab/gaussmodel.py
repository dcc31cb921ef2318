"""Diagonal Gaussian targets built from scale blocks.

A target is a list of ``(m, d)`` blocks: ``d`` coordinates that share the
stiffness ``m`` (inverse variance). Positions and velocities are flat arrays
of length ``dim``; the leading axes of a batch are left untouched by every
helper here, so ``x`` may be ``(dim,)`` or ``(n_replicas, dim)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ScaleBlockTarget",
    "PhasePoint",
    "ShellSpec",
    "InvalidParameterError",
    "DimensionError",
    "isotropic",
    "two_scale",
    "harmonic_chain",
    "custom",
    "make_target",
    "two_scale_norm",
    "sample_phase_point",
    "default_shell",
    "in_position_shell",
    "in_velocity_set",
    "shell_growth",
]


class InvalidParameterError(ValueError):
    """A model parameter violates its precondition."""


class DimensionError(ValueError):
    """An array does not match the target dimension."""


@dataclass(frozen=True)
class ScaleBlockTarget:
    """Centered Gaussian with covariance ``diag(1/m_i)`` repeated ``d_i`` times.

    Use the presets (`isotropic`, `two_scale`, `harmonic_chain`, `custom`)
    rather than the constructor; they normalize the block list.
    """

    stiffness: tuple[float, ...]
    multiplicity: tuple[int, ...]
    _m: np.ndarray = field(init=False, repr=False, compare=False)
    _d: np.ndarray = field(init=False, repr=False, compare=False)
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)
    _coord_block: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.stiffness) != len(self.multiplicity) or not self.stiffness:
            raise InvalidParameterError("target needs at least one (m, d) block")
        for m, d in zip(self.stiffness, self.multiplicity):
            if not (m > 0 and math.isfinite(m)):
                raise InvalidParameterError(f"stiffness must be positive, got {m}")
            if int(d) != d or d < 1:
                raise InvalidParameterError(f"multiplicity must be >= 1, got {d}")
        if any(a >= b for a, b in zip(self.stiffness, self.stiffness[1:])):
            raise InvalidParameterError("blocks must be strictly ascending in m")
        m = np.asarray(self.stiffness, dtype=float)
        d = np.asarray(self.multiplicity, dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(d)[:-1]])
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_d", d)
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_coord_block", np.repeat(np.arange(len(d)), d))
        for arr in (m, d, offsets, self._coord_block):
            arr.setflags(write=False)

    # -- sizes and derived scalars -------------------------------------------------
    @property
    def m(self) -> np.ndarray:
        """Block stiffnesses, shape ``(n_blocks,)``."""
        return self._m

    @property
    def d(self) -> np.ndarray:
        """Block multiplicities, shape ``(n_blocks,)``."""
        return self._d

    @property
    def n_blocks(self) -> int:
        return len(self.stiffness)

    @property
    def dim(self) -> int:
        return int(self._d.sum())

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    @property
    def coord_block(self) -> np.ndarray:
        """Block index of every coordinate."""
        return self._coord_block

    @property
    def m_coord(self) -> np.ndarray:
        """Per-coordinate stiffness."""
        return self._m[self._coord_block]

    @property
    def kappa(self) -> float:
        """Condition number ``max m / min m``."""
        return float(self._m[-1] / self._m[0])

    @property
    def dim_ratio(self) -> float:
        """``d_2 / d_1`` of a two-block target."""
        if self.n_blocks != 2:
            raise InvalidParameterError("dim_ratio is defined for two-scale targets")
        return float(self._d[1] / self._d[0])

    @property
    def trace_cov(self) -> float:
        return float(np.sum(self._d / self._m))

    @property
    def trace_sqrt_cov(self) -> float:
        return float(np.sum(self._d / np.sqrt(self._m)))

    def blocks(self) -> list[tuple[float, int]]:
        return list(zip(self.stiffness, self.multiplicity))

    # -- per-block reductions ------------------------------------------------------
    def check_dim(self, x, name: str = "x") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise DimensionError(
                f"{name} has trailing dimension {x.shape[-1:] or 'scalar'}, "
                f"target dimension is {self.dim}"
            )
        return x

    def block_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum a per-coordinate array over each block (last axis)."""
        return np.add.reduceat(values, self._offsets, axis=-1)

    def block_sq_norms(self, x) -> np.ndarray:
        """``|x^i|^2`` for every block, shape ``x.shape[:-1] + (n_blocks,)``."""
        x = self.check_dim(x)
        return self.block_sum(x * x)

    def whitened_sq_radii(self, x) -> np.ndarray:
        """``|sqrt(m_i) x^i|^2`` per block; chi-square(d_i) under the target."""
        return self._m * self.block_sq_norms(x)

    def expand(self, per_block: np.ndarray) -> np.ndarray:
        """Broadcast a ``(..., n_blocks)`` array to ``(..., dim)``."""
        return np.take(per_block, self._coord_block, axis=-1)

    # -- serialization -------------------------------------------------------------
    def to_json(self) -> list[dict]:
        return [{"m": float(m), "d": int(d)} for m, d in self.blocks()]

    @classmethod
    def from_json(cls, blocks: Sequence[dict]) -> "ScaleBlockTarget":
        return custom((b["m"], b["d"]) for b in blocks)


def custom(blocks: Iterable[tuple[float, int]]) -> ScaleBlockTarget:
    """Target from arbitrary ``(m, d)`` pairs; sorts and merges equal stiffnesses."""
    merged: dict[float, int] = {}
    for m, d in blocks:
        m = float(m)
        if not (m > 0 and math.isfinite(m)):
            raise InvalidParameterError(f"stiffness must be positive, got {m}")
        if int(d) != d or d < 1:
            raise InvalidParameterError(f"multiplicity must be >= 1, got {d}")
        merged[m] = merged.get(m, 0) + int(d)
    if not merged:
        raise InvalidParameterError("target needs at least one (m, d) block")
    ms = sorted(merged)
    return ScaleBlockTarget(tuple(ms), tuple(merged[m] for m in ms))


def isotropic(m: float, d: int) -> ScaleBlockTarget:
    return custom([(m, d)])


def two_scale(m1: float, m2: float, d1: int, d2: int) -> ScaleBlockTarget:
    if m1 > m2:
        raise InvalidParameterError("two-scale target requires m1 <= m2")
    return custom([(m1, d1), (m2, d2)])


def harmonic_chain(d: int) -> ScaleBlockTarget:
    """Variances ``i^-2`` for ``i = 1..d``."""
    if int(d) != d or d < 1:
        raise InvalidParameterError(f"harmonic chain length must be >= 1, got {d}")
    return custom((float(i * i), 1) for i in range(1, int(d) + 1))


_PRESET_ARITY = {"isotropic": 2, "two_scale": 4, "harmonic_chain": 1}


def make_target(spec) -> ScaleBlockTarget:
    """Build a target from a preset description.

    Accepts an existing target, a compact string such as
    ``"two_scale:1,2500,200,4000"``, or a JSON-style dict
    (``{"kind": "isotropic", "m": 1, "d": 100}`` or
    ``{"kind": "custom", "blocks": [{"m": 1, "d": 3}]}``).
    """
    if isinstance(spec, ScaleBlockTarget):
        return spec
    if isinstance(spec, str):
        kind, _, args = spec.partition(":")
        kind = kind.strip()
        values = [float(a) for a in args.split(",")] if args.strip() else []
        if kind not in _PRESET_ARITY:
            raise InvalidParameterError(f"unknown target preset {kind!r}")
        if len(values) != _PRESET_ARITY[kind]:
            raise InvalidParameterError(
                f"{kind} takes {_PRESET_ARITY[kind]} parameters, got {len(values)}"
            )
        if kind == "isotropic":
            return isotropic(values[0], _as_int(values[1]))
        if kind == "two_scale":
            return two_scale(values[0], values[1], _as_int(values[2]), _as_int(values[3]))
        return harmonic_chain(_as_int(values[0]))
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "isotropic":
            return isotropic(spec["m"], spec["d"])
        if kind == "two_scale":
            return two_scale(spec["m1"], spec["m2"], spec["d1"], spec["d2"])
        if kind == "harmonic_chain":
            return harmonic_chain(spec["d"])
        if kind == "custom":
            return ScaleBlockTarget.from_json(spec["blocks"])
        raise InvalidParameterError(f"unknown target preset {kind!r}")
    raise InvalidParameterError(f"cannot build a target from {type(spec).__name__}")


def _as_int(value: float) -> int:
    if value != int(value):
        raise InvalidParameterError(f"expected an integer multiplicity, got {value}")
    return int(value)


@dataclass
class PhasePoint:
    """Position and velocity of equal trailing dimension (batched or not)."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.shape != self.v.shape:
            raise DimensionError(f"x{self.x.shape} and v{self.v.shape} differ in shape")

    def copy(self) -> "PhasePoint":
        return PhasePoint(self.x.copy(), self.v.copy())


def two_scale_norm(target: ScaleBlockTarget, x) -> np.ndarray | float:
    """``sqrt(sum_i m_i |x^i|^2)``; batched over leading axes."""
    out = np.sqrt(target.whitened_sq_radii(x).sum(axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def sample_phase_point(target: ScaleBlockTarget, rng: np.random.Generator, size=None) -> PhasePoint:
    """Exact draw from ``target x N(0, I)``; ``size`` adds leading batch axes."""
    shape = (target.dim,) if size is None else tuple(np.atleast_1d(size)) + (target.dim,)
    x = rng.standard_normal(shape) / np.sqrt(target.m_coord)
    v = rng.standard_normal(shape)
    return PhasePoint(x, v)


@dataclass(frozen=True)
class ShellSpec:
    """Per-block shell half-widths ``alpha`` and velocity bounds ``r``."""

    alpha: tuple[float, ...]
    r: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(v) for v in np.atleast_1d(self.alpha))
        r = tuple(float(v) for v in np.atleast_1d(self.r))
        if len(a) != len(r):
            raise InvalidParameterError("alpha and r need one entry per block")
        if any(v < 0 for v in a + r):
            raise InvalidParameterError("shell parameters must be nonnegative")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "r", r)

    def is_valid_for(self, target: ScaleBlockTarget) -> bool:
        """Whether ``alpha_i, r_i <= d_i`` (needed by the probability bounds)."""
        if len(self.alpha) != target.n_blocks:
            return False
        return bool(np.all(np.asarray(self.alpha) <= target.d) and np.all(np.asarray(self.r) <= target.d))

    def _arrays(self, target: ScaleBlockTarget):
        if len(self.alpha) != target.n_blocks:
            raise DimensionError(
                f"shell has {len(self.alpha)} blocks, target has {target.n_blocks}"
            )
        return np.asarray(self.alpha), np.asarray(self.r)

    def to_json(self) -> dict:
        return {"alpha": list(self.alpha), "r": list(self.r)}


def default_shell(target: ScaleBlockTarget, c: float = 3.0) -> ShellSpec:
    """``alpha_i = r_i = c sqrt(d_i)``."""
    w = c * np.sqrt(target.d.astype(float))
    return ShellSpec(tuple(w), tuple(w))


def in_position_shell(target: ScaleBlockTarget, x, shell: ShellSpec):
    """``| |sqrt(m_i) x^i|^2 - d_i | <= alpha_i`` in every block."""
    alpha, _ = shell._arrays(target)
    dev = np.abs(target.whitened_sq_radii(x) - target.d)
    return np.all(dev <= alpha, axis=-1)


def in_velocity_set(target: ScaleBlockTarget, x, v, shell: ShellSpec):
    """Pointwise velocity set: ``max(||v^i|^2 - d_i|, |sqrt(m_i) x^i . v^i|) <= r_i``."""
    _, r = shell._arrays(target)
    x = target.check_dim(x)
    v = target.check_dim(v, "v")
    vv = target.block_sum(v * v)
    xv = np.sqrt(target.m) * target.block_sum(x * v)
    ok = (np.abs(vv - target.d) <= r) & (np.abs(xv) <= r)
    return np.all(ok, axis=-1)


def shell_growth(shell0: ShellSpec, r, hbar: float, n: int, target: ScaleBlockTarget) -> ShellSpec:
    """Shell reachable after ``n`` transitions: ``max(a0, r) + n (r + hbar^2 m d)``.

    The result may exceed ``d_i``; check ``is_valid_for`` before relying on
    the exit-probability bound.
    """
    if n < 0:
        raise InvalidParameterError("n must be nonnegative")
    alpha0, _ = shell0._arrays(target)
    r = np.broadcast_to(np.asarray(r, dtype=float), alpha0.shape)
    grown = np.maximum(alpha0, r) + n * (r + hbar**2 * target.m * target.d)
    return ShellSpec(tuple(grown), tuple(r))
