"""No-U-turn Sampler transitions on scale-block Gaussian targets.

`build_orbit` follows the doubling construction literally on cached phase
states. `NUTSKernel.step` runs many replicas in lockstep on block-Gram
statistics and is the engine used by the experiments; both consume a
replica's random stream in the same order, so they produce the same
orbits:

1. ``standard_normal(dim)`` for the velocity,
2. ``random(k_max)`` for the direction bits (``u >= 0.5`` extends forward),
3. ``random(2)`` for index selection (uniform-part test, then the choice).

Index selection splits ``Categorical(exp(-dH_i))`` into its maximal uniform
part (probability ``|I| min w / sum w``) and the remainder ``w - min w``,
which is the same law and exposes the uniformization event directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flows import EXACT, LEAPFROG, Flow, grid_coefficients, hamiltonian
from .gaussmodel import PhasePoint, ScaleBlockTarget
from .uturn import IndexOrbit, OrbitStates, block_gram, gram_energy_error, gram_products, has_sub_uturn, has_uturn

__all__ = [
    "STOP_SUB_UTURN",
    "STOP_UTURN",
    "STOP_KMAX",
    "STOP_REASONS",
    "OrbitParams",
    "OrbitTrace",
    "build_orbit",
    "categorical_index",
    "select_index",
    "uniform_part_probability",
    "nuts_transition",
    "NUTSKernel",
    "StepInfo",
]

STOP_SUB_UTURN = "extension-sub-uturn"
STOP_UTURN = "extended-uturn"
STOP_KMAX = "k_max-reached"
STOP_REASONS = (STOP_SUB_UTURN, STOP_UTURN, STOP_KMAX)


@dataclass(frozen=True)
class OrbitParams:
    """Step size, maximum number of doublings, and flow kind."""

    h: float
    k_max: int
    flow: str = EXACT

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if int(self.k_max) != self.k_max or self.k_max < 0:
            raise ValueError(f"k_max must be a nonnegative integer, got {self.k_max}")
        if self.flow not in (EXACT, LEAPFROG):
            raise ValueError(f"unknown flow {self.flow!r}")

    @property
    def flow_obj(self) -> Flow:
        return Flow(self.flow, float(self.h))

    @property
    def hbar(self) -> float:
        return self.flow_obj.hbar

    @property
    def max_len(self) -> int:
        return 2 ** int(self.k_max)

    @property
    def menu(self) -> np.ndarray:
        """Physical orbit lengths ``h (2^k - 1)`` for ``k = 1..k_max``."""
        k = np.arange(1, int(self.k_max) + 1)
        return self.h * (2.0**k - 1.0)


@dataclass
class OrbitTrace:
    orbit: IndexOrbit
    directions: list[bool]
    stop_reason: str
    states: OrbitStates = field(repr=False)


def build_orbit(target: ScaleBlockTarget, p: PhasePoint, params: OrbitParams,
                rng: np.random.Generator) -> OrbitTrace:
    """Doubling orbit construction with sub-U-turn checks on each extension."""
    flow = params.flow_obj
    flow.check_target(target)
    u = rng.random(int(params.k_max))
    states = OrbitStates(target, p, flow)
    states.get([0])
    orbit = IndexOrbit(0, 0)
    directions: list[bool] = []
    if params.k_max == 0:
        return OrbitTrace(orbit, directions, STOP_KMAX, states)
    for j in range(int(params.k_max)):
        forward = bool(u[j] >= 0.5)
        directions.append(forward)
        ext = orbit.extension(forward)
        if has_sub_uturn(target, p, ext, flow, states):
            return OrbitTrace(orbit, directions, STOP_SUB_UTURN, states)
        orbit = orbit.union(ext)
        if has_uturn(target, p, orbit, flow, states):
            return OrbitTrace(orbit, directions, STOP_UTURN, states)
        if len(orbit) == params.max_len:
            break
    return OrbitTrace(orbit, directions, STOP_KMAX, states)


def categorical_index(log_weights, u_accept: float, u_choice: float):
    """Draw from ``Categorical(exp(log_weights))`` via its uniform/remainder split.

    Returns ``(k, in_uniform_part, threshold)`` where ``threshold`` is
    ``n min w / sum w``. Zero weights are never selected.
    """
    lw = np.asarray(log_weights, dtype=float)
    n = lw.size
    w = np.exp(lw - np.max(lw))
    total = w.sum()
    threshold = float(n * w.min() / total)
    if u_accept <= threshold:
        return min(int(u_choice * n), n - 1), True, threshold
    rem = w - w.min()
    cum = np.cumsum(rem)
    k = int(np.searchsorted(cum, u_choice * cum[-1], side="right"))
    return min(k, n - 1), False, threshold


def _orbit_delta_h(trace: OrbitTrace, target: ScaleBlockTarget, p: PhasePoint) -> np.ndarray:
    if trace.states.flow.kind == EXACT:
        return np.zeros(len(trace.orbit))
    x, v = trace.states.get(trace.orbit.indices())
    return hamiltonian(target, PhasePoint(x, v)) - hamiltonian(target, p)


def select_index(trace: OrbitTrace, target: ScaleBlockTarget, p: PhasePoint,
                 rng: np.random.Generator, return_details: bool = False):
    """Boltzmann-weighted index from the selected orbit (uniform for exact flow)."""
    u = rng.random(2)
    dh = _orbit_delta_h(trace, target, p)
    k, accepted, threshold = categorical_index(-dh, u[0], u[1])
    iota = trace.orbit.i_min + k
    if return_details:
        return iota, {"in_uniform_part": accepted, "threshold": threshold, "delta_h": float(dh[k])}
    return iota


def uniform_part_probability(target: ScaleBlockTarget, p: PhasePoint, orbit: IndexOrbit,
                             flow: Flow) -> float:
    """``|I| min_i w_i / sum_i w_i`` with ``w_i = exp(-dH_i)``; 1 for exact flow."""
    if flow.kind == EXACT:
        return 1.0
    states = OrbitStates(target, p, flow)
    x, v = states.get(orbit.indices())
    dh = hamiltonian(target, PhasePoint(x, v)) - hamiltonian(target, p)
    lw = -dh
    w = np.exp(lw - lw.max())
    return float(len(orbit) * w.min() / w.sum())


def nuts_transition(target: ScaleBlockTarget, x, params: OrbitParams, rng: np.random.Generator,
                    return_info: bool = False):
    """One NUTS transition from position ``x``; returns the new position."""
    x = target.check_dim(x)
    v = rng.standard_normal(target.dim)
    p = PhasePoint(x, v)
    trace = build_orbit(target, p, params, rng)
    iota, details = select_index(trace, target, p, rng, return_details=True)
    x_new = trace.states.get([iota])[0][0]
    if not return_info:
        return x_new
    info = {
        "orbit_len": len(trace.orbit),
        "min_index": trace.orbit.i_min,
        "stop_reason": trace.stop_reason,
        "iota": iota,
        "v": v,
        **details,
    }
    return x_new, info


@dataclass
class StepInfo:
    """Per-replica record of one batched transition."""

    orbit_len: np.ndarray
    min_index: np.ndarray
    stop_code: np.ndarray
    iota: np.ndarray
    delta_h: np.ndarray
    in_uniform_part: np.ndarray
    threshold: np.ndarray
    v: np.ndarray = field(repr=False)

    @property
    def stop_reason(self) -> list[str]:
        return [STOP_REASONS[c] for c in self.stop_code]


class NUTSKernel:
    """Batched NUTS: every replica owns a generator, all replicas double in lockstep."""

    def __init__(self, target: ScaleBlockTarget, params: OrbitParams):
        self.target = target
        self.params = params
        self.flow = params.flow_obj
        self.flow.check_target(target)
        self._pairs = {}

    def _suborbit_offsets(self, length: int):
        """Start/end offsets of all dyadic sub-orbits of length >= 2."""
        if length not in self._pairs:
            starts, ends = [], []
            size = length
            while size >= 2:
                s = np.arange(0, length, size)
                starts.append(s)
                ends.append(s + size - 1)
                size //= 2
            if starts:
                pair = (np.concatenate(starts), np.concatenate(ends))
            else:
                pair = (np.zeros(0, np.int64), np.zeros(0, np.int64))
            self._pairs[length] = pair
        return self._pairs[length]

    def draw(self, gens):
        dim = self.target.dim
        k = int(self.params.k_max)
        v = np.empty((len(gens), dim))
        u = np.empty((len(gens), k))
        s = np.empty((len(gens), 2))
        for r, g in enumerate(gens):
            v[r] = g.standard_normal(dim)
            u[r] = g.random(k)
            s[r] = g.random(2)
        return v, u, s

    def build_orbits(self, x, v, u):
        """Lockstep orbit construction. Returns ``(i_min, i_max, stop_code, gram)``."""
        target, flow = self.target, self.flow
        n_rep = x.shape[0]
        gram = block_gram(target, x, v)
        i_min = np.zeros(n_rep, np.int64)
        i_max = np.zeros(n_rep, np.int64)
        stop = np.full(n_rep, STOP_REASONS.index(STOP_KMAX))
        active = np.arange(n_rep)
        for j in range(int(self.params.k_max)):
            if active.size == 0:
                break
            length = 2**j
            forward = u[active, j] >= 0.5
            e_lo = np.where(forward, i_max[active] + 1, i_min[active] - length)
            off_lo, off_hi = self._suborbit_offsets(length)
            if off_lo.size:
                p_hi, p_lo = gram_products(
                    target, flow, gram[active], e_lo[:, None] + off_lo, e_lo[:, None] + off_hi
                )
                sub = np.any(np.minimum(p_hi, p_lo) < 0, axis=1)
            else:
                sub = np.zeros(active.size, bool)
            stop[active[sub]] = STOP_REASONS.index(STOP_SUB_UTURN)
            cont = active[~sub]
            e_lo = e_lo[~sub]
            i_min[cont] = np.minimum(i_min[cont], e_lo)
            i_max[cont] = np.maximum(i_max[cont], e_lo + length - 1)
            p_hi, p_lo = gram_products(target, flow, gram[cont], i_min[cont, None], i_max[cont, None])
            turned = np.minimum(p_hi, p_lo)[:, 0] < 0
            stop[cont[turned]] = STOP_REASONS.index(STOP_UTURN)
            active = cont[~turned]
            if 2 * length >= self.params.max_len:
                break
        return i_min, i_max, stop, gram

    def select(self, gram, i_min, i_max, s):
        """Index selection for every replica; returns ``(iota, dH, in_uniform, threshold)``."""
        n = i_max - i_min + 1
        n_rep = n.size
        if self.flow.kind == EXACT:
            k = np.minimum((s[:, 1] * n).astype(np.int64), n - 1)
            return i_min + k, np.zeros(n_rep), np.ones(n_rep, bool), np.ones(n_rep)
        width = int(n.max())
        offs = np.arange(width)
        mask = offs[None, :] < n[:, None]
        idx = i_min[:, None] + np.where(mask, offs[None, :], 0)
        dh = gram_energy_error(self.target, self.flow, gram, idx)
        lw = np.where(mask, -dh, -np.inf)
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        wmin = np.where(mask, w, np.inf).min(axis=1)
        total = w.sum(axis=1)
        threshold = n * wmin / total
        accepted = s[:, 0] <= threshold
        k_uni = np.minimum((s[:, 1] * n).astype(np.int64), n - 1)
        rem = np.where(mask, w - wmin[:, None], 0.0)
        cum = np.cumsum(rem, axis=1)
        target_mass = s[:, 1] * cum[:, -1]
        k_rem = np.minimum((cum <= target_mass[:, None]).sum(axis=1), n - 1)
        k = np.where(accepted, k_uni, k_rem)
        rows = np.arange(n_rep)
        return i_min + k, dh[rows, k], accepted, threshold

    def step(self, x, gens, return_info: bool = False):
        """Advance every replica (rows of ``x``) by one transition."""
        x = self.target.check_dim(np.atleast_2d(x))
        v, u, s = self.draw(gens)
        i_min, i_max, stop, gram = self.build_orbits(x, v, u)
        iota, dh, accepted, threshold = self.select(gram, i_min, i_max, s)
        a, b, _, _ = (self.target.expand(c) for c in grid_coefficients(self.target, iota, self.flow))
        x_new = a * x + b * v
        if not return_info:
            return x_new
        info = StepInfo(i_max - i_min + 1, i_min, stop, iota, dh, accepted, threshold, v)
        return x_new, info
