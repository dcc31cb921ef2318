import numpy as np
import pytest
from scipy import stats

from oracles import nuts_orbit_oracle
from uturnlab.flows import Flow
from uturnlab.gaussmodel import isotropic, sample_phase_point, two_scale
from uturnlab.nuts import (
    STOP_KMAX,
    STOP_REASONS,
    NUTSKernel,
    OrbitParams,
    build_orbit,
    categorical_index,
    nuts_transition,
    select_index,
    uniform_part_probability,
)
from uturnlab.rng import substreams
from uturnlab.uturn import IndexOrbit


def test_orbit_params_validation():
    with pytest.raises(ValueError):
        OrbitParams(0.0, 3)
    with pytest.raises(ValueError):
        OrbitParams(0.1, -1)
    with pytest.raises(ValueError):
        OrbitParams(0.1, 2, "midpoint")
    p = OrbitParams(0.5, 3)
    assert p.max_len == 8
    assert np.allclose(p.menu, [0.5, 1.5, 3.5])


def test_kmax_zero_gives_singleton_and_fixed_point():
    t = isotropic(1, 5)
    rng = np.random.default_rng(0)
    params = OrbitParams(0.1, 0)
    p = sample_phase_point(t, rng)
    trace = build_orbit(t, p, params, rng)
    assert trace.orbit == IndexOrbit(0, 0) and trace.stop_reason == STOP_KMAX
    x = p.x.copy()
    assert np.array_equal(nuts_transition(t, x, params, rng), x)


def test_kmax_positive_never_singleton():
    t = isotropic(1, 4)
    rng = np.random.default_rng(1)
    for _ in range(200):
        params = OrbitParams(float(rng.uniform(0.05, 3.0)), int(rng.integers(1, 6)))
        trace = build_orbit(t, sample_phase_point(t, rng), params, rng)
        assert len(trace.orbit) >= 2


@pytest.mark.parametrize("flow", ["exact", "leapfrog"])
def test_build_orbit_matches_recursive_oracle(flow):
    t = two_scale(1, 16, 3, 5)
    rng = np.random.default_rng(2)
    for _ in range(100):
        params = OrbitParams(float(rng.uniform(0.05, 0.45)), int(rng.integers(1, 8)), flow)
        p = sample_phase_point(t, rng)
        seed = int(rng.integers(2**32))
        u = np.random.default_rng(seed).random(params.k_max)
        trace = build_orbit(t, p, params, np.random.default_rng(seed))
        lo, hi = nuts_orbit_oracle(t.m_coord, p.x, p.v, params.h, params.k_max, u, flow == "leapfrog")
        assert (trace.orbit.i_min, trace.orbit.i_max) == (lo, hi)
        assert 0 in trace.orbit
        assert trace.stop_reason in STOP_REASONS


def test_categorical_two_weights():
    lw = [0.0, -1.0]
    rng = np.random.default_rng(3)
    n = 100_000
    u = rng.random((n, 2))
    picks = np.array([categorical_index(lw, a, b)[0] for a, b in u])
    p = np.exp(-1) / (1 + np.exp(-1))
    se = np.sqrt(p * (1 - p) / n)
    assert abs(picks.mean() - p) <= 3 * se
    assert categorical_index(lw, 0.5, 0.5)[2] == pytest.approx(2 * np.exp(-1) / (1 + np.exp(-1)))


def test_categorical_underflow_never_selected():
    lw = [0.0, -1e4, 0.0]
    rng = np.random.default_rng(4)
    for a, b in rng.random((5000, 2)):
        k, _, thr = categorical_index(lw, a, b)
        assert k != 1
        assert thr == 0.0


def test_categorical_uniform_when_equal_weights():
    for u in np.linspace(0, 0.999, 37):
        k, uni, thr = categorical_index(np.zeros(8), 0.3, u)
        assert uni and thr == pytest.approx(1.0) and k == int(u * 8)


def test_uniform_part_probability():
    t = isotropic(1, 3)
    p = sample_phase_point(t, np.random.default_rng(5))
    assert uniform_part_probability(t, p, IndexOrbit(-3, 4), Flow.exact(0.2)) == 1.0
    val = uniform_part_probability(t, p, IndexOrbit(-3, 4), Flow.leapfrog(0.2))
    assert 0 < val <= 1


def test_select_index_exact_is_uniform():
    t = isotropic(1, 50)
    rng = np.random.default_rng(6)
    p = sample_phase_point(t, rng)
    trace = build_orbit(t, p, OrbitParams(0.0375, 6), rng)
    n_draws = 20_000
    counts = np.zeros(len(trace.orbit))
    for _ in range(n_draws):
        counts[select_index(trace, t, p, rng) - trace.orbit.i_min] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("flow,h", [("exact", 0.3), ("leapfrog", 0.1)])
def test_batched_kernel_matches_reference(flow, h):
    t = two_scale(1, 30, 4, 6)
    params = OrbitParams(h, 6, flow)
    kernel = NUTSKernel(t, params)
    n = 60
    x = sample_phase_point(t, np.random.default_rng(7), n).x
    new, info = kernel.step(x, substreams(11, "replica", n), return_info=True)
    for r, g in enumerate(substreams(11, "replica", n)):
        ref, ref_info = nuts_transition(t, x[r], params, g, return_info=True)
        assert np.allclose(new[r], ref, rtol=1e-12, atol=1e-12)
        assert info.iota[r] == ref_info["iota"]
        assert info.orbit_len[r] == ref_info["orbit_len"]
        assert info.stop_reason[r] == ref_info["stop_reason"]
