import numpy as np
import pytest
from scipy.stats import norm

from oracles import c_reg_oracle, contraction_rate_oracle, tau_star_convolution
from uturnlab.flows import Flow
from uturnlab.gaussmodel import isotropic, sample_phase_point, two_scale
from uturnlab.hmc import (
    HMCKernel,
    IntegrationTimeLaw,
    LawFlowError,
    band_set,
    coupled_hmc_step,
    exact_contraction_rate,
    exact_regularization_constant,
    hmc_transition,
    maximal_shift_meet,
    meeting_probability,
    shift_coupled_hmc_step,
    tau_star_weights,
)
from uturnlab.rng import substreams


def test_tau_star_examples():
    assert tau_star_weights(0.1, 0) == {0: 1.0}
    assert tau_star_weights(0.1, 1) == {-1: 0.25, 0: 0.5, 1: 0.25}
    w = tau_star_weights(0.1, 3)
    assert len(w) == 15 and sum(w.values()) == 1.0


@pytest.mark.parametrize("k", range(0, 13))
def test_tau_star_matches_convolution_and_is_symmetric(k):
    w = tau_star_weights(1.0, k)
    ref = tau_star_convolution(k)
    assert set(w) == set(ref)
    assert all(abs(w[j] - ref[j]) <= 1e-15 for j in w)
    assert all(w[j] == w[-j] for j in w)
    assert sum(w.values()) == 1.0


def test_triangular_draw_law():
    law = IntegrationTimeLaw.triangular(0.5, 2)
    rng = np.random.default_rng(0)
    n = 40_000
    draws = np.array([law.draw(rng) for _ in range(n)])
    for j, w in tau_star_weights(0.5, 2).items():
        freq = np.mean(np.isclose(draws, 0.5 * j))
        assert abs(freq - w) <= 4 * np.sqrt(w * (1 - w) / n)


def test_law_validation_and_json():
    with pytest.raises(ValueError):
        IntegrationTimeLaw("point")
    with pytest.raises(ValueError):
        IntegrationTimeLaw.triangular(-1.0, 2)
    with pytest.raises(ValueError):
        IntegrationTimeLaw.exponential(0.0)
    with pytest.raises(ValueError):
        IntegrationTimeLaw.from_json({"variant": "point", "t": 1.0, "h": 2.0})
    for law in [IntegrationTimeLaw.point(1.5), IntegrationTimeLaw.triangular(0.1, 4),
                IntegrationTimeLaw.exponential(2.0)]:
        assert IntegrationTimeLaw.from_json(law.to_json()) == law


def test_law_flow_compatibility():
    with pytest.raises(LawFlowError):
        IntegrationTimeLaw.exponential(1.0).check_flow(Flow.leapfrog(0.1))
    with pytest.raises(LawFlowError):
        IntegrationTimeLaw.point(0.15).check_flow(Flow.leapfrog(0.1))
    IntegrationTimeLaw.point(0.3).check_flow(Flow.leapfrog(0.1))
    IntegrationTimeLaw.triangular(0.1, 3).check_flow(Flow.leapfrog(0.1))
    IntegrationTimeLaw.exponential(1.0).check_flow(Flow.exact())


def test_point_zero_is_identity():
    t = isotropic(1, 4)
    x = np.arange(4.0)
    assert np.array_equal(hmc_transition(t, x, IntegrationTimeLaw.point(0.0), Flow.exact(),
                                         np.random.default_rng(1)), x)


def test_kernel_matches_single_transition():
    t = two_scale(1, 9, 3, 3)
    law = IntegrationTimeLaw.triangular(0.1, 3)
    kernel = HMCKernel(t, law, Flow.leapfrog(0.1))
    x = sample_phase_point(t, np.random.default_rng(2), 10).x
    new = kernel.step(x, substreams(5, "replica", 10))
    for r, g in enumerate(substreams(5, "replica", 10)):
        assert np.allclose(new[r], hmc_transition(t, x[r], law, Flow.leapfrog(0.1), g), atol=1e-13)


def test_contraction_rate_examples():
    t = isotropic(1, 10)
    assert exact_contraction_rate(t, IntegrationTimeLaw.triangular(0.3, 0)) == 0.0
    assert exact_contraction_rate(t, IntegrationTimeLaw.triangular(np.pi / 2, 1)) == pytest.approx(0.25)
    ts = two_scale(1, 2500, 2000, 2000)
    for h, k, hbar in [(0.026, 7, 0.0), (0.026, 7, 0.026), (0.094 / 63, 6, 0.0)]:
        law = IntegrationTimeLaw.triangular(h, k)
        assert exact_contraction_rate(ts, law, hbar) == pytest.approx(
            contraction_rate_oracle(ts.blocks(), h, k, hbar), rel=1e-12)
    with pytest.raises(ValueError):
        exact_contraction_rate(t, IntegrationTimeLaw.exponential(1.0))


def test_coupled_step_examples():
    t = isotropic(1, 1)
    rng = np.random.default_rng(3)
    law = IntegrationTimeLaw.triangular(0.5, 2)
    a, b = coupled_hmc_step(t, [1.0], [3.0], law, Flow.exact(), rng, t=0.0)
    assert b[0] - a[0] == pytest.approx(2.0)
    a, b = coupled_hmc_step(t, [1.0], [3.0], law, Flow.exact(), rng, t=np.pi / 2)
    assert abs(b[0] - a[0]) <= 1e-15


def test_meeting_probability_and_coupling():
    rng = np.random.default_rng(4)
    v = rng.standard_normal(6)
    out, met = maximal_shift_meet(v, np.zeros(6), rng)
    assert met and np.array_equal(out, v)
    n = 100_000
    s = np.array([2.0, 0, 0])
    v0 = rng.standard_normal((n, 3))
    vt, met = maximal_shift_meet(v0, s, rng)
    p = 2 * norm.cdf(-1.0)
    assert meeting_probability(s) == pytest.approx(0.3173, abs=1e-4)
    assert abs(met.mean() - p) <= 3 * np.sqrt(p * (1 - p) / n)
    se = 1 / np.sqrt(n)
    assert np.all(np.abs(vt.mean(axis=0)) <= 3 * se)
    # variance of a sample variance is about 2 / n for unit Gaussians
    assert np.all(np.abs(vt.var(axis=0) - 1) <= 3 * np.sqrt(2 / n))
    assert np.allclose(vt[met], v0[met] + s)
    # the orthogonal complement is shared
    assert np.array_equal(vt[:, 1:], v0[:, 1:])


def test_shift_coupling_meets_to_same_position():
    t = two_scale(1, 4, 2, 2)
    law = IntegrationTimeLaw.point(0.7)
    rng = np.random.default_rng(5)
    x, xt = np.array([0.1, 0.2, 0.0, -0.1]), np.array([0.15, 0.2, 0.02, -0.1])
    met_any = False
    for _ in range(50):
        a, b, met = shift_coupled_hmc_step(t, x, xt, law, Flow.exact(), rng)
        if met:
            met_any = True
            assert np.allclose(a, b, atol=1e-12)
    assert met_any


def test_band_set_and_regularization():
    t = isotropic(1, 5)
    law = IntegrationTimeLaw.triangular(0.5, 3)
    bands = band_set(t, law, 0.3)
    res = exact_regularization_constant(t, law, 0.0, bands)
    ref, mass = c_reg_oracle(t.blocks(), 0.5, 3, 0.3)
    assert not res.infinite
    assert res.value == pytest.approx(ref, rel=1e-12)
    assert res.excluded_mass == pytest.approx(mass, abs=1e-15)
    empty = exact_regularization_constant(t, law, 0.0, [])
    assert empty.infinite and empty.value == float("inf")
    full = exact_regularization_constant(t, law, 0.0, [(-100.0, 100.0)])
    assert full.value == 0.0 and full.excluded_mass == 1.0
