import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize
from scipy.special import gammaln

from ebidlma.errors import ConfigError
from ebidlma.sourcemodel import (
    DEFAULT_EPS,
    AnchorSet,
    EbSourceEstimate,
    GaussSourceEstimate,
    InverseGammaParams,
    NetworkProvider,
    OracleEbProvider,
    OracleGaussProvider,
    StaticGridProvider,
    anchor_combine,
    clamp_scale,
    inverse_gamma_pdf,
    load_grids,
    marginal_density,
    provider_refresh,
    providers_from_grids,
    save_grids,
    student_t_density,
)


def quad_marginal(y_power, a, b):
    """Integrate the complex Gaussian against the inverse gamma prior over the variance."""
    # Written out by hand so the oracle does not reuse the module's densities.
    def integrand(v):
        gauss = np.exp(-y_power / v) / (np.pi * v)
        prior = np.exp(a * np.log(b) - gammaln(a) - (a + 1) * np.log(v) - b / v)
        return gauss * prior

    # Split at the prior mode so quad sees the peak.
    mode = b / (a + 1)
    left, _ = integrate.quad(integrand, 0, mode, epsabs=0, epsrel=1e-12, limit=200)
    right, _ = integrate.quad(integrand, mode, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    return left + right


def test_inverse_gamma_substitution():
    assert inverse_gamma_pdf(1.0, InverseGammaParams(1, 1)) == pytest.approx(np.exp(-1), abs=1e-12)


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.0, 3.0), (0.7, 5.0), (10.0, 0.5)])
def test_inverse_gamma_normalized(a, b):
    p = InverseGammaParams(a, b)
    mode = b / (a + 1)
    total = sum(integrate.quad(lambda v: float(inverse_gamma_pdf(v, p)), lo, hi, epsrel=1e-12, limit=200)[0]
                for lo, hi in [(0, mode), (mode, np.inf)])
    assert total == pytest.approx(1.0, abs=1e-6)


def test_inverse_gamma_mode():
    p = InverseGammaParams(2.0, 3.0)
    res = optimize.minimize_scalar(lambda v: -float(inverse_gamma_pdf(v, p)), bounds=(0.1, 5), method="bounded",
                                   options={"xatol": 1e-10})
    assert res.x == pytest.approx(1.0, abs=1e-6)


def test_inverse_gamma_rejects_nonpositive():
    with pytest.raises(ValueError):
        inverse_gamma_pdf(0.0, InverseGammaParams(1, 1))
    with pytest.raises(ValueError):
        InverseGammaParams(-1, 1)


def test_marginal_substitution():
    assert marginal_density(0.0, 1.0, 1.0) == pytest.approx(1 / np.pi, rel=1e-14)
    assert marginal_density(1.0, 1.0, 1.0) == pytest.approx(1 / (4 * np.pi), rel=1e-14)


def test_marginal_equals_quadrature_of_gaussian_times_prior():
    assert marginal_density(0.5, 2.0, 3.0) == pytest.approx(quad_marginal(0.5, 2.0, 3.0), rel=1e-6)


@given(st.floats(0.3, 8.0), st.floats(0.2, 8.0))
@settings(max_examples=20, deadline=None)
def test_marginal_integrates_to_one_over_complex_plane(a, b):
    # Radial integral 2*pi * int p(rho^2) rho d rho, rewritten in u = rho^2.
    total, _ = integrate.quad(lambda u: np.pi * float(marginal_density(u, a, b)), 0, np.inf, epsrel=1e-10, limit=200)
    assert total == pytest.approx(1.0, abs=1e-4)


def test_student_t_parametrization():
    r2, nu = 1.7, 6.0
    a, b = nu / 2, nu / 2 * r2
    assert student_t_density(0.3, r2, nu) == pytest.approx(marginal_density(0.3, a, b), rel=1e-14)


def test_anchor_combine_examples():
    K = AnchorSet()
    assert anchor_combine([0, 0, 0, 1], K) == pytest.approx(1000)
    assert anchor_combine([0.25] * 4, K) == pytest.approx(277.75)
    assert anchor_combine([0.5, 0.5, 0, 0], K) == pytest.approx(5.5)
    with pytest.raises(ValueError, match="sum to 1"):
        anchor_combine([0.5, 0.5, 0.1, 0], K)


@given(st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda w: sum(w) > 1e-3),
       st.integers(0, 2), st.floats(0.0, 1.0))
def test_anchor_combine_bounded_and_monotone(weights, k, frac):
    K = AnchorSet()
    w = np.array(weights) / np.sum(weights)
    nu = anchor_combine(w, K)
    assert K.min <= nu <= K.max
    shifted = w.copy()
    moved = w[k] * frac
    shifted[k] -= moved
    shifted[k + 1] += moved
    assert anchor_combine(shifted, K) >= nu - 1e-9


def test_anchor_set_validation():
    with pytest.raises(ValueError):
        AnchorSet((1, 1, 2))
    with pytest.raises(ValueError):
        AnchorSet((-1, 2))


def test_clamp_scale():
    assert clamp_scale(0.01) == pytest.approx(0.316227766, abs=1e-9)
    assert clamp_scale(2.0) == 2.0
    np.testing.assert_array_equal(clamp_scale(np.zeros((2, 3))), np.full((2, 3), DEFAULT_EPS))


@given(st.lists(st.floats(0, 10), min_size=1, max_size=20))
def test_clamp_idempotent_and_monotone(values):
    x = np.array(values)
    once = clamp_scale(x)
    np.testing.assert_array_equal(clamp_scale(once), once)
    assert np.all(clamp_scale(x + 0.5) >= once)


def test_oracle_gauss_provider(rng):
    truth = np.array([[3 + 4j, 0.0], [1e-3, 2.0]])
    est = OracleGaussProvider(truth).estimate(np.ones((2, 2)))
    np.testing.assert_allclose(est.sigma, [[5.0, DEFAULT_EPS], [DEFAULT_EPS, 2.0]])
    # With |w^H x| = |s| the per-slot Gauss term is log sigma^2 + 1 at non-silent slots.
    s = np.abs(truth[truth != 0][np.abs(truth[truth != 0]) > DEFAULT_EPS])
    sig = est.sigma[np.abs(truth) > DEFAULT_EPS]
    np.testing.assert_allclose(np.log(sig**2) + s**2 / sig**2, np.log(sig**2) + 1)
    with pytest.raises(ConfigError, match="frame axis"):
        OracleGaussProvider(truth).estimate(np.ones((2, 3)))


def test_oracle_eb_default_nu_is_max_anchor():
    est = OracleEbProvider(np.ones((3, 4))).estimate()
    assert np.all(est.nu == 1000)


def test_static_provider_is_constant():
    est = EbSourceEstimate(np.ones((2, 2)), np.full((2, 2), 7.0))
    p = StaticGridProvider(est)
    assert p.estimate(np.zeros((2, 2))) is p.estimate(np.ones((2, 2)))


def test_provider_refresh_checks_counts():
    with pytest.raises(ConfigError):
        provider_refresh(np.ones((2, 3, 4)), [OracleGaussProvider(np.ones((3, 4)))])


def test_estimate_validation():
    with pytest.raises(ValueError):
        GaussSourceEstimate(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        EbSourceEstimate(np.ones((2, 2)), np.zeros((2, 2)))
    est = EbSourceEstimate(np.ones(3), np.array([2.0, 1e6, 0.5]))
    rel = est.reliability
    assert rel[0] == 0.5 and np.all((rel > 0) & (rel < 1))


def test_grid_file_round_trip(tmp_path, rng):
    ests = [EbSourceEstimate(rng.uniform(1, 2, (5, 6)), rng.uniform(1, 1000, (5, 6))) for _ in range(2)]
    path = tmp_path / "g.npz"
    save_grids(path, ests, AnchorSet())
    grids = load_grids(path, expected_shape=(5, 6, 2))
    assert grids["r"].shape == (5, 6, 2)
    np.testing.assert_array_equal(grids["nu"][..., 1], ests[1].nu)
    provs = providers_from_grids(grids, "eb")
    np.testing.assert_array_equal(provs[0].estimate().r, ests[0].r)
    with pytest.raises(ConfigError, match="frame axis J has size 6, expected 7"):
        load_grids(path, expected_shape=(5, 7, 2))
    with pytest.raises(ConfigError, match="source axis N"):
        load_grids(path, expected_shape=(5, 6, 3))


def test_grids_fixed_nu_override(tmp_path):
    path = tmp_path / "g.npz"
    save_grids(path, [GaussSourceEstimate(np.ones((2, 2)))])
    grids = load_grids(path)
    with pytest.raises(ConfigError, match="nu"):
        providers_from_grids(grids, "eb")
    est = providers_from_grids(grids, "eb", fixed_nu=500)[0].estimate()
    assert np.all(est.nu == 500)


class _ZeroNet:
    class arch:
        kind = "eb"
        n_bins = 3

    def predict(self, magnitude):
        shape = magnitude.shape
        return {"r": np.zeros(shape), "nu": np.full(shape, 277.75)}


def test_network_provider_clamps_scale():
    est = NetworkProvider(_ZeroNet()).estimate(np.zeros((3, 4)))
    assert np.all(est.r == DEFAULT_EPS) and np.all(est.nu == 277.75)
    with pytest.raises(ConfigError, match="frequency bins"):
        NetworkProvider(_ZeroNet()).estimate(np.zeros((4, 4)))
