"""Acceptance criteria C1-C11, each recorded as one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py`` (the summary is printed at the end of
the session) or ``python tests/test_acceptance.py``.
"""
import sys
import time

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln

from ebidlma.experiment import load_scenario, run_experiment, synthesize, toy_training_pairs
from ebidlma.separator import (
    SeparationConfig,
    apply_demixing,
    eb_cost,
    identity_demixing,
    ip_sweep,
    mm_bound,
    separate,
    xi_weights,
)
from ebidlma.sourcemodel import EbSourceEstimate, GaussSourceEstimate, StaticGridProvider, marginal_density
from ebidlma.spectral import StftConfig, istft, stft
from ebidlma.trainer import (
    NetworkArchitecture,
    TrainConfig,
    context_features,
    forward,
    loss_and_grad,
    proposition1_probe,
    train,
)

from conftest import SCENARIOS, finite_difference_check, random_complex, smooth_point

RESULTS = {}


def record(key, ok, detail):
    RESULTS[key] = (bool(ok), detail)
    assert ok, f"{key}: {detail}"


@pytest.fixture(scope="module")
def oracle_run():
    scenario = load_scenario(SCENARIOS / "oracle_2x2.json")
    start = time.perf_counter()
    result = run_experiment(scenario)
    return scenario, result, time.perf_counter() - start


def test_c1_mm_monotonicity():
    start = time.perf_counter()
    worst = -np.inf
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n_bins, n_frames = 65, 200
        S = random_complex(rng, 2, n_bins, n_frames) * rng.gamma(0.5, 1.0, (2, n_bins, n_frames))
        A = random_complex(rng, n_bins, 2, 2)
        X = np.einsum("imn,nij->mij", A, S)
        r = np.abs(S) * np.exp(0.5 * rng.standard_normal(S.shape)) + 0.05
        nu = rng.choice([1.0, 10.0, 100.0, 1000.0], size=S.shape)
        W = identity_demixing(n_bins, 2)
        prev = eb_cost(W, X, r, nu)
        for _ in range(100):
            ip_sweep(W, X, xi_weights(apply_demixing(W, X), r, nu))
            cur = eb_cost(W, X, r, nu)
            worst = max(worst, (cur - prev) / abs(prev))
            prev = cur
    elapsed = time.perf_counter() - start
    record("C1", worst <= 1e-9 and elapsed < 30,
           f"max relative cost increase {worst:.2e} over 5x100 sweeps (limit 1e-9), {elapsed:.1f} s")


def quadrature_marginal(y_power, a, b):
    def integrand(v):
        return np.exp(-y_power / v) / (np.pi * v) * np.exp(a * np.log(b) - gammaln(a) - (a + 1) * np.log(v) - b / v)

    mode = b / (a + 1)
    lo, _ = integrate.quad(integrand, 0, mode, epsabs=0, epsrel=1e-12, limit=200)
    hi, _ = integrate.quad(integrand, mode, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    return lo + hi


def test_c2_marginalization_identity():
    start = time.perf_counter()
    worst = 0.0
    for a in np.linspace(0.5, 10, 5):
        for b in np.linspace(0.5, 10, 5):
            for y2 in np.linspace(0, 4, 5):
                closed = float(marginal_density(y2, a, b))
                worst = max(worst, abs(closed - quadrature_marginal(y2, a, b)) / closed)
    elapsed = time.perf_counter() - start
    record("C2", worst < 1e-6 and elapsed < 5,
           f"max relative gap to quadrature {worst:.2e} on 125 points (limit 1e-6), {elapsed:.2f} s")


def test_c3_reduction_chain():
    scenario = load_scenario(SCENARIOS / "oracle_2x2.json")
    cfg = StftConfig(**scenario["stft"])
    mix = synthesize(scenario, 0)
    X = stft(mix.observed, cfg)
    truth = np.maximum(np.abs(stft(mix.sources, cfg)), 10**-0.5)
    const = [StaticGridProvider(EbSourceEstimate(s, np.full(s.shape, 10.0))) for s in truth]
    eb = separate(X, const, SeparationConfig("eb", 50))
    t = separate(X, const, SeparationConfig("t", 50, fixed_nu=10.0))
    identical = np.array_equal(eb.W, t.W) and np.array_equal(eb.images, t.images)
    huge = [StaticGridProvider(EbSourceEstimate(s, np.full(s.shape, 1e12))) for s in truth]
    gauss = separate(X, [StaticGridProvider(GaussSourceEstimate(s)) for s in truth], SeparationConfig("gauss", 50))
    gap = np.linalg.norm(separate(X, huge, SeparationConfig("eb", 50)).W - gauss.W)
    record("C3", identical and gap < 1e-4,
           f"EB(const nu) vs t bit-identical={identical}; EB(nu=1e12) vs Gauss Frobenius gap {gap:.2e} (limit 1e-4)")


def test_c4_proposition1():
    grid = np.logspace(-3, 6, 61)
    values = proposition1_probe(grid)
    spot = abs(float(proposition1_probe(1.0)) - (0.5 * np.log(3) - 1))
    record("C4", np.all(values < 0) and spot <= 1e-12,
           f"max derivative {values.max():.3e} (<0 required); |probe(1) - (ln3/2 - 1)| = {spot:.1e}")


def test_c5_surrogate_bound():
    rng = np.random.default_rng(5)
    n = 100_000
    gamma = np.exp(rng.uniform(-6, 6, n))
    y2 = np.exp(rng.uniform(-8, 6, n))
    nu = np.exp(rng.uniform(np.log(1e-3), np.log(1e4), n))
    r2 = np.exp(rng.uniform(-6, 6, n))
    exact = np.log1p(2 * y2 / (nu * r2))
    slack = mm_bound(y2, r2, nu, gamma) - exact
    violations = int(np.sum(slack < -1e-12 * np.maximum(1.0, np.abs(exact))))
    eq_gamma = 1 + 2 * y2 / (nu * r2)
    tight = float(np.max(np.abs(mm_bound(y2, r2, nu, eq_gamma) - np.log(eq_gamma))))
    record("C5", violations == 0 and tight <= 1e-12,
           f"{violations} violations in {n} tuples; max gap at equality gamma {tight:.1e} (limit 1e-12)")


def test_c6_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    worst = {}
    for kind in ("gauss", "eb"):
        arch = NetworkArchitecture(kind, n_bins=4, context=1, hidden=16)
        worst[kind] = 0.0
        for _ in range(100):
            params, x = smooth_point(arch, rng, batch=4)
            t = rng.uniform(0, 3, (4, arch.n_bins))
            _, grads = loss_and_grad(params, arch, x, t)
            err = finite_difference_check(lambda p: loss_and_grad(p, arch, x, t)[0], params, grads,
                                          step=1e-5, per_tensor=24, rng=rng)
            worst[kind] = max(worst[kind], err)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    record("C6", ok, f"worst relative error IS {worst['gauss']:.1e}, EB {worst['eb']:.1e} over 100 points each "
                     f"(limit 1e-4), {elapsed:.1f} s")


def test_c7_oracle_separation(oracle_run):
    scenario, result, elapsed = oracle_run
    gain = result.mean_improvement("gauss")
    per_seed = [round(float(r.si_sdr_improvement.mean()), 1) for r in result.reports("gauss")]
    record("C7", gain >= 10 and elapsed < 120,
           f"mean SI-SDR improvement {gain:.2f} dB over {len(per_seed)} seeds (limit 10 dB), {elapsed:.1f} s; "
           f"per seed {per_seed}")


def test_c8_eb_beats_gauss_under_corruption():
    result = run_experiment(load_scenario(SCENARIOS / "corrupted_band.json"))
    g, e = result.mean_si_sdr("gauss"), result.mean_si_sdr("eb")
    margins = [round(float(a.si_sdr.mean() - b.si_sdr.mean()), 1)
               for a, b in zip(result.reports("eb"), result.reports("gauss"))]
    record("C8", e - g >= 0,
           f"mean SI-SDR EB {e:.2f} dB vs Gauss {g:.2f} dB, gap {e - g:+.2f} dB; per-seed margins {margins}")


def test_c9_back_projection_identity(oracle_run):
    scenario, result, _ = oracle_run
    cfg = StftConfig(**scenario["stft"])
    ref = scenario["separation"]["reference_channel"]
    worst = 0.0
    for run in result.runs:
        X = stft(synthesize(scenario, run.seed).observed, cfg)
        worst = max(worst, float(np.max(np.abs(run.state.images.sum(axis=0) - X[ref]))))
    record("C9", worst < 1e-10, f"max |sum of images - reference channel| {worst:.1e} over {len(result.runs)} runs")


def test_c10_stft_round_trip():
    rng = np.random.default_rng(10)
    cfg = StftConfig()
    worst = 0.0
    for _ in range(10):
        x = rng.standard_normal(int(rng.integers(8000, 40000)))
        worst = max(worst, float(np.max(np.abs(istft(stft(x, cfg), cfg, x.size) - x))))
    record("C10", worst < 1e-10, f"max reconstruction error {worst:.1e} on 10 signals (limit 1e-10)")


def test_c11_trainer_end_to_end():
    start = time.perf_counter()
    pairs = toy_training_pairs(n_pairs=20, seed=0)
    result = train(pairs[:16], TrainConfig(loss="eb", epochs=200), validation=pairs[16:])
    l0, l_end = result.loss_curve[0]["val_loss"], result.loss_curve[-1]["val_loss"]
    drop = (l0 - l_end) / abs(l0)
    net = result.network
    feats = [context_features(np.abs(p.target + p.interferer), net.arch.context) for p in pairs]
    nus = [forward(net.params, net.arch, f)[0]["nu"] for f in feats]
    lo, hi = min(float(n.min()) for n in nus), max(float(n.max()) for n in nus)
    elapsed = time.perf_counter() - start
    record("C11", drop >= 0.5 and lo >= 1 and hi <= 1000 and elapsed < 300,
           f"validation EB loss {l0:.1f} -> {l_end:.1f} (drop {100 * drop:.0f}% of |L0|, need 50%); "
           f"nu in [{lo:.2f}, {hi:.2f}]; {elapsed:.1f} s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
