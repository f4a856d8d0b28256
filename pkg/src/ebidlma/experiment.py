"""Synthetic mixtures and scenario-driven separation experiments.

A scenario is a JSON document::

    {
      "name": "oracle-2x2",
      "sample_rate": 8000,
      "duration": 8.0,
      "stft": {"window_length": 4096, "hop_length": 2048, "window_kind": "hamming"},
      "sources": [{"kind": "band_noise", "band": [50, 1500]},
                  {"kind": "band_noise", "band": [1500, 3900]}],
      "mixing": {"kind": "random", "condition_number": 3.0},
      "separation": {"spatial_iters": 100, "model_refresh_period": 10},
      "corruption": {"band": [0, 1000], "log_std": 2.0},
      "variants": [{"name": "gauss", "variant": "gauss"},
                   {"name": "eb", "variant": "eb", "nu": 1000, "low_nu_band": [0, 1000]}],
      "seeds": [0, 1, 2]
    }

Source kinds: ``band_noise`` (``band``, ``floor_db``, ``amplitude``), ``tone``
(``freq``, ``amplitude``) and ``wav`` (``path``). Mixing kinds: ``identity``,
``matrix`` (``matrix``), ``random`` (``condition_number``) and ``fir``
(``condition_number``, ``taps``, ``decay_ms``). Variant providers are oracle by
default; ``"provider": "network"`` with ``checkpoints`` uses trained networks.
"""
import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError
from .metrics import DEFAULT_CEILING, best_permutation_metrics
from .separator import SeparationConfig, canonical_variant, separate
from .sourcemodel import (
    DEFAULT_ANCHORS,
    DEFAULT_EPS,
    EbSourceEstimate,
    GaussSourceEstimate,
    NetworkProvider,
    StaticGridProvider,
    clamp_scale,
)
from .spectral import StftConfig, istft, read_wav, stft

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "scenario", "variant", "seed", "source", "estimate", "si_sdr", "sd_sdr",
    "mixture_si_sdr", "si_sdr_improvement", "sd_sdr_improvement",
]


def band_noise_source(n_samples, sample_rate, band, rng, floor_db=-40.0, amplitude=0.1,
                      segment_s=0.25):
    """Gaussian noise confined to ``band`` (Hz) with a weak broadband floor.

    The level follows a random piecewise-constant envelope in [0.1, 1] so
    the per-slot power varies over time.
    """
    lo, hi = band
    if not 0 <= lo < hi <= sample_rate / 2:
        raise ConfigError(f"band {band} outside [0, {sample_rate / 2}] Hz")
    spec = np.fft.rfft(rng.standard_normal(n_samples))
    freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    gain = np.where((freqs >= lo) & (freqs < hi), 1.0, 10.0 ** (floor_db / 20.0))
    x = np.fft.irfft(spec * gain, n_samples)
    seg = max(1, int(segment_s * sample_rate))
    levels = rng.uniform(0.1, 1.0, n_samples // seg + 2)
    env = np.interp(np.arange(n_samples) / seg, np.arange(levels.size), levels)
    return amplitude * env * x / x.std()


def tone_source(n_samples, sample_rate, freq, amplitude=0.3, phase=0.0):
    t = np.arange(n_samples) / sample_rate
    return amplitude * np.sin(2 * np.pi * freq * t + phase)


def random_mixing_matrix(n, condition_number, rng):
    """Real ``n x n`` matrix with singular values spaced geometrically from 1 to 1/cond."""
    if condition_number < 1:
        raise ConfigError("condition_number must be >= 1")
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = np.geomspace(1.0, 1.0 / condition_number, n)
    return U @ np.diag(s) @ V.T


def fir_mixing_filters(A, taps, rng, decay_ms=2.0, sample_rate=8000):
    """Direct path ``A`` plus a random tail decaying with time constant ``decay_ms``."""
    if not 1 <= taps <= 64:
        raise ConfigError("FIR mixing supports 1 to 64 taps")
    n_out, n_in = A.shape
    k = np.arange(taps)
    tail = np.exp(-k / max(decay_ms * 1e-3 * sample_rate, 1e-9)) * 0.3
    h = rng.standard_normal((n_out, n_in, taps)) * tail
    h[:, :, 0] = A
    return h


def convolve_mix(sources, filters):
    """``x_m = sum_n h_mn * s_n`` truncated to the source length; also the per-source images."""
    n_out, n_in, _ = filters.shape
    T = sources.shape[1]
    images = np.zeros((n_in, n_out, T))
    for m in range(n_out):
        for n in range(n_in):
            images[n, m] = fftconvolve(sources[n], filters[m, n])[:T]
    return images.sum(axis=0), images


@dataclass
class Mixture:
    sources: np.ndarray
    observed: np.ndarray
    images: np.ndarray
    mixing: np.ndarray
    sample_rate: int


def synthesize(scenario, seed):
    """Draw sources and a mixing system for one seed."""
    rng = np.random.default_rng(seed)
    fs = int(scenario.get("sample_rate", 8000))
    T = int(round(float(scenario.get("duration", 8.0)) * fs))
    specs = scenario.get("sources")
    if not specs:
        raise ConfigError("scenario lists no sources")
    srcs = []
    for spec in specs:
        kind = spec.get("kind")
        if kind == "band_noise":
            srcs.append(band_noise_source(T, fs, spec["band"], rng, spec.get("floor_db", -40.0),
                                          spec.get("amplitude", 0.1)))
        elif kind == "tone":
            srcs.append(tone_source(T, fs, spec["freq"], spec.get("amplitude", 0.3), spec.get("phase", 0.0)))
        elif kind == "wav":
            if not os.path.exists(spec["path"]):
                raise FileNotFoundError(spec["path"])
            data, rate = read_wav(spec["path"])
            if rate != fs:
                raise ConfigError(f"{spec['path']}: sample rate {rate} != scenario rate {fs}")
            if data.shape[1] < T:
                raise ConfigError(f"{spec['path']}: shorter than the scenario duration")
            srcs.append(data[0, :T])
        else:
            raise ConfigError(f"unknown source kind {kind!r}")
    sources = np.stack(srcs)
    n = len(sources)
    mix = scenario.get("mixing", {"kind": "random", "condition_number": 3.0})
    kind = mix.get("kind", "random")
    if kind == "identity":
        A = np.eye(n)
    elif kind == "matrix":
        A = np.asarray(mix["matrix"], dtype=float)
        if A.shape != (n, n):
            raise ConfigError(f"mixing matrix must be {n}x{n}")
    elif kind in ("random", "fir"):
        A = random_mixing_matrix(n, float(mix.get("condition_number", 3.0)), rng)
    else:
        raise ConfigError(f"unknown mixing kind {kind!r}")
    if kind == "fir":
        filters = fir_mixing_filters(A, int(mix.get("taps", 32)), rng, float(mix.get("decay_ms", 2.0)), fs)
    else:
        filters = A[:, :, None]
    observed, images = convolve_mix(sources, filters)
    return Mixture(sources, observed, images, A, fs)


def corrupt_scale(scale, bins, rng, log_std):
    """Multiply ``scale[bins]`` by log-normal noise with ``log_std`` (natural log units)."""
    out = np.array(scale, dtype=float)
    out[bins] *= np.exp(log_std * rng.standard_normal(out[bins].shape))
    return out


def band_bins(band, cfg, sample_rate):
    freqs = np.arange(cfg.n_bins) * sample_rate / cfg.window_length
    return (freqs >= band[0]) & (freqs < band[1])


def oracle_providers(truth, variant, cfg, sample_rate, rng, corruption=None, eps=DEFAULT_EPS):
    """Static oracle providers from groundtruth spectrograms ``(n_sources, n_bins, n_frames)``."""
    mags = np.abs(truth)
    if corruption:
        bins = band_bins(corruption["band"], cfg, sample_rate)
        mags = np.stack([corrupt_scale(m, bins, rng, float(corruption.get("log_std", 2.0))) for m in mags])
    scale = clamp_scale(mags, eps)
    name = canonical_variant(variant["variant"])
    if name == "gauss":
        return [StaticGridProvider(GaussSourceEstimate(s)) for s in scale]
    nu = np.full(scale.shape[1:], float(variant.get("nu", DEFAULT_ANCHORS[-1])))
    if "low_nu_band" in variant:
        nu[band_bins(variant["low_nu_band"], cfg, sample_rate)] = float(variant.get("low_nu", DEFAULT_ANCHORS[0]))
    return [StaticGridProvider(EbSourceEstimate(s, nu)) for s in scale]


def _separation_config(scenario, variant):
    base = dict(scenario.get("separation", {}))
    for key in ("spatial_iters", "model_refresh_period", "fixed_nu", "reference_channel", "eps", "delta"):
        if key in variant:
            base[key] = variant[key]
    base["variant"] = variant["variant"]
    try:
        return SeparationConfig(**base).validate()
    except TypeError as exc:
        raise ConfigError(f"bad separation settings: {exc}") from None


@dataclass
class VariantRun:
    name: str
    seed: int
    report: object
    state: object


@dataclass
class ExperimentResult:
    runs: list = field(default_factory=list)

    def reports(self, variant=None):
        return [r.report for r in self.runs if variant is None or r.name == variant]

    def mean_si_sdr(self, variant):
        return float(np.mean([r.si_sdr.mean() for r in self.reports(variant)]))

    def mean_improvement(self, variant):
        return float(np.mean([r.si_sdr_improvement.mean() for r in self.reports(variant)]))


def run_scenario_seed(scenario, seed, ceiling=DEFAULT_CEILING):
    """Synthesize one mixture and run every configured variant on it."""
    cfg = StftConfig(**scenario.get("stft", {})).validate()
    mix = synthesize(scenario, seed)
    X = stft(mix.observed, cfg)
    truth = stft(mix.sources, cfg)
    T = mix.observed.shape[1]
    runs = []
    variants = scenario.get("variants") or [{"name": "gauss", "variant": "gauss"}]
    for v in variants:
        sep_cfg = _separation_config(scenario, v)
        corruption_rng = np.random.default_rng([seed, 7919])
        if v.get("provider", "oracle") == "oracle":
            providers = oracle_providers(truth, v, cfg, mix.sample_rate, corruption_rng,
                                         scenario.get("corruption"), sep_cfg.eps)
        elif v["provider"] == "network":
            from .trainer import SourceNetwork

            providers = [NetworkProvider(SourceNetwork.load(p), sep_cfg.eps) for p in v["checkpoints"]]
        else:
            raise ConfigError(f"unknown provider {v['provider']!r}")
        state = separate(X, providers, sep_cfg)
        estimates = istft(state.images, cfg, T)
        ref = sep_cfg.reference_channel
        report = best_permutation_metrics(
            estimates, mix.sources, mixture=mix.observed[ref], ceiling=ceiling,
            metadata={"scenario": scenario.get("name", "scenario"), "variant": v.get("name", v["variant"]),
                      "seed": seed},
        )
        runs.append(VariantRun(v.get("name", v["variant"]), seed, report, state))
    return runs


def load_scenario(path):
    with open(path) as fh:
        scenario = json.load(fh)
    if not isinstance(scenario, dict):
        raise ConfigError(f"{path}: scenario must be a JSON object")
    return scenario


def run_experiment(scenario, out_dir=None):
    """Run every seed and variant; optionally write metrics and cost-trace CSVs."""
    if isinstance(scenario, (str, os.PathLike)):
        scenario = load_scenario(scenario)
    result = ExperimentResult()
    for seed in scenario.get("seeds", [0]):
        result.runs.extend(run_scenario_seed(scenario, int(seed)))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), result.reports())
        with open(os.path.join(out_dir, "cost_traces.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", "iteration", "cost"])
            for run in result.runs:
                for it, c in enumerate(run.state.cost_trace):
                    w.writerow([run.name, run.seed, it, repr(c)])
    return result


def write_metrics_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for rep in reports:
            for row in rep.rows():
                writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                                 for k, v in row.items()})


def toy_training_pairs(n_pairs=24, duration=1.0, sample_rate=8000, cfg=StftConfig(64, 32, "hamming"),
                       target_band=(0, 1500), interferer_band=(2000, 4000), seed=0):
    """Disjoint-band target/interferer spectrogram pairs for desk-scale training."""
    from .trainer import TrainingPair

    rng = np.random.default_rng(seed)
    T = int(duration * sample_rate)
    pairs = []
    for _ in range(n_pairs):
        s = band_noise_source(T, sample_rate, target_band, rng, amplitude=0.3, segment_s=0.05)
        n = band_noise_source(T, sample_rate, interferer_band, rng, amplitude=0.3, segment_s=0.05)
        pairs.append(TrainingPair(stft(s, cfg), stft(n, cfg)))
    return pairs
