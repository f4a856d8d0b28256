"""Source models: per-slot likelihood hyperparameters for the separator.

Gauss-IDLMA needs a scale grid ``sigma``; the Student's-t variants need a
scale grid ``r`` and a degrees-of-freedom grid ``nu``. A provider turns the
magnitude of the current separated estimate of one source into such grids.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from ._npz import save_npz
from .errors import ConfigError

DEFAULT_EPS = 10.0 ** -0.5
DEFAULT_DELTA = 1e-5
DEFAULT_ANCHORS = (1.0, 10.0, 100.0, 1000.0)
GRID_FORMAT = "ebidlma-grid-v1"


@dataclass(frozen=True)
class AnchorSet:
    anchors: tuple = DEFAULT_ANCHORS

    def __post_init__(self):
        k = np.asarray(self.anchors, dtype=float)
        if k.ndim != 1 or k.size == 0:
            raise ValueError("anchor set must be a non-empty 1-D sequence")
        if np.any(k <= 0) or np.any(np.diff(k) <= 0):
            raise ValueError(f"anchors must be positive and strictly increasing, got {self.anchors}")
        object.__setattr__(self, "anchors", tuple(float(v) for v in k))

    def __len__(self):
        return len(self.anchors)

    @property
    def values(self):
        return np.asarray(self.anchors)

    @property
    def min(self):
        return self.anchors[0]

    @property
    def max(self):
        return self.anchors[-1]


@dataclass(frozen=True)
class InverseGammaParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"inverse gamma needs a > 0 and b > 0, got a={self.a}, b={self.b}")


def inverse_gamma_pdf(v, params):
    """Density of the inverse gamma prior on a variance ``v``."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("inverse gamma density is defined for v > 0 only")
    a, b = params.a, params.b
    return np.exp(a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(v) - b / v)


def complex_gaussian_pdf(y_power, variance):
    """Isotropic complex Gaussian density evaluated at ``|y|^2 = y_power``."""
    variance = np.asarray(variance, dtype=float)
    return np.exp(-np.asarray(y_power) / variance) / (np.pi * variance)


def marginal_density(y_power, a, b):
    """Complex Student's-t density obtained by integrating out the variance.

    ``a * b**a / (pi * (|y|^2 + b)**(a + 1))``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("marginal density needs a > 0 and b > 0")
    y_power = np.asarray(y_power, dtype=float)
    return a * np.exp(a * np.log(b) - (a + 1.0) * np.log(y_power + b)) / np.pi


def student_t_density(y_power, r2, nu):
    """Same density parametrized by scale ``r**2 = b/a`` and ``nu = 2a``."""
    a = np.asarray(nu, dtype=float) / 2.0
    return marginal_density(y_power, a, a * np.asarray(r2, dtype=float))


def anchor_combine(rho, anchors=AnchorSet(), tol=1e-4):
    """Degrees of freedom as the anchor average ``sum_k rho[..., k] * anchors[k]``."""
    rho = np.asarray(rho, dtype=float)
    k = anchors.values
    if rho.shape[-1] != k.size:
        raise ValueError(f"weights have {rho.shape[-1]} entries for {k.size} anchors")
    if np.any(rho < -tol) or np.any(rho > 1.0 + tol):
        raise ValueError("anchor weights must lie in [0, 1]")
    dev = np.max(np.abs(rho.sum(axis=-1) - 1.0), initial=0.0)
    if dev > tol:
        raise ValueError(f"anchor weights must sum to 1 (max deviation {dev:.3g})")
    return np.clip(rho @ k, k[0], k[-1])


def clamp_scale(raw, eps=DEFAULT_EPS):
    if not eps > 0:
        raise ValueError("eps must be positive")
    return np.maximum(np.asarray(raw, dtype=float), eps)


@dataclass
class GaussSourceEstimate:
    sigma: np.ndarray

    kind = "gauss"

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not np.all(np.isfinite(self.sigma)) or np.any(self.sigma <= 0):
            raise ValueError("sigma must be finite and positive")

    @property
    def shape(self):
        return self.sigma.shape


@dataclass
class EbSourceEstimate:
    r: np.ndarray
    nu: np.ndarray
    rho: Optional[np.ndarray] = None

    kind = "eb"

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.nu = np.broadcast_to(np.asarray(self.nu, dtype=float), self.r.shape)
        if not np.all(np.isfinite(self.r)) or np.any(self.r <= 0):
            raise ValueError("r must be finite and positive")
        if not np.all(np.isfinite(self.nu)) or np.any(self.nu <= 0):
            raise ValueError("nu must be finite and positive")
        if self.rho is not None and self.rho.shape[:-1] != self.r.shape:
            raise ValueError(f"rho shape {self.rho.shape} does not match grid {self.r.shape}")

    @property
    def shape(self):
        return self.r.shape

    @property
    def reliability(self):
        """Weight ``nu / (nu + 2)`` given to ``r**2`` in the surrogate."""
        return self.nu / (self.nu + 2.0)


def _check_grid(shape, expected, what="grid"):
    if expected is not None and tuple(shape) != tuple(expected):
        names = ("frequency axis I", "frame axis J", "source axis N")
        for name, got, want in zip(names, shape, expected):
            if got != want:
                raise ConfigError(f"{what}: {name} has size {got}, expected {want}")
        raise ConfigError(f"{what}: shape {tuple(shape)} != expected {tuple(expected)}")


class SourceModel:
    """Base class. ``kind`` is ``"gauss"`` or ``"eb"``."""

    kind = "gauss"

    def estimate(self, magnitude):
        """Return an estimate from the ``(n_bins, n_frames)`` magnitude of one source."""
        raise NotImplementedError


class OracleGaussProvider(SourceModel):
    """sigma = max(|truth|, eps); ignores the separated estimate."""

    kind = "gauss"

    def __init__(self, truth, eps=DEFAULT_EPS):
        self.truth = np.asarray(truth)
        self.eps = eps
        self._est = GaussSourceEstimate(clamp_scale(np.abs(self.truth), eps))

    def estimate(self, magnitude=None):
        if magnitude is not None:
            _check_grid(np.shape(magnitude), self.truth.shape, "oracle input")
        return self._est


class OracleEbProvider(SourceModel):
    """r from the groundtruth magnitude, nu a constant (or a fixed grid)."""

    kind = "eb"

    def __init__(self, truth, nu=DEFAULT_ANCHORS[-1], eps=DEFAULT_EPS):
        self.truth = np.asarray(truth)
        self.eps = eps
        nu = np.broadcast_to(np.asarray(nu, dtype=float), self.truth.shape).copy()
        self._est = EbSourceEstimate(clamp_scale(np.abs(self.truth), eps), nu)

    def estimate(self, magnitude=None):
        if magnitude is not None:
            _check_grid(np.shape(magnitude), self.truth.shape, "oracle input")
        return self._est


class StaticGridProvider(SourceModel):
    """Returns the same stored estimate at every refresh."""

    def __init__(self, estimate):
        self._est = estimate
        self.kind = estimate.kind

    def estimate(self, magnitude=None):
        if magnitude is not None:
            _check_grid(np.shape(magnitude), self._est.shape, "static grid")
        return self._est


class NetworkProvider(SourceModel):
    """Wraps a trained source network (see :mod:`ebidlma.trainer`).

    The network sees the magnitude of the back-projected estimate and returns
    ``sigma_hat`` (Gauss) or ``(r_hat, nu_hat)`` (empirical Bayes); scales are
    floored at ``eps``.
    """

    def __init__(self, network, eps=DEFAULT_EPS):
        self.network = network
        self.eps = eps
        self.kind = network.arch.kind

    def estimate(self, magnitude):
        magnitude = np.asarray(magnitude, dtype=float)
        if magnitude.shape[0] != self.network.arch.n_bins:
            raise ConfigError(
                f"network expects {self.network.arch.n_bins} frequency bins, got {magnitude.shape[0]}"
            )
        out = self.network.predict(magnitude)
        if self.kind == "gauss":
            return GaussSourceEstimate(clamp_scale(out["sigma"], self.eps))
        return EbSourceEstimate(clamp_scale(out["r"], self.eps), out["nu"], out.get("rho"))


def provider_refresh(magnitudes, providers):
    """Query every provider with the magnitude of its separated source.

    Parameters
    ----------
    magnitudes : ndarray, shape (n_sources, n_bins, n_frames)
    providers : sequence of SourceModel, one per source
    """
    if len(providers) != len(magnitudes):
        raise ConfigError(f"{len(providers)} providers for {len(magnitudes)} sources")
    out = [p.estimate(m) for p, m in zip(providers, magnitudes)]
    for est in out:
        _check_grid(est.shape, magnitudes.shape[1:], "source estimate")
    return out


def save_grids(path, estimates, anchors=None):
    """Store per-source estimates in an ``.npz`` grid file with axes (I, J, N).

    Gauss estimates are written as ``sigma``; EB estimates as ``r`` and ``nu``
    (plus ``rho`` with axes (I, J, N, K) when available).
    """
    kinds = {e.kind for e in estimates}
    if len(kinds) != 1:
        raise ValueError("cannot mix Gauss and EB estimates in one grid file")
    arrays = {"format": np.array(GRID_FORMAT), "axes": np.array("IJN")}
    if kinds == {"gauss"}:
        arrays["sigma"] = np.stack([e.sigma for e in estimates], axis=-1)
    else:
        arrays["r"] = np.stack([e.r for e in estimates], axis=-1)
        arrays["nu"] = np.stack([np.asarray(e.nu) for e in estimates], axis=-1)
        if all(e.rho is not None for e in estimates):
            arrays["rho"] = np.stack([e.rho for e in estimates], axis=2)
    if anchors is not None:
        arrays["anchors"] = np.asarray(anchors.anchors)
    save_npz(path, **arrays)


def load_grids(path, expected_shape=None):
    """Load a grid file written by :func:`save_grids`.

    Returns a dict of arrays with axes (I, J, N). ``expected_shape`` is
    checked axis by axis and a :class:`ConfigError` names the first
    mismatching axis.
    """
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"]) if "format" in data else GRID_FORMAT
        if fmt != GRID_FORMAT:
            raise ConfigError(f"{path}: unsupported grid format {fmt!r}")
        grids = {k: np.asarray(data[k]) for k in data.files if k not in ("format", "axes")}
    if "sigma" not in grids and "r" not in grids:
        raise ConfigError(f"{path}: grid file holds neither 'sigma' nor 'r'")
    for name in ("sigma", "r", "nu"):
        if name in grids:
            if grids[name].ndim != 3:
                raise ConfigError(f"{path}: array {name!r} must be 3-D (I, J, N), got {grids[name].ndim}-D")
            _check_grid(grids[name].shape, expected_shape, f"{path}: array {name!r}")
    return grids


def providers_from_grids(grids, variant, eps=DEFAULT_EPS, fixed_nu=None):
    """Static providers, one per source, for ``variant`` in {gauss, t, eb}."""
    scale = grids.get("sigma", grids.get("r"))
    n_src = scale.shape[-1]
    out = []
    for n in range(n_src):
        s = clamp_scale(scale[..., n], eps)
        if variant == "gauss":
            out.append(StaticGridProvider(GaussSourceEstimate(s)))
            continue
        if fixed_nu is not None:
            nu = np.full(s.shape, float(fixed_nu))
        elif "nu" in grids:
            nu = grids["nu"][..., n]
        elif variant == "eb":
            raise ConfigError("EB separation needs a 'nu' grid or a fixed nu")
        else:
            nu = np.full(s.shape, DEFAULT_ANCHORS[-1])
        out.append(StaticGridProvider(EbSourceEstimate(s, nu)))
    return out
