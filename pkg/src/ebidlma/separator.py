"""Demixing-matrix estimation for Gauss-, t- and EB-IDLMA.

Shapes used throughout:

* observed ``X`` and separated ``Y``: ``(n_channels, n_bins, n_frames)``
* demixing stack ``W``: ``(n_bins, n_sources, n_channels)``; ``W[i, n]`` is the
  row ``w_in^H`` so that ``y_ijn = W[i, n] @ x_ij``.
* hyperparameter grids (``sigma``, ``r``, ``nu``, weights): ``(n_sources, n_bins, n_frames)``
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _backend
from .errors import ConfigError, NumericalError
from .sourcemodel import DEFAULT_DELTA, DEFAULT_EPS, provider_refresh

logger = logging.getLogger(__name__)

VARIANTS = ("gauss", "student_t_fixed_nu", "empirical_bayes")
VARIANT_ALIASES = {"t": "student_t_fixed_nu", "eb": "empirical_bayes", "gauss": "gauss"}
DET_FLOOR = 1e-12


def canonical_variant(name):
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; choose from {VARIANTS} or {tuple(VARIANT_ALIASES)}")
    return name


@dataclass
class SeparationConfig:
    variant: str = "empirical_bayes"
    spatial_iters: int = 100
    model_refresh_period: int = 10
    fixed_nu: Optional[float] = None
    eps: float = DEFAULT_EPS
    delta: float = DEFAULT_DELTA
    reference_channel: int = 0
    backend: Optional[str] = None
    num_threads: int = 1

    def validate(self):
        self.variant = canonical_variant(self.variant)
        if self.spatial_iters < 1:
            raise ConfigError("spatial_iters must be >= 1")
        if self.model_refresh_period < 1:
            raise ConfigError("model_refresh_period must be >= 1")
        if self.variant == "student_t_fixed_nu" and not (self.fixed_nu is not None and self.fixed_nu > 0):
            raise ConfigError("student_t_fixed_nu needs fixed_nu > 0")
        if self.fixed_nu is not None and not self.fixed_nu > 0:
            raise ConfigError("fixed_nu must be positive")
        if not (self.eps > 0 and self.delta > 0):
            raise ConfigError("eps and delta must be positive")
        if self.num_threads < 1:
            raise ConfigError("num_threads must be >= 1")
        return self


def identity_demixing(n_bins, n_channels):
    return np.tile(np.eye(n_channels, dtype=complex), (n_bins, 1, 1))


def apply_demixing(W, X):
    """``y_ij = W_i x_ij`` for every bin and frame."""
    W = np.asarray(W)
    X = np.asarray(X)
    if W.ndim != 3 or X.ndim != 3 or W.shape[0] != X.shape[1] or W.shape[2] != X.shape[0]:
        raise ValueError(f"demixing stack {W.shape} does not fit observation {X.shape}")
    return np.einsum("inm,mij->nij", W, X)


def log_abs_det(W):
    """``log|det W_i|`` per bin; raises if any ``|det W_i| <= 1e-12``."""
    sign, logdet = np.linalg.slogdet(W)
    bad = (sign == 0) | (logdet <= np.log(DET_FLOOR)) | ~np.isfinite(logdet)
    if np.any(bad):
        raise NumericalError(f"demixing matrix singular at bins {np.flatnonzero(bad)[:10].tolist()}")
    return logdet


def gauss_cost(W, X, sigma):
    """Negative log-likelihood of the local Gaussian model, constants dropped."""
    sigma2 = np.asarray(sigma, dtype=float) ** 2
    if np.any(sigma2 <= 0):
        raise ValueError("sigma must be positive")
    Y = apply_demixing(W, X)
    n_frames = X.shape[2]
    data = np.sum(np.log(sigma2) + np.abs(Y) ** 2 / sigma2)
    return float(data - 2.0 * n_frames * np.sum(log_abs_det(W)))


def eb_slot_terms(y_power, r, nu):
    """Per-slot ``log r^2 + (1 + nu/2) log(1 + 2|y|^2 / (nu r^2))``."""
    r2 = np.asarray(r, dtype=float) ** 2
    nu = np.asarray(nu, dtype=float)
    return np.log(r2) + (1.0 + nu / 2.0) * np.log1p(2.0 * y_power / (nu * r2))


def eb_cost(W, X, r, nu):
    """Negative marginal log-likelihood of the Student's-t model, constants dropped."""
    if np.any(np.asarray(r) <= 0) or np.any(np.asarray(nu) <= 0):
        raise ValueError("r and nu must be positive")
    Y = apply_demixing(W, X)
    n_frames = X.shape[2]
    data = np.sum(eb_slot_terms(np.abs(Y) ** 2, r, nu))
    return float(data - 2.0 * n_frames * np.sum(log_abs_det(W)))


def xi_weights(Y, r, nu):
    """Surrogate variances: convex mix of ``r**2`` and ``|y|**2`` with weight ``nu/(nu+2)``."""
    nu = np.asarray(nu, dtype=float)
    r2 = np.asarray(r, dtype=float) ** 2
    return nu / (nu + 2.0) * r2 + 2.0 / (nu + 2.0) * (np.abs(Y) ** 2)


def mm_bound(y_power, r2, nu, gamma):
    """Tangent upper bound of ``log(1 + 2|y|^2/(nu r^2))`` at auxiliary ``gamma``."""
    z = 1.0 + 2.0 * y_power / (nu * r2)
    return (z - gamma) / gamma + np.log(gamma)


def weighted_covariance(X, weights, n, i):
    """``U_in = (1/J) sum_j x_ij x_ij^H / weights[n, i, j]``."""
    x = X[:, i, :]
    return (x / weights[n, i]) @ x.conj().T / X.shape[2]


def ip_update(Wi, U, n):
    """Iterative-projection update of row ``n`` of one demixing matrix.

    Solves ``(W_i U) w = e_n`` and normalizes to ``w^H U w = 1``. Returns the
    new row ``w^H`` and whether regularization of ``U`` was needed.
    """
    Wi = np.array(Wi, dtype=complex)
    U = np.asarray(U, dtype=complex)
    W = Wi[None].copy()
    failed = _ip_fallback_rows(W, U[None], n)
    regularized = bool(failed[0])
    if regularized:
        N = U.shape[0]
        scale = 1e-10 * np.trace(U).real / N
        W = Wi[None].copy()
        if _ip_fallback_rows(W, (U + (scale if scale > 0 else 1e-10) * np.eye(N))[None], n)[0]:
            raise NumericalError("IP update failed even after regularization")
    return W[0, n], regularized


def _ip_fallback_rows(W, U, n):
    from ._ip_fallback import _update_rows

    return _update_rows(W, U, n)


@dataclass
class SweepStats:
    regularized: int = 0


def ip_sweep(W, X, weights, backend=None, num_threads=1, stats=None):
    """Update every row of every demixing matrix once (in place).

    Parameters
    ----------
    W : ndarray, complex, shape (n_bins, n_sources, n_channels)
    X : ndarray, complex, shape (n_channels, n_bins, n_frames)
    weights : ndarray, shape (n_sources, n_bins, n_frames)
        Surrogate variances; ``sigma**2`` for Gauss-IDLMA, ``xi`` otherwise.
    """
    Xf = np.ascontiguousarray(np.asarray(X, dtype=complex).transpose(1, 2, 0))
    return _sweep_frequency_major(W, Xf, weights, backend, num_threads, stats)


def _sweep_frequency_major(W, Xf, weights, backend, num_threads, stats):
    if not (W.flags.c_contiguous and W.dtype == np.complex128):
        raise ValueError("W must be a C-contiguous complex128 array")
    weights = np.ascontiguousarray(weights, dtype=float)
    if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
        raise NumericalError("surrogate weights must be finite and positive")
    n_reg, n_fail = _backend.get_ip_sweep(backend)(W, Xf, weights, num_threads)
    if stats is not None:
        stats.regularized += n_reg
    if n_reg:
        logger.debug("IP sweep regularized %d covariance matrices", n_reg)
    if n_fail:
        raise NumericalError(f"IP update failed in {n_fail} (bin, source) pairs after regularization")
    return W


def back_project(W, Y, reference_channel=0):
    """Rescale each source to its image at ``reference_channel``.

    ``y'_ijn = [W_i^{-1}]_{m*, n} y_ijn``; summing over sources reproduces the
    observation at the reference channel.
    """
    log_abs_det(W)
    if not 0 <= reference_channel < W.shape[2]:
        raise ConfigError(f"reference channel {reference_channel} out of range")
    A = np.linalg.inv(W)
    coef = A[:, reference_channel, :]
    return coef.T[:, :, None] * Y


@dataclass
class SeparationState:
    W: np.ndarray
    Y: np.ndarray
    images: np.ndarray
    estimates: list
    variant: str
    cost_trace: List[float] = field(default_factory=list)
    refresh_trace: list = field(default_factory=list)
    regularized: int = 0

    def summary(self):
        return {
            "variant": self.variant,
            "iterations": len(self.cost_trace) - 1,
            "initial_cost": self.cost_trace[0],
            "final_cost": self.cost_trace[-1],
            "n_refresh": len(self.refresh_trace),
            "regularized_updates": self.regularized,
        }


def _stack(estimates, variant, fixed_nu):
    if variant == "gauss":
        if any(e.kind != "gauss" for e in estimates):
            raise ConfigError("gauss variant needs Gauss source estimates")
        return np.stack([e.sigma for e in estimates]), None
    scale = np.stack([e.sigma if e.kind == "gauss" else e.r for e in estimates])
    if variant == "student_t_fixed_nu":
        return scale, np.full(scale.shape, float(fixed_nu))
    if any(e.kind != "eb" for e in estimates):
        raise ConfigError("empirical_bayes variant needs EB source estimates")
    if fixed_nu is not None:
        return scale, np.full(scale.shape, float(fixed_nu))
    return scale, np.stack([np.asarray(e.nu, dtype=float) for e in estimates])


def separate(X, providers, cfg=None, W0=None):
    """Run the alternating demixing / source-model loop.

    Each iteration forms surrogate weights (``sigma**2`` for Gauss, ``xi`` for
    the Student's-t variants), performs one IP sweep over every bin and
    source and recomputes ``Y``. Every ``model_refresh_period`` iterations the
    providers are queried again with the magnitude of the back-projected
    estimates. The result carries back-projected images in ``images``.

    ``cost_trace[k]`` is the variant's cost after iteration ``k`` (index 0
    is the initial point) under the hyperparameters used for that
    iteration; ``refresh_trace`` holds ``(iteration, cost_before,
    cost_after)`` for each refresh.
    """
    cfg = (cfg or SeparationConfig()).validate()
    X = np.asarray(X, dtype=complex)
    if X.ndim != 3:
        raise ValueError(f"observation must be (n_channels, n_bins, n_frames), got {X.shape}")
    n_ch, n_bins, n_frames = X.shape
    if len(providers) != n_ch:
        raise ConfigError(f"determined case only: {n_ch} channels but {len(providers)} providers")
    if not 0 <= cfg.reference_channel < n_ch:
        raise ConfigError(f"reference channel {cfg.reference_channel} out of range for {n_ch} channels")
    Xf = np.ascontiguousarray(X.transpose(1, 2, 0))
    W = identity_demixing(n_bins, n_ch) if W0 is None else np.array(W0, dtype=complex, order="C")
    stats = SweepStats()

    def cost(W, scale, nu):
        value = gauss_cost(W, X, scale) if nu is None else eb_cost(W, X, scale, nu)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite {cfg.variant} cost")
        return value

    def refresh(W, Y):
        images = back_project(W, Y, cfg.reference_channel)
        est = provider_refresh(np.abs(images), providers)
        return est, *_stack(est, cfg.variant, cfg.fixed_nu)

    Y = apply_demixing(W, X)
    estimates, scale, nu = refresh(W, Y)
    trace = [cost(W, scale, nu)]
    refreshes = []
    for it in range(1, cfg.spatial_iters + 1):
        weights = scale**2 if nu is None else xi_weights(Y, scale, nu)
        _sweep_frequency_major(W, Xf, weights, cfg.backend, cfg.num_threads, stats)
        log_abs_det(W)
        Y = apply_demixing(W, X)
        trace.append(cost(W, scale, nu))
        if it % cfg.model_refresh_period == 0 and it < cfg.spatial_iters:
            estimates, scale, nu = refresh(W, Y)
            refreshes.append((it, trace[-1], cost(W, scale, nu)))
    return SeparationState(
        W=W,
        Y=Y,
        images=back_project(W, Y, cfg.reference_channel),
        estimates=estimates,
        variant=cfg.variant,
        cost_trace=trace,
        refresh_trace=refreshes,
        regularized=stats.regularized,
    )
