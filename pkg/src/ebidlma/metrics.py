"""Separation quality metrics.

BSSEval's distortion-filter SDR is not reproduced; the metrics here are the
scale-invariant SDR and the scale-dependent SDR that uses the same scalar
projection of the reference but measures error against the raw estimate.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CEILING = 80.0


def _check(estimate, reference):
    estimate = np.asarray(estimate, dtype=float).ravel()
    reference = np.asarray(reference, dtype=float).ravel()
    if estimate.shape != reference.shape:
        raise ValueError(f"estimate length {estimate.size} != reference length {reference.size}")
    ref_energy = reference @ reference
    if ref_energy == 0:
        raise ValueError("reference signal is all zeros")
    return estimate, reference, ref_energy


def _ratio_db(num, den, ceiling):
    if num == 0:
        return -np.inf
    if den <= num * 10.0 ** (-ceiling / 10.0):
        return ceiling
    return min(10.0 * np.log10(num / den), ceiling)


def si_sdr(estimate, reference, ceiling=DEFAULT_CEILING):
    """Scale-invariant SDR in dB, capped at ``ceiling``; ``-inf`` for a zero estimate."""
    est, ref, energy = _check(estimate, reference)
    target = (est @ ref) / energy * ref
    return _ratio_db(target @ target, np.sum((target - est) ** 2), ceiling)


def sd_sdr(estimate, reference, ceiling=DEFAULT_CEILING):
    """Scale-dependent SDR: projected target energy over ``||reference - estimate||^2``."""
    est, ref, energy = _check(estimate, reference)
    target = (est @ ref) / energy * ref
    return _ratio_db(target @ target, np.sum((ref - est) ** 2), ceiling)


@dataclass
class MetricsReport:
    si_sdr: np.ndarray
    sd_sdr: np.ndarray
    mixture_si_sdr: np.ndarray
    mixture_sd_sdr: np.ndarray
    permutation: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def si_sdr_improvement(self):
        return self.si_sdr - self.mixture_si_sdr

    @property
    def sd_sdr_improvement(self):
        return self.sd_sdr - self.mixture_sd_sdr

    def rows(self):
        for n, src in enumerate(self.permutation):
            yield {
                **self.metadata,
                "source": n,
                "estimate": src,
                "si_sdr": self.si_sdr[n],
                "sd_sdr": self.sd_sdr[n],
                "mixture_si_sdr": self.mixture_si_sdr[n],
                "si_sdr_improvement": self.si_sdr_improvement[n],
                "sd_sdr_improvement": self.sd_sdr_improvement[n],
            }


def best_permutation(estimates, references, ceiling=DEFAULT_CEILING):
    """Exhaustive search for the estimate order maximizing mean SI-SDR.

    ``perm[n]`` is the index of the estimate assigned to reference ``n``.
    Ties keep the lexicographically first permutation.
    """
    if len(estimates) != len(references):
        raise ValueError(f"{len(estimates)} estimates for {len(references)} references")
    n = len(references)
    table = np.array([[si_sdr(e, r, ceiling) for e in estimates] for r in references])
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(n)):
        score = np.mean([table[k, perm[k]] for k in range(n)])
        if best is None or score > best_score:
            best, best_score = perm, score
    return best, table


def best_permutation_metrics(estimates, references, mixture=None, ceiling=DEFAULT_CEILING, metadata=None):
    """Metrics under the best permutation.

    ``mixture`` is the unprocessed signal used as the baseline for every
    reference (typically the reference channel); defaults to the sum of the
    references.
    """
    perm, table = best_permutation(estimates, references, ceiling)
    references = [np.asarray(r, dtype=float) for r in references]
    if mixture is None:
        mixture = np.sum(references, axis=0)
    return MetricsReport(
        si_sdr=np.array([table[k, perm[k]] for k in range(len(perm))]),
        sd_sdr=np.array([sd_sdr(estimates[perm[k]], references[k], ceiling) for k in range(len(perm))]),
        mixture_si_sdr=np.array([si_sdr(mixture, r, ceiling) for r in references]),
        mixture_sd_sdr=np.array([sd_sdr(mixture, r, ceiling) for r in references]),
        permutation=tuple(perm),
        metadata=dict(metadata or {}),
    )
