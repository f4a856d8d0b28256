"""Pure numpy iterative-projection sweep.

Array conventions shared with the compiled kernel:

* ``W``: ``(n_bins, n_sources, n_channels)``, row ``W[i, n]`` is ``w_in^H``.
* ``X``: ``(n_bins, n_frames, n_channels)``.
* ``weights``: ``(n_sources, n_bins, n_frames)``, strictly positive.
"""
import numpy as np


def _update_rows(W, U, n):
    """IP update of row ``n`` for every bin; returns mask of failed bins."""
    n_bins, n_src, _ = W.shape
    A = W @ U
    e = np.zeros((n_bins, n_src, 1), dtype=W.dtype)
    e[:, n, 0] = 1.0
    failed = np.zeros(n_bins, dtype=bool)
    try:
        w = np.linalg.solve(A, e)[..., 0]
    except np.linalg.LinAlgError:
        w = np.empty((n_bins, n_src), dtype=W.dtype)
        for i in range(n_bins):
            try:
                w[i] = np.linalg.solve(A[i], e[i, :, 0])
            except np.linalg.LinAlgError:
                w[i] = 0.0
                failed[i] = True
    q = np.einsum("ia,iab,ib->i", w.conj(), U, w).real
    failed |= ~(np.isfinite(q) & (q > 0.0)) | ~np.all(np.isfinite(w), axis=1)
    ok = ~failed
    W[ok, n, :] = (w[ok] / np.sqrt(q[ok])[:, None]).conj()
    return failed


def ip_sweep(W, X, weights, num_threads=1):
    """Update every row of every ``W_i`` once, in place.

    Returns ``(n_regularized, n_failed)``; ``num_threads`` is accepted for
    signature parity and ignored.
    """
    n_bins, n_frames, n_ch = X.shape
    n_reg = n_fail = 0
    for n in range(W.shape[1]):
        U = np.einsum("ij,ija,ijb->iab", 1.0 / (weights[n] * n_frames), X, X.conj())
        failed = _update_rows(W, U, n)
        if failed.any():
            idx = np.flatnonzero(failed)
            n_reg += idx.size
            scale = 1e-10 * np.trace(U[idx], axis1=1, axis2=2).real / n_ch
            scale = np.where(scale > 0.0, scale, 1e-10)
            Ur = U[idx] + scale[:, None, None] * np.eye(n_ch)
            Wr = W[idx]
            still = _update_rows(Wr, Ur, n)
            W[idx] = Wr
            n_fail += int(still.sum())
    return n_reg, n_fail
