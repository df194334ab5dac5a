"""Pure-NumPy Monte Carlo projection kernel (fallback for the compiled one)."""

import numpy as np


def simulate_grouped(X, offset, beta, z, phi, groups, out):
    """Accumulate simulated death counts into groups, in place.

    For each coefficient draw ``beta[b]`` and cell ``c`` with
    ``groups[c] >= 0``::

        mu = exp(offset[c] + X[c] . beta[b])
        v  = max(mu + sqrt(phi * mu) * z[b, c], 0)     (v = mu when phi == 0)
        out[b, groups[c]] += v

    Cells with a negative group id are skipped. ``z`` is only read when
    ``phi > 0``.
    """
    nb, p = beta.shape
    nc = X.shape[0]
    if len(offset) != nc or X.shape[1] != p or len(groups) != nc or out.shape[0] != nb:
        raise ValueError("shape mismatch")
    if phi > 0 and z.shape != (nb, nc):
        raise ValueError("noise matrix shape mismatch")
    keep = np.flatnonzero(groups >= 0)
    if len(keep) == 0:
        return
    g = groups[keep]
    mu = np.exp(offset[keep] + beta @ X[keep].T)
    if phi > 0:
        v = np.maximum(mu + np.sqrt(phi * mu) * z[:, keep], 0.0)
    else:
        v = mu
    order = np.argsort(g, kind="stable")
    g_sorted = g[order]
    starts = np.flatnonzero(np.r_[True, g_sorted[1:] != g_sorted[:-1]])
    out[:, g_sorted[starts]] += np.add.reduceat(v[:, order], starts, axis=1)
