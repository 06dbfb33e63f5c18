"""Small shared numeric helpers (stable softmax family, norms, pairwise distances).

Everything computes in float64 regardless of input dtype; callers cast back
where single precision is part of a storage contract.
"""
from __future__ import annotations

import numpy as np

from .errors import NormalizationError

EPS_NORM = 1e-12


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    return np.exp(log_softmax(logits, axis=axis))


def l2_normalize_rows(x, name="input"):
    """Return rows scaled to unit L2 norm; zero-norm rows are an error."""
    x = np.asarray(x, dtype=np.float64)
    arr = x[None, :] if x.ndim == 1 else x
    norms = np.linalg.norm(arr, axis=1)
    if arr.shape[0] and (not np.all(np.isfinite(norms)) or np.min(norms) <= EPS_NORM):
        bad = int(np.argmin(norms))
        raise NormalizationError(f"{name} row {bad} has zero or non-finite norm")
    out = arr / norms[:, None]
    return out[0] if x.ndim == 1 else out


def cdist(a, b):
    """Euclidean distances between rows of ``a`` (n x d) and ``b`` (m x d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    sq = aa + bb - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)
