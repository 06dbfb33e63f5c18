"""Loss kernels with analytic gradients.

Every kernel is a pure function returning a :class:`LossOut` whose ``grads``
map names each differentiable input to a gradient of matching shape.
Values and gradients are computed in float64.  Batched variants reduce with
the arithmetic mean over anchors/rows; constant (non-differentiated) inputs
carry no gradient entry.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import MiningError
from .numerics import cdist, l2_normalize_rows, log_softmax, sigmoid, softmax, softplus

BCE_EPS = 1e-7
ARC_ANGLE_MARGIN = 1e-4  # target angle clamped to <= pi - this


class MarginMode(enum.Enum):
    ARCFACE = "arcface"
    COSFACE = "cosface"


@dataclass
class LossOut:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)


def _as_float64(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# Classification cross-entropy
# ---------------------------------------------------------------------------

def cross_entropy_cls(logits, label: int) -> LossOut:
    """-log softmax(logits)[label], stabilized by max-shift."""
    logits = _as_float64(logits, "logits")
    if logits.ndim != 1 or logits.size == 0:
        raise ValueError("logits must be a non-empty 1-d vector")
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range [0, {logits.size})")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return LossOut(value=float(-logp[label]), grads={"logits": grad})


def cross_entropy_batch(logits, labels) -> LossOut:
    """Mean cross-entropy over rows; gradient w.r.t. the full logit matrix."""
    logits = _as_float64(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, p = logits.shape
    if np.any(labels < 0) or np.any(labels >= p):
        raise ValueError("label out of range")
    logp = log_softmax(logits, axis=1)
    value = float(-np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return LossOut(value=value, grads={"logits": grad / n})


# ---------------------------------------------------------------------------
# Softmax-triplet statistic and loss
# ---------------------------------------------------------------------------

def softmax_triplet_T(d_p: float, d_n: float) -> float:
    """exp(d_n) / (exp(d_p) + exp(d_n)), evaluated as sigmoid(d_n - d_p)."""
    if not (np.isfinite(d_p) and np.isfinite(d_n)):
        raise ValueError("distances must be finite")
    if d_p < 0 or d_n < 0:
        raise ValueError("distances must be >= 0")
    return float(sigmoid(d_n - d_p))


def softmax_triplet_T_grad(d_p: float, d_n: float):
    """(T, dT/dd_p, dT/dd_n); T'(x) through sigmoid(d_n - d_p)."""
    t = softmax_triplet_T(d_p, d_n)
    slope = t * (1.0 - t)
    return t, -slope, slope


def hardest_triplets(feats, labels):
    """Per-anchor hardest positive/negative by Euclidean distance.

    Returns (d_p, d_n, pos_idx, neg_idx).  Hardest positive is the farthest
    same-label row (anchor excluded); hardest negative the closest
    other-label row.  Raises MiningError naming labels that lack a pair.
    """
    feats = _as_float64(feats, "batch")
    labels = np.asarray(labels, dtype=np.int64)
    n = feats.shape[0]
    dist = cdist(feats, feats)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = ~(labels[:, None] == labels[None, :])

    missing_pos = ~same.any(axis=1)
    if missing_pos.any():
        raise MiningError(labels[missing_pos], "anchors without an in-batch positive")
    missing_neg = ~diff.any(axis=1)
    if missing_neg.any():
        raise MiningError(labels[missing_neg], "anchors without an in-batch negative")

    pos_idx = np.where(same, dist, -np.inf).argmax(axis=1)
    neg_idx = np.where(diff, dist, np.inf).argmin(axis=1)
    rows = np.arange(n)
    return dist[rows, pos_idx], dist[rows, neg_idx], pos_idx, neg_idx


def triplet_T_values(feats, labels):
    """Hardest-mined T statistic per anchor, in (0, 1)."""
    d_p, d_n, _, _ = hardest_triplets(feats, labels)
    return sigmoid(d_n - d_p)


def softmax_triplet_loss(feats, labels) -> LossOut:
    """Mean over anchors of -log T under hardest in-batch mining.

    Gradients touch only each anchor and its mined positive/negative rows;
    the mining itself is treated as locally constant.
    """
    feats = _as_float64(feats, "batch")
    labels = np.asarray(labels, dtype=np.int64)
    n = feats.shape[0]
    d_p, d_n, pos_idx, neg_idx = hardest_triplets(feats, labels)
    value = float(np.mean(softplus(d_p - d_n)))

    coeff = sigmoid(d_p - d_n) / n  # d loss_i / d (d_p - d_n), mean-reduced
    grad = np.zeros_like(feats)
    rows = np.arange(n)

    diff_p = feats - feats[pos_idx]
    unit_p = np.divide(diff_p, d_p[:, None], out=np.zeros_like(diff_p), where=d_p[:, None] > 0)
    diff_n = feats - feats[neg_idx]
    unit_n = np.divide(diff_n, d_n[:, None], out=np.zeros_like(diff_n), where=d_n[:, None] > 0)

    grad[rows] += coeff[:, None] * (unit_p - unit_n)
    np.add.at(grad, pos_idx, -coeff[:, None] * unit_p)
    np.add.at(grad, neg_idx, coeff[:, None] * unit_n)
    return LossOut(value=value, grads={"batch": grad})


# ---------------------------------------------------------------------------
# Relation consistency (soft binary cross-entropy between T statistics)
# ---------------------------------------------------------------------------

def relation_consistency(t_translated, t_source) -> LossOut:
    """Soft BCE of predicted T values against constant target T values.

    Inputs outside (eps, 1-eps) are clamped and the event is counted in
    ``diagnostics['clamped']``; gradients flow only to ``t_translated``.
    """
    p_raw = np.atleast_1d(_as_float64(t_translated, "t_translated"))
    q_raw = np.atleast_1d(_as_float64(t_source, "t_source"))
    if p_raw.shape != q_raw.shape:
        raise ValueError(f"length mismatch: {p_raw.shape} vs {q_raw.shape}")
    if p_raw.size == 0:
        raise ValueError("empty inputs")
    lo, hi = BCE_EPS, 1.0 - BCE_EPS
    clamped = int(np.sum((p_raw < lo) | (p_raw > hi)) + np.sum((q_raw < lo) | (q_raw > hi)))
    p = np.clip(p_raw, lo, hi)
    q = np.clip(q_raw, lo, hi)
    n = p.size
    value = float(-np.mean(q * np.log(p) + (1.0 - q) * np.log1p(-p)))
    grad = (p - q) / (p * (1.0 - p)) / n
    grad[(p_raw < lo) | (p_raw > hi)] = 0.0  # clamp region is flat
    out = LossOut(value=value, grads={"t_translated": grad})
    if clamped:
        out.diagnostics["clamped"] = float(clamped)
    return out


# ---------------------------------------------------------------------------
# Soft cross-entropy between peer networks (teacher side constant)
# ---------------------------------------------------------------------------

def soft_ce_mutual(student_logits, teacher_logits) -> LossOut:
    """-sum softmax(teacher) * log softmax(student); no gradient to the teacher."""
    out = soft_ce_batch(np.atleast_2d(student_logits), np.atleast_2d(teacher_logits))
    grad = out.grads["student_logits"]
    return LossOut(value=out.value, grads={"student_logits": grad.reshape(np.shape(student_logits))})


def soft_ce_batch(student_logits, teacher_logits) -> LossOut:
    s = _as_float64(student_logits, "student_logits")
    t = _as_float64(teacher_logits, "teacher_logits")
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {t.shape}")
    if s.shape[1] < 1:
        raise ValueError("at least one class required")
    n = s.shape[0]
    t_prob = softmax(t, axis=1)
    s_logp = log_softmax(s, axis=1)
    value = float(-np.mean(np.sum(t_prob * s_logp, axis=1)))
    grad = (np.exp(s_logp) - t_prob) / n
    return LossOut(value=value, grads={"student_logits": grad})


# ---------------------------------------------------------------------------
# Momentum-contrast loss against a feature queue
# ---------------------------------------------------------------------------

def moco_loss(query, key_pos, queue, tau: float = 0.7) -> LossOut:
    """InfoNCE over [positive key, queue negatives]; all inputs re-normalized.

    Gradient flows to the raw (pre-normalization) query only; the positive
    key and queue entries are constants.
    """
    query = _as_float64(query, "query")
    out = moco_batch(query[None, :], np.asarray(key_pos, dtype=np.float64)[None, :], queue, tau)
    return LossOut(value=out.value, grads={"query": out.grads["queries"][0]},
                   diagnostics=out.diagnostics)


def moco_batch(queries, keys_pos, queue, tau: float = 0.7) -> LossOut:
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    queries = _as_float64(queries, "queries")
    keys_pos = _as_float64(keys_pos, "keys_pos")
    if queries.shape != keys_pos.shape:
        raise ValueError("queries and positive keys must align")
    n, d = queries.shape
    queue = np.zeros((0, d)) if queue is None or len(queue) == 0 else _as_float64(queue, "queue")
    k = queue.shape[0]

    q_norms = np.linalg.norm(queries, axis=1)
    q_hat = l2_normalize_rows(queries, "query")
    k_hat = l2_normalize_rows(keys_pos, "key_pos")
    neg_hat = l2_normalize_rows(queue, "queue") if k else queue

    logits = np.empty((n, 1 + k))
    logits[:, 0] = np.sum(q_hat * k_hat, axis=1) / tau
    if k:
        logits[:, 1:] = (q_hat @ neg_hat.T) / tau
    logp = log_softmax(logits, axis=1)
    value = float(-np.mean(logp[:, 0]))

    dlogits = np.exp(logp)
    dlogits[:, 0] -= 1.0
    dlogits /= n
    dq_hat = dlogits[:, :1] * k_hat / tau
    if k:
        dq_hat = dq_hat + (dlogits[:, 1:] @ neg_hat) / tau
    # back through row normalization: project out the radial component
    radial = np.sum(dq_hat * q_hat, axis=1, keepdims=True)
    dq = (dq_hat - radial * q_hat) / q_norms[:, None]
    return LossOut(value=value, grads={"queries": dq})


# ---------------------------------------------------------------------------
# Margin-based classification (cosine logits with additive margins)
# ---------------------------------------------------------------------------

def margin_classification(feature, class_weights, label: int,
                          mode: MarginMode = MarginMode.COSFACE,
                          margin: float = 0.25, scale: float = 16.0) -> LossOut:
    out = margin_classification_batch(np.atleast_2d(feature), class_weights,
                                      np.asarray([label]), mode, margin, scale)
    return LossOut(value=out.value,
                   grads={"feature": out.grads["features"][0],
                          "class_weights": out.grads["class_weights"]})


def margin_classification_batch(features, class_weights, labels,
                                mode: MarginMode = MarginMode.COSFACE,
                                margin: float = 0.25, scale: float = 16.0) -> LossOut:
    """Cross-entropy over scaled cosine logits with the target logit shifted.

    ARCFACE replaces cos(theta_y) by cos(theta_y + m) with the summed angle
    clamped below pi; COSFACE uses cos(theta_y) - m.  Gradients flow to the
    raw features and raw class weights through the normalizations.
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    feats = _as_float64(features, "features")
    weights = _as_float64(class_weights, "class_weights")
    labels = np.asarray(labels, dtype=np.int64)
    n, d = feats.shape
    p = weights.shape[0]
    if weights.shape[1] != d:
        raise ValueError("feature/weight dimension mismatch")
    if np.any(labels < 0) or np.any(labels >= p):
        raise ValueError("label out of range")

    f_norms = np.linalg.norm(feats, axis=1)
    w_norms = np.linalg.norm(weights, axis=1)
    f_hat = l2_normalize_rows(feats, "feature")
    w_hat = l2_normalize_rows(weights, "class_weights")
    cos = np.clip(f_hat @ w_hat.T, -1.0, 1.0)

    rows = np.arange(n)
    cos_y = cos[rows, labels]
    if mode is MarginMode.COSFACE:
        psi = cos_y - margin
        dpsi = np.ones(n)
    elif mode is MarginMode.ARCFACE:
        theta = np.arccos(cos_y)
        theta_m = theta + margin
        clamped = theta_m > np.pi - ARC_ANGLE_MARGIN
        theta_m = np.minimum(theta_m, np.pi - ARC_ANGLE_MARGIN)
        psi = np.cos(theta_m)
        sin_theta = np.sqrt(np.maximum(1.0 - cos_y**2, 1e-12))
        dpsi = np.where(clamped, 0.0, np.sin(theta_m) / sin_theta)
    else:
        raise ValueError(f"unknown margin mode {mode!r}")

    logits = scale * cos
    logits[rows, labels] = scale * psi
    logp = log_softmax(logits, axis=1)
    value = float(-np.mean(logp[rows, labels]))

    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    dcos = scale * dlogits
    dcos[rows, labels] *= dpsi

    df_hat = dcos @ w_hat
    dw_hat = dcos.T @ f_hat
    df = (df_hat - np.sum(df_hat * f_hat, axis=1, keepdims=True) * f_hat) / f_norms[:, None]
    dw = (dw_hat - np.sum(dw_hat * w_hat, axis=1, keepdims=True) * w_hat) / w_norms[:, None]
    return LossOut(value=value, grads={"features": df, "class_weights": dw})


# ---------------------------------------------------------------------------
# Weighted stage-III total
# ---------------------------------------------------------------------------

def mmt_plus_total(soft: float, hard: float, moco: float,
                   lambda_soft: float = 0.5, lambda_moco: float = 0.1) -> float:
    """lambda_soft*soft + (1-lambda_soft)*hard + lambda_moco*moco."""
    parts = {"soft": soft, "hard": hard, "moco": moco}
    for name, val in parts.items():
        if not np.isfinite(val):
            raise ValueError(f"non-finite {name} part: {val}")
    if not 0.0 <= lambda_soft <= 1.0:
        raise ValueError(f"lambda_soft must be in [0, 1], got {lambda_soft}")
    if lambda_moco < 0:
        raise ValueError(f"lambda_moco must be >= 0, got {lambda_moco}")
    return lambda_soft * soft + (1.0 - lambda_soft) * hard + lambda_moco * moco
