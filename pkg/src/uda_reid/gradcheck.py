"""Central-difference verification of the analytic loss gradients.

Each kernel gets a randomized trial generator; ``run_gradcheck`` draws
``trials`` independent inputs per kernel and reports the worst relative
error between the analytic gradient and a float64 central difference.
"""
from __future__ import annotations

import numpy as np

from . import losses


def central_difference(fn, x, step: float = 1e-6):
    """Elementwise (f(x+h) - f(x-h)) / 2h with h scaled by |x|."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        flat[i] = orig + h
        f_plus = fn(x)
        flat[i] = orig - h
        f_minus = fn(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||, tiny); 0 when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / denom)


def _pk_labels(rng, n_classes, per_class):
    labels = np.repeat(np.arange(n_classes), per_class)
    rng.shuffle(labels)
    return labels


def _check_cross_entropy(rng):
    p = int(rng.integers(2, 9))
    logits = rng.normal(0.0, 2.0, size=p)
    label = int(rng.integers(0, p))
    out = losses.cross_entropy_cls(logits, label)
    num = central_difference(lambda z: losses.cross_entropy_cls(z, label).value, logits)
    return relative_error(out.grads["logits"], num)


def _check_triplet_T(rng):
    pair = rng.uniform(0.1, 4.0, size=2)
    _, dd_p, dd_n = losses.softmax_triplet_T_grad(pair[0], pair[1])
    num = central_difference(lambda v: losses.softmax_triplet_T(v[0], v[1]), pair)
    return relative_error(np.array([dd_p, dd_n]), num)


def _check_triplet_loss(rng):
    n_classes = int(rng.integers(2, 4))
    per_class = int(rng.integers(2, 4))
    d = int(rng.integers(3, 7))
    labels = _pk_labels(rng, n_classes, per_class)
    feats = rng.normal(0.0, 1.0, size=(labels.size, d))
    out = losses.softmax_triplet_loss(feats, labels)
    num = central_difference(lambda f: losses.softmax_triplet_loss(f, labels).value, feats)
    return relative_error(out.grads["batch"], num)


def _check_relation(rng):
    m = int(rng.integers(3, 9))
    p = rng.uniform(0.05, 0.95, size=m)
    q = rng.uniform(0.05, 0.95, size=m)
    out = losses.relation_consistency(p, q)
    num = central_difference(lambda v: losses.relation_consistency(v, q).value, p)
    return relative_error(out.grads["t_translated"], num)


def _check_soft_ce(rng):
    p = int(rng.integers(2, 9))
    student = rng.normal(0.0, 2.0, size=p)
    teacher = rng.normal(0.0, 2.0, size=p)
    out = losses.soft_ce_mutual(student, teacher)
    num = central_difference(lambda s: losses.soft_ce_mutual(s, teacher).value, student)
    return relative_error(out.grads["student_logits"], num)


def _check_moco(rng):
    d = int(rng.integers(3, 7))
    k = int(rng.integers(0, 7))
    query = rng.normal(0.0, 1.0, size=d)
    key = rng.normal(0.0, 1.0, size=d)
    queue = rng.normal(0.0, 1.0, size=(k, d))
    tau = float(rng.uniform(0.4, 1.2))
    out = losses.moco_loss(query, key, queue, tau)
    num = central_difference(lambda q: losses.moco_loss(q, key, queue, tau).value, query)
    return relative_error(out.grads["query"], num)


def _check_margin(rng, mode):
    d = int(rng.integers(4, 7))
    p = int(rng.integers(2, 6))
    feature = rng.normal(0.0, 1.0, size=d)
    weights = rng.normal(0.0, 1.0, size=(p, d))
    label = int(rng.integers(0, p))
    margin = float(rng.uniform(0.1, 0.4))
    scale = float(rng.uniform(4.0, 16.0))
    out = losses.margin_classification(feature, weights, label, mode, margin, scale)
    num_f = central_difference(
        lambda f: losses.margin_classification(f, weights, label, mode, margin, scale).value,
        feature)
    num_w = central_difference(
        lambda w: losses.margin_classification(feature, w, label, mode, margin, scale).value,
        weights)
    err_f = relative_error(out.grads["feature"], num_f)
    err_w = relative_error(out.grads["class_weights"], num_w)
    return max(err_f, err_w)


KERNEL_CHECKS = {
    "cross_entropy_cls": _check_cross_entropy,
    "softmax_triplet_T": _check_triplet_T,
    "softmax_triplet_loss": _check_triplet_loss,
    "relation_consistency": _check_relation,
    "soft_ce_mutual": _check_soft_ce,
    "moco_loss": _check_moco,
    "margin_arcface": lambda rng: _check_margin(rng, losses.MarginMode.ARCFACE),
    "margin_cosface": lambda rng: _check_margin(rng, losses.MarginMode.COSFACE),
}


def run_gradcheck(trials: int = 100, seed: int = 0) -> dict[str, float]:
    """Worst relative error per kernel over ``trials`` random draws."""
    results = {}
    for idx, (name, check) in enumerate(KERNEL_CHECKS.items()):
        rng = np.random.default_rng([seed, idx])
        results[name] = max(check(rng) for _ in range(trials))
    return results
