"""Trainable feature encoder: affine projection with per-domain input
standardization, a linear classifier head, PK batch sampling, mean-teacher
EMA updates, FIFO feature queues, and a decoupled-weight-decay Adam step.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, MiningError
from .numerics import l2_normalize_rows

EPS_VAR = 1e-5
STATS_MOMENTUM = 0.9  # retained fraction of the running stats per update
NUM_DOMAINS = 2

PARAMS_MAGIC = b"URDP"
PARAMS_VERSION = 1


@dataclass
class EncoderParams:
    """Affine map f = W x_hat + b over standardized inputs, plus classifier.

    ``running_mean``/``running_var`` hold one row of input statistics per
    domain tag; variances never drop below EPS_VAR.
    """
    weight: np.ndarray        # (d_out, d_in)
    bias: np.ndarray          # (d_out,)
    classifier: np.ndarray    # (P, d_out)
    running_mean: np.ndarray  # (NUM_DOMAINS, d_in)
    running_var: np.ndarray   # (NUM_DOMAINS, d_in)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.classifier.shape[0]

    def trainable(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias, "classifier": self.classifier}

    def all_arrays(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias, "classifier": self.classifier,
                "running_mean": self.running_mean, "running_var": self.running_var}

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.weight.copy(), self.bias.copy(), self.classifier.copy(),
                             self.running_mean.copy(), self.running_var.copy())

    def with_classifier(self, num_classes: int, rng: np.random.Generator) -> "EncoderParams":
        """Same encoder weights with a freshly initialized classifier head."""
        out = self.copy()
        out.classifier = rng.normal(0.0, 1.0 / np.sqrt(self.d_out),
                                    size=(num_classes, self.d_out))
        return out

    def validate(self) -> None:
        for name, arr in self.all_arrays().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if self.bias.shape != (self.d_out,):
            raise ValueError("bias shape mismatch")
        if self.classifier.shape[1] != self.d_out:
            raise ValueError("classifier width must equal d_out")
        if self.running_mean.shape != (NUM_DOMAINS, self.d_in):
            raise ValueError("running_mean shape mismatch")
        if self.running_var.shape != self.running_mean.shape:
            raise ValueError("running_var shape mismatch")
        if np.any(self.running_var < EPS_VAR):
            raise ValueError(f"variance entries must be >= {EPS_VAR}")


def init_params(d_in: int, d_out: int, num_classes: int, seed: int) -> EncoderParams:
    """Gaussian fan-in init; stats start at the standard normal."""
    rng = np.random.default_rng([seed, 97])
    weight = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in))
    bias = np.zeros(d_out)
    classifier = rng.normal(0.0, 1.0 / np.sqrt(d_out), size=(num_classes, d_out))
    running_mean = np.zeros((NUM_DOMAINS, d_in))
    running_var = np.ones((NUM_DOMAINS, d_in))
    return EncoderParams(weight, bias, classifier, running_mean, running_var)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _standardize(params: EncoderParams, raws: np.ndarray, domains: np.ndarray,
                 training: bool) -> np.ndarray:
    """Per-domain (x - mean)/sqrt(var + EPS_VAR); training mode uses the
    batch's own per-domain statistics and folds them into the running stats."""
    raws = np.asarray(raws, dtype=np.float64)
    domains = np.asarray(domains)
    if raws.ndim != 2 or raws.shape[1] != params.d_in:
        raise ValueError(f"expected (n, {params.d_in}) inputs, got {raws.shape}")
    if domains.shape != (raws.shape[0],):
        raise ValueError("one domain tag per row required")
    bad = (domains < 0) | (domains >= NUM_DOMAINS)
    if bad.any():
        raise ValueError(f"unknown domain tag {int(domains[bad][0])}")

    x_hat = np.empty_like(raws)
    for dom in range(NUM_DOMAINS):
        mask = domains == dom
        if not mask.any():
            continue
        if training:
            mean = raws[mask].mean(axis=0)
            var = raws[mask].var(axis=0)
            params.running_mean[dom] = (STATS_MOMENTUM * params.running_mean[dom]
                                        + (1.0 - STATS_MOMENTUM) * mean)
            params.running_var[dom] = np.maximum(
                STATS_MOMENTUM * params.running_var[dom]
                + (1.0 - STATS_MOMENTUM) * var, EPS_VAR)
        else:
            mean = params.running_mean[dom]
            var = params.running_var[dom]
        x_hat[mask] = (raws[mask] - mean) / np.sqrt(var + EPS_VAR)
    return x_hat


def forward(params: EncoderParams, raws, domains, training: bool = False) -> np.ndarray:
    """Encoded features (n, d_out).  Eval mode is pure; training mode
    standardizes by batch statistics and updates the running stats."""
    x_hat = _standardize(params, raws, domains, training)
    return x_hat @ params.weight.T + params.bias


def forward_cached(params: EncoderParams, raws, domains, training: bool = True):
    """(features, x_hat) for use with :func:`backward`."""
    x_hat = _standardize(params, raws, domains, training)
    return x_hat @ params.weight.T + params.bias, x_hat


def backward(params: EncoderParams, x_hat: np.ndarray, d_feats: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the affine map given d loss / d features.

    Standardization statistics are treated as constants of the batch, so the
    chain stops at the affine layer's inputs.
    """
    return {"weight": d_feats.T @ x_hat, "bias": d_feats.sum(axis=0)}


def classifier_logits(params: EncoderParams, feats: np.ndarray) -> np.ndarray:
    return feats @ params.classifier.T


def classifier_backward(params: EncoderParams, feats: np.ndarray,
                        d_logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(d classifier, d feats) for logits = feats @ classifier.T."""
    return d_logits.T @ feats, d_logits @ params.classifier


# ---------------------------------------------------------------------------
# PK batch sampling
# ---------------------------------------------------------------------------

def pk_sample(labels, p_classes: int, k_per: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of p_classes distinct labels with k_per rows each.

    Negative labels (unlabeled / outlier rows) are excluded.  Classes with
    fewer than k_per rows are sampled with replacement.
    """
    labels = np.asarray(labels, dtype=np.int64)
    usable = np.unique(labels[labels >= 0])
    if usable.size < p_classes:
        raise MiningError(usable, f"need {p_classes} usable labels, have {usable.size}")
    chosen = rng.choice(usable, size=p_classes, replace=False)
    out = np.empty(p_classes * k_per, dtype=np.int64)
    for i, lab in enumerate(chosen):
        rows = np.flatnonzero(labels == lab)
        picked = rng.choice(rows, size=k_per, replace=rows.size < k_per)
        out[i * k_per:(i + 1) * k_per] = picked
    return out


# ---------------------------------------------------------------------------
# Mean teacher and feature queue
# ---------------------------------------------------------------------------

def ema_update(teacher: EncoderParams, student: EncoderParams, alpha: float) -> EncoderParams:
    """teacher <- alpha*teacher + (1-alpha)*student, every array blended."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    t_arrays = teacher.all_arrays()
    s_arrays = student.all_arrays()
    for name, t_arr in t_arrays.items():
        s_arr = s_arrays[name]
        if t_arr.shape != s_arr.shape:
            raise ValueError(f"shape mismatch on {name}: {t_arr.shape} vs {s_arr.shape}")
        t_arr *= alpha
        t_arr += (1.0 - alpha) * s_arr
    np.maximum(teacher.running_var, EPS_VAR, out=teacher.running_var)
    return teacher


@dataclass
class FeatureQueue:
    """FIFO store of L2-normalized feature rows, oldest first."""
    capacity: int
    dim: int
    buffer: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        if self.buffer is None:
            self.buffer = np.zeros((0, self.dim))

    def __len__(self) -> int:
        return self.buffer.shape[0]

    def contents(self) -> np.ndarray:
        return self.buffer


def queue_push(queue: FeatureQueue, feats) -> FeatureQueue:
    """Normalize rows, enqueue, evict oldest beyond capacity."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != queue.dim:
        raise ValueError(f"expected (n, {queue.dim}) rows, got {feats.shape}")
    normed = l2_normalize_rows(feats, "queue feature")
    joined = np.concatenate([queue.buffer, normed], axis=0)
    queue.buffer = joined[-queue.capacity:]
    return queue


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.00035
    weight_decay: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # per-parameter slots: name -> [m, v, t]; re-initialized parameters can
    # drop their slot to restart the bias correction cleanly
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def reset(self, name: str) -> None:
        self.slots.pop(name, None)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """In-place decoupled-decay Adam: p -= lr*wd*p, then the bias-corrected
    moment update.  A non-finite gradient rejects the whole step."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(message=f"non-finite gradient for parameter '{name}'")
        if params[name].shape != np.shape(grad):
            raise ValueError(f"gradient shape mismatch on {name}")
    for name, grad in grads.items():
        p = params[name]
        if name not in state.slots:
            state.slots[name] = [np.zeros_like(p), np.zeros_like(p), 0]
        m, v, t = state.slots[name]
        t += 1
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(grad)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.slots[name][2] = t
    return params, state


# ---------------------------------------------------------------------------
# Whole-dataset encoding and parameter serialization
# ---------------------------------------------------------------------------

def encode_dataset(params: EncoderParams, dataset) -> np.ndarray:
    """Eval-mode features for every row of a Dataset, float64."""
    return forward(params, dataset.features.astype(np.float64), dataset.domains,
                   training=False)


def save_params(path, params: EncoderParams) -> None:
    """Deterministic little-endian container: magic, version, entry count,
    then (name, shape, float64 payload) per array."""
    entries = params.all_arrays()
    blob = bytearray()
    blob += struct.pack("<4sHI", PARAMS_MAGIC, PARAMS_VERSION, len(entries))
    for name, arr in entries.items():
        raw = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("ascii")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<B", raw.ndim)
        for dim in raw.shape:
            blob += struct.pack("<I", dim)
        blob += raw.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version, count = struct.unpack_from("<4sHI", blob, 0)
    if magic != PARAMS_MAGIC:
        raise ValueError("not an encoder parameter file")
    if version != PARAMS_VERSION:
        raise ValueError(f"unsupported parameter file version {version}")
    offset = struct.calcsize("<4sHI")
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("ascii")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        arrays[name] = arr.astype(np.float64)
    params = EncoderParams(arrays["weight"], arrays["bias"], arrays["classifier"],
                           arrays["running_mean"], arrays["running_var"])
    params.validate()
    return params
