"""Datasets, per-sample metadata, the binary feature-file format, and the
synthetic two-domain generator.

A dataset is a dense float32 feature table plus four parallel per-row
metadata columns (identity, camera, domain tag, pseudo label).  Sentinels
follow the on-disk format: identity -1 means unlabeled, pseudo -2 means
clustering marked the row as an outlier.

Synthetic benchmark layout
--------------------------
Each identity is a Gaussian cluster in a ``raw_dim``-dimensional raw space.
Identity centers live on the first half of the dimensions ("signal" axes);
the second half carries identity-free nuisance: isotropic noise plus a
per-camera offset, both scaled by ``cluster_spread``.  A weaker camera
component also leaks into the signal axes, so cross-camera retrieval needs
a handful of directions nulled inside the identity-bearing subspace too.
Nearest-neighbor retrieval on raw features is therefore mediocre, while a
trained linear projection that suppresses the nuisance structure retrieves
almost perfectly.
Source rows are additionally pushed through an invertible affine map
``x -> A x + b``, so a projection fitted on source data suppresses the
wrong axes for target-domain rows.  The "translated" dataset blends source
rows a fraction ``translation_fidelity`` of the way back to their pre-shift
positions, standing in for learned source-to-target translation.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, FormatError

IDENTITY_NONE = -1
PSEUDO_OUTLIER = -2

MAGIC = b"URDE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHII")

# Nuisance model of the synthetic generator, relative to cluster_spread.
SIGNAL_NOISE = 0.25
NUISANCE_NOISE = 2.5
CAMERA_OFFSET = 1.5
CAMERA_SIGNAL = 0.9


class Domain(enum.IntEnum):
    SOURCE = 0
    TARGET = 1


@dataclass(frozen=True)
class SampleMeta:
    """Per-row metadata view; ``None`` stands for the unlabeled/outlier sentinels."""

    identity: int | None
    camera: int
    domain: Domain
    pseudo: int | None = None


@dataclass
class Dataset:
    features: np.ndarray   # (n, d) float32
    identities: np.ndarray  # (n,) int32, IDENTITY_NONE = unlabeled
    cameras: np.ndarray     # (n,) int32
    domains: np.ndarray     # (n,) uint8, Domain values
    pseudo: np.ndarray      # (n,) int32, PSEUDO_OUTLIER = no cluster
    name: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        self.identities = np.asarray(self.identities, dtype=np.int32)
        self.cameras = np.asarray(self.cameras, dtype=np.int32)
        self.domains = np.asarray(self.domains, dtype=np.uint8)
        self.pseudo = np.asarray(self.pseudo, dtype=np.int32)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def validate(self):
        n, d = self.features.shape
        if d < 1:
            raise ValueError("feature dimension must be >= 1")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        for col_name in ("identities", "cameras", "domains", "pseudo"):
            col = getattr(self, col_name)
            if col.shape != (n,):
                raise ValueError(f"{col_name} has shape {col.shape}, expected ({n},)")
        if np.any(self.identities < IDENTITY_NONE):
            raise ValueError("identity labels below the NONE sentinel")
        if np.any(self.cameras < 0):
            raise ValueError("camera ids must be >= 0")
        if not np.all(np.isin(self.domains, (int(Domain.SOURCE), int(Domain.TARGET)))):
            raise ValueError("domain tags must be 0 (source) or 1 (target)")
        if np.any(self.pseudo < PSEUDO_OUTLIER):
            raise ValueError("pseudo labels below the OUTLIER sentinel")
        src = self.domains == int(Domain.SOURCE)
        if np.any(self.identities[src] == IDENTITY_NONE):
            raise ValueError("source rows must carry ground-truth identities")
        return self

    def meta_at(self, i: int) -> SampleMeta:
        ident = int(self.identities[i])
        pseudo = int(self.pseudo[i])
        return SampleMeta(
            identity=None if ident == IDENTITY_NONE else ident,
            camera=int(self.cameras[i]),
            domain=Domain(int(self.domains[i])),
            pseudo=None if pseudo == PSEUDO_OUTLIER else pseudo,
        )

    def with_pseudo(self, assignment) -> "Dataset":
        assignment = np.asarray(assignment, dtype=np.int32)
        if assignment.shape != (self.n,):
            raise ValueError("pseudo assignment length mismatch")
        return replace(self, pseudo=assignment)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            features=self.features[idx],
            identities=self.identities[idx],
            cameras=self.cameras[idx],
            domains=self.domains[idx],
            pseudo=self.pseudo[idx],
            name=self.name,
        )

    @classmethod
    def from_meta(cls, features, meta, name="") -> "Dataset":
        idents = [IDENTITY_NONE if m.identity is None else m.identity for m in meta]
        pseudos = [PSEUDO_OUTLIER if m.pseudo is None else m.pseudo for m in meta]
        return cls(
            features=features,
            identities=np.array(idents, dtype=np.int32),
            cameras=np.array([m.camera for m in meta], dtype=np.int32),
            domains=np.array([int(m.domain) for m in meta], dtype=np.uint8),
            pseudo=np.array(pseudos, dtype=np.int32),
            name=name,
        )


def concat_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Rows of ``a`` followed by rows of ``b``; metadata carried through untouched."""
    if a.d != b.d:
        raise ValueError(f"feature dimension mismatch: {a.d} vs {b.d}")
    return Dataset(
        features=np.concatenate([a.features, b.features], axis=0),
        identities=np.concatenate([a.identities, b.identities]),
        cameras=np.concatenate([a.cameras, b.cameras]),
        domains=np.concatenate([a.domains, b.domains]),
        pseudo=np.concatenate([a.pseudo, b.pseudo]),
        name=f"{a.name}+{b.name}" if a.name or b.name else "",
    )


# ---------------------------------------------------------------------------
# Binary feature format: magic "URDE", u16 version, u32 n, u32 d, then
# n i32 identities, n i32 cameras, n u8 domain tags, n i32 pseudo labels,
# n*d f32 features.  All little-endian.
# ---------------------------------------------------------------------------

def save_features(path, ds: Dataset) -> None:
    ds.validate()
    n, d = ds.features.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, d))
        fh.write(ds.identities.astype("<i4").tobytes())
        fh.write(ds.cameras.astype("<i4").tobytes())
        fh.write(ds.domains.astype("<u1").tobytes())
        fh.write(ds.pseudo.astype("<i4").tobytes())
        fh.write(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())


def load_features(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(len(blob), "truncated header")
    magic, version, n, d = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(0, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(4, f"unsupported version {version}")
    if d < 1:
        raise FormatError(10, "feature dimension must be >= 1")

    offsets = _section_offsets(n, d)
    expected = offsets["end"]
    if len(blob) < expected:
        raise FormatError(len(blob), f"truncated payload; expected {expected} bytes")
    if len(blob) > expected:
        raise FormatError(expected, "trailing data after payload")

    def section(key, dtype, count):
        start = offsets[key]
        return np.frombuffer(blob, dtype=dtype, count=count, offset=start)

    identities = section("identities", "<i4", n)
    cameras = section("cameras", "<i4", n)
    domains = section("domains", "<u1", n)
    pseudo = section("pseudo", "<i4", n)
    feats = section("features", "<f4", n * d)

    bad_dom = np.flatnonzero(~np.isin(domains, (0, 1)))
    if bad_dom.size:
        raise FormatError(offsets["domains"] + int(bad_dom[0]), f"invalid domain tag {domains[bad_dom[0]]}")
    bad = np.flatnonzero(~np.isfinite(feats))
    if bad.size:
        raise FormatError(offsets["features"] + 4 * int(bad[0]), "non-finite feature value")

    ds = Dataset(
        features=feats.reshape(n, d).copy(),
        identities=identities.copy(),
        cameras=cameras.copy(),
        domains=domains.copy(),
        pseudo=pseudo.copy(),
        name="",
    )
    return ds


def _section_offsets(n, d):
    off = {}
    pos = _HEADER.size
    for key, width in (("identities", 4), ("cameras", 4), ("domains", 1), ("pseudo", 4)):
        off[key] = pos
        pos += width * n
    off["features"] = pos
    off["end"] = pos + 4 * n * d
    return off


# ---------------------------------------------------------------------------
# Synthetic two-domain generator
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    num_ids_source: int = 32
    num_ids_target: int = 32
    samples_per_id: int = 12
    raw_dim: int = 32
    cluster_spread: float = 1.0
    translation_fidelity: float = 0.55  # gamma: 1 fully undoes the domain shift
    cameras: int = 5
    seed: int = 0
    shift_strength: float = 1.0         # rotation/scale intensity; 0 -> identity map
    shift_offset: float = 1.0           # offset magnitude; 0 -> zero offset
    shift_matrix: np.ndarray | None = field(default=None, repr=False)
    shift_bias: np.ndarray | None = field(default=None, repr=False)

    def validate(self):
        for fname in ("num_ids_source", "num_ids_target", "samples_per_id", "raw_dim", "cameras"):
            v = getattr(self, fname)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(fname, f"must be a positive integer, got {v!r}")
        if not 0.0 <= self.translation_fidelity <= 1.0:
            raise ConfigError("translation_fidelity", f"must be in [0, 1], got {self.translation_fidelity}")
        if self.cluster_spread < 0:
            raise ConfigError("cluster_spread", f"must be >= 0, got {self.cluster_spread}")
        if self.shift_strength < 0:
            raise ConfigError("shift_strength", f"must be >= 0, got {self.shift_strength}")
        if self.shift_matrix is not None:
            a = np.asarray(self.shift_matrix, dtype=np.float64)
            if a.shape != (self.raw_dim, self.raw_dim):
                raise ConfigError("domain_shift", f"matrix must be {self.raw_dim}x{self.raw_dim}, got {a.shape}")
            if not np.all(np.isfinite(a)) or np.linalg.cond(a) > 1e12:
                raise ConfigError("domain_shift", "matrix is singular or non-finite")
        if self.shift_bias is not None:
            b = np.asarray(self.shift_bias, dtype=np.float64)
            if b.shape != (self.raw_dim,):
                raise ConfigError("domain_shift", f"offset must have length {self.raw_dim}, got {b.shape}")
        return self


def _block_rotation(rng, d: int, lo: float, hi: float, rounds: int = 2) -> np.ndarray:
    """Product of plane rotations over random axis pairs within a block."""
    rot = np.eye(d)
    for _ in range(rounds):
        perm = rng.permutation(d)
        angles = rng.uniform(lo, hi, size=d // 2)
        for k in range(d // 2):
            i, j = perm[2 * k], perm[2 * k + 1]
            c, sn = np.cos(angles[k]), np.sin(angles[k])
            g = np.eye(d)
            g[i, i] = c
            g[j, j] = c
            g[i, j] = -sn
            g[j, i] = sn
            rot = g @ rot
    return rot


def _default_shift(cfg: SynthConfig, rng):
    """Invertible affine map built from plane rotations, per-axis scaling, and an offset.

    Rotations act within the signal block and within the nuisance block
    separately: the shift restyles each subspace without swapping their
    roles, so identity-bearing content stays in the same coordinates range.
    Strength 0 yields the exact identity so the no-shift case is expressible.
    """
    d = cfg.raw_dim
    signal = max(1, d // 2)
    s = cfg.shift_strength
    # moderate angle range: a near-90 degree plane rotation swaps basis axes
    # outright and makes instance difficulty swing wildly between seeds
    a = np.eye(d)
    a[:signal, :signal] = _block_rotation(rng, signal, 0.2 * np.pi * s, 0.4 * np.pi * s)
    a[signal:, signal:] = _block_rotation(rng, d - signal, 0.2 * np.pi * s, 0.4 * np.pi * s)
    scale = np.exp(rng.normal(0.0, 0.2, size=d) * s)
    a = a @ np.diag(scale)
    b = rng.normal(0.0, 1.0, size=d) * cfg.shift_offset
    return a, b


def generate_synthetic(cfg: SynthConfig):
    """Build (source, target, translated) datasets; pure function of the config."""
    cfg.validate()
    d = cfg.raw_dim
    signal = max(1, d // 2)

    rng_shift = np.random.default_rng([cfg.seed, 0])
    rng_centers = np.random.default_rng([cfg.seed, 1])
    rng_source = np.random.default_rng([cfg.seed, 2])
    rng_target = np.random.default_rng([cfg.seed, 3])
    rng_cams = np.random.default_rng([cfg.seed, 4])

    if cfg.shift_matrix is not None:
        a = np.asarray(cfg.shift_matrix, dtype=np.float64)
        b = (np.zeros(d) if cfg.shift_bias is None
             else np.asarray(cfg.shift_bias, dtype=np.float64))
    else:
        a, b = _default_shift(cfg, rng_shift)

    def centers(num_ids):
        c = np.zeros((num_ids, d))
        c[:, :signal] = rng_centers.normal(0.0, 1.0, size=(num_ids, signal))
        return c

    # Camera offsets live mostly on nuisance axes, but bleed into the signal
    # block: cross-camera matching then needs those few directions nulled
    # inside the identity-bearing subspace, and in observed source coordinates
    # that subspace sits rotated, so the skill does not transfer for free.
    cam_offsets = np.zeros((cfg.cameras, d))
    cam_offsets[:, signal:] = rng_centers.normal(
        0.0, CAMERA_OFFSET * cfg.cluster_spread, size=(cfg.cameras, d - signal))
    cam_offsets[:, :signal] = rng_centers.normal(
        0.0, CAMERA_SIGNAL * cfg.cluster_spread, size=(cfg.cameras, signal))

    noise_scale = np.full(d, NUISANCE_NOISE * cfg.cluster_spread)
    noise_scale[:signal] = SIGNAL_NOISE * cfg.cluster_spread

    def raw_cluster(center_block, rng, id_offset):
        num_ids = center_block.shape[0]
        n = num_ids * cfg.samples_per_id
        idents = np.repeat(np.arange(num_ids, dtype=np.int32) + id_offset, cfg.samples_per_id)
        cams = rng_cams.integers(0, cfg.cameras, size=n).astype(np.int32)
        raws = np.repeat(center_block, cfg.samples_per_id, axis=0)
        raws = raws + rng.normal(0.0, 1.0, size=(n, d)) * noise_scale
        raws = raws + cam_offsets[cams]
        return raws, idents, cams

    src_raw, src_ids, src_cams = raw_cluster(centers(cfg.num_ids_source), rng_source, 0)
    tgt_raw, tgt_ids, tgt_cams = raw_cluster(centers(cfg.num_ids_target), rng_target, cfg.num_ids_source)

    src_obs = src_raw @ a.T + b
    gamma = cfg.translation_fidelity
    if gamma == 0.0:
        translated_feats = src_obs
    elif gamma == 1.0:
        translated_feats = src_raw
    else:
        translated_feats = (1.0 - gamma) * src_obs + gamma * src_raw

    def build(feats, idents, cams, domain, name):
        n = len(idents)
        return Dataset(
            features=feats.astype(np.float32),
            identities=idents,
            cameras=cams,
            domains=np.full(n, int(domain), dtype=np.uint8),
            pseudo=np.full(n, PSEUDO_OUTLIER, dtype=np.int32),
            name=name,
        ).validate()

    source = build(src_obs, src_ids, src_cams, Domain.SOURCE, "source")
    target = build(tgt_raw, tgt_ids, tgt_cams, Domain.TARGET, "target")
    translated = build(translated_feats, src_ids, src_cams, Domain.TARGET, "translated")
    return source, target, translated


# ---------------------------------------------------------------------------
# key = value configuration files (shared by synth and stage configs)
# ---------------------------------------------------------------------------

def parse_kv(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        out[key] = value.strip()
    return out


_SYNTH_FIELDS = {
    "num_ids_source": int,
    "num_ids_target": int,
    "samples_per_id": int,
    "raw_dim": int,
    "cluster_spread": float,
    "translation_fidelity": float,
    "cameras": int,
    "seed": int,
    "shift_strength": float,
    "shift_offset": float,
}


def synth_config_from_kv(pairs: dict) -> SynthConfig:
    kwargs = {}
    for key, raw in pairs.items():
        if key not in _SYNTH_FIELDS:
            raise ConfigError(key, "unknown synthetic-config key")
        try:
            kwargs[key] = _SYNTH_FIELDS[key](raw)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from exc
    return SynthConfig(**kwargs).validate()
