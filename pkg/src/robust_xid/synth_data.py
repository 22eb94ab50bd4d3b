"""Synthetic paired-modality dataset with controlled faulty-positive injection.

Each class gets one random unit prototype per modality in a shared latent
space; the prototypes of the two modalities are distinct but paired by class
identity, so class membership is the only signal shared across modalities.
An instance draws a per-modality latent around its class prototype and maps
it through a fixed random matrix followed by tanh into the raw space.

Faulty positives are injected by regenerating the audio of a uniformly
chosen subset of instances from held-out distractor classes, mirroring a
dubbed or unrelated soundtrack. The ground-truth flag records exactly which
instances were altered.

The on-disk format is little-endian binary: magic "RXID", u32 version, a
fixed header (N, C, latent_dim, raw_dim, faulty fraction, within-class
noise, seed), then one packed record per instance
(id u64, class u32, faulty u8, x_v float32[raw_dim], x_a float32[raw_dim]).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core_math import normalize_rows
from .errors import CorruptRecord, FormatError, InvalidConfig, OutOfRange, VersionMismatch

MAGIC = b"RXID"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIddQ")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 20
    instances_per_class: int = 100
    latent_dim: int = 16
    raw_dim: int = 64
    within_class_noise: float = 0.25
    faulty_fraction: float = 0.0
    seed: int = 1

    def __post_init__(self):
        if self.num_classes < 2 or self.instances_per_class < 1:
            raise InvalidConfig("need at least 2 classes and 1 instance per class")
        if self.latent_dim < 2 or self.raw_dim < 2:
            raise InvalidConfig("latent_dim and raw_dim must be at least 2")
        if not 0.0 <= self.faulty_fraction < 1.0:
            raise InvalidConfig(f"faulty_fraction must lie in [0, 1), got {self.faulty_fraction}")
        if self.within_class_noise < 0.0:
            raise InvalidConfig("within_class_noise must be non-negative")
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")


@dataclass
class SynthDataset:
    config: SynthConfig
    ids: np.ndarray      # (N,) int64
    labels: np.ndarray   # (N,) int64
    x_v: np.ndarray      # (N, raw_dim) float32 in (-1, 1)
    x_a: np.ndarray      # (N, raw_dim) float32 in (-1, 1)
    faulty: np.ndarray   # (N,) bool
    # generation extras, not persisted
    latents_v: np.ndarray | None = None
    latents_a: np.ndarray | None = None
    prototypes_v: np.ndarray | None = None
    prototypes_a: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.ids.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, SynthDataset):
            return NotImplemented
        return (self.config == other.config
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.x_v, other.x_v)
                and np.array_equal(self.x_a, other.x_a)
                and np.array_equal(self.faulty, other.faulty))


def _scaffold(config: SynthConfig):
    """Class prototypes and mixing matrices; a pure function of the config."""
    ss = np.random.SeedSequence(config.seed)
    child_proto, _child_train, _child_eval = ss.spawn(3)
    rng = np.random.default_rng(child_proto)
    protos_v = normalize_rows(rng.standard_normal((config.num_classes, config.latent_dim)))
    protos_a = normalize_rows(rng.standard_normal((config.num_classes, config.latent_dim)))
    mix_v = rng.standard_normal((config.raw_dim, config.latent_dim))
    mix_a = rng.standard_normal((config.raw_dim, config.latent_dim))
    return protos_v, protos_a, mix_v, mix_a


def _instance_child(config: SynthConfig, which: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(config.seed).spawn(3)[which]


def _draw_instances(config: SynthConfig, child, per_class: int):
    protos_v, protos_a, mix_v, mix_a = _scaffold(config)
    rng = np.random.default_rng(child)
    n = config.num_classes * per_class
    labels = np.repeat(np.arange(config.num_classes), per_class)
    sigma = config.within_class_noise
    latents_v = normalize_rows(protos_v[labels] + sigma * rng.standard_normal((n, config.latent_dim)))
    latents_a = normalize_rows(protos_a[labels] + sigma * rng.standard_normal((n, config.latent_dim)))
    x_v = np.tanh(latents_v @ mix_v.T).astype(np.float32)
    x_a = np.tanh(latents_a @ mix_a.T).astype(np.float32)
    return labels.astype(np.int64), latents_v, latents_a, x_v, x_a, protos_v, protos_a


def generate(config: SynthConfig) -> SynthDataset:
    """Clean dataset (no flags set); deterministic given config.seed."""
    labels, lat_v, lat_a, x_v, x_a, protos_v, protos_a = _draw_instances(
        config, _instance_child(config, 1), config.instances_per_class)
    n = labels.size
    return SynthDataset(
        config=config,
        ids=np.arange(n, dtype=np.int64),
        labels=labels,
        x_v=x_v,
        x_a=x_a,
        faulty=np.zeros(n, dtype=bool),
        latents_v=lat_v,
        latents_a=lat_a,
        prototypes_v=protos_v,
        prototypes_a=protos_a,
    )


def generate_eval_split(config: SynthConfig, per_class: int) -> SynthDataset:
    """Held-out instances from the same prototypes, fresh within-class noise."""
    labels, lat_v, lat_a, x_v, x_a, protos_v, protos_a = _draw_instances(
        config, _instance_child(config, 2), per_class)
    n = labels.size
    return SynthDataset(
        config=replace(config, instances_per_class=per_class, faulty_fraction=0.0),
        ids=np.arange(n, dtype=np.int64),
        labels=labels,
        x_v=x_v,
        x_a=x_a,
        faulty=np.zeros(n, dtype=bool),
        latents_v=lat_v,
        latents_a=lat_a,
        prototypes_v=protos_v,
        prototypes_a=protos_a,
    )


def inject_faulty_positives(dataset: SynthDataset, fraction: float, seed: int) -> SynthDataset:
    """Replace the audio of floor(fraction * N) uniformly chosen instances.

    Replacement audio comes from distractor class prototypes disjoint from
    the training classes, drawn with the dataset's own within-class noise,
    so the corrupted audio marginal looks like ordinary audio that simply
    has nothing to do with the paired video.
    """
    if not 0.0 <= fraction < 1.0:
        raise OutOfRange(f"fraction must lie in [0, 1), got {fraction}")
    cfg = dataset.config
    x_a = dataset.x_a.copy()
    faulty = np.zeros(dataset.n, dtype=bool)
    latents_a = None if dataset.latents_a is None else dataset.latents_a.copy()

    m = int(fraction * dataset.n)
    if m > 0:
        _, _, _, mix_a = _scaffold(cfg)
        rng = np.random.default_rng(seed)
        flagged = rng.choice(dataset.n, size=m, replace=False)
        distractors = normalize_rows(rng.standard_normal((cfg.num_classes, cfg.latent_dim)))
        which = rng.integers(0, cfg.num_classes, size=m)
        noise = rng.standard_normal((m, cfg.latent_dim))
        lat = normalize_rows(distractors[which] + cfg.within_class_noise * noise)
        x_a[flagged] = np.tanh(lat @ mix_a.T).astype(np.float32)
        faulty[flagged] = True
        if latents_a is not None:
            latents_a[flagged] = lat

    return SynthDataset(
        config=replace(cfg, faulty_fraction=fraction),
        ids=dataset.ids.copy(),
        labels=dataset.labels.copy(),
        x_v=dataset.x_v.copy(),
        x_a=x_a,
        faulty=faulty,
        latents_v=None if dataset.latents_v is None else dataset.latents_v.copy(),
        latents_a=latents_a,
        prototypes_v=dataset.prototypes_v,
        prototypes_a=dataset.prototypes_a,
    )


def _record_dtype(raw_dim: int) -> np.dtype:
    return np.dtype([
        ("id", "<u8"),
        ("label", "<u4"),
        ("faulty", "u1"),
        ("x_v", "<f4", (raw_dim,)),
        ("x_a", "<f4", (raw_dim,)),
    ])


def save(dataset: SynthDataset, path) -> None:
    """Write the binary dataset file; extras (latents, prototypes) are dropped."""
    cfg = dataset.config
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, dataset.n, cfg.num_classes,
                          cfg.latent_dim, cfg.raw_dim, cfg.faulty_fraction,
                          cfg.within_class_noise, cfg.seed)
    records = np.zeros(dataset.n, dtype=_record_dtype(cfg.raw_dim))
    records["id"] = dataset.ids
    records["label"] = dataset.labels
    records["faulty"] = dataset.faulty
    records["x_v"] = dataset.x_v
    records["x_a"] = dataset.x_a
    Path(path).write_bytes(header + records.tobytes())


def load(path) -> SynthDataset:
    """Read a dataset file back; inverse of save for the persisted fields."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"file too short for header ({len(blob)} bytes)")
    magic, version, n, c, latent_dim, raw_dim, fraction, sigma, seed = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported dataset version {version}")
    if c < 2 or n < 1 or n % c:
        raise FormatError(f"inconsistent header: N={n}, C={c}")
    dtype = _record_dtype(raw_dim)
    payload = blob[_HEADER.size:]
    if len(payload) != n * dtype.itemsize:
        raise CorruptRecord(
            f"payload holds {len(payload)} bytes, expected {n * dtype.itemsize}")
    records = np.frombuffer(payload, dtype=dtype)
    config = SynthConfig(num_classes=c, instances_per_class=n // c,
                         latent_dim=latent_dim, raw_dim=raw_dim,
                         within_class_noise=sigma, faulty_fraction=fraction, seed=seed)
    return SynthDataset(
        config=config,
        ids=records["id"].astype(np.int64),
        labels=records["label"].astype(np.int64),
        x_v=np.array(records["x_v"], dtype=np.float32),
        x_a=np.array(records["x_a"], dtype=np.float32),
        faulty=records["faulty"].astype(bool),
    )
