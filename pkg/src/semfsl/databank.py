"""Precomputed per-class feature vectors: container, binary format, synthesis.

Binary layout (little-endian)::

    b"FBNK" | u16 version=1 | u32 d_v | u32 n_classes
    per class: u16 name_len | name (UTF-8) | u8 split | u32 n_samples
               | n_samples * d_v float32, row-major

so a file holds ``14 + sum(7 + name_len + 4 * n_samples * d_v)`` bytes.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from os import PathLike

import numpy as np

from .errors import ConfigurationError, CorruptionError, FormatError, ValidationError
from .gradcore import RngStream

MAGIC = b"FBNK"
VERSION = 1
HEADER = struct.Struct("<4sHII")
SPLITS = ("train", "val", "test")


class EmptySplitWarning(UserWarning):
    pass


def normalize_name(name: str) -> str:
    """Lowercase, treat ``_``/``-`` as spaces, collapse runs of whitespace."""
    return " ".join(name.lower().replace("_", " ").replace("-", " ").split())


@dataclass(frozen=True)
class BankClass:
    name: str
    split: str
    features: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class FeatureBank:
    """Immutable collection of classes; feature matrices are float32, read-only."""

    d_v: int
    classes: tuple[BankClass, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        self.validate()

    @classmethod
    def from_arrays(cls, d_v, items) -> "FeatureBank":
        """Build from ``(name, split, features)`` triples."""
        classes = []
        for name, split, feats in items:
            arr = np.array(feats, dtype=np.float32, copy=True).reshape(-1, d_v) if np.size(feats) else np.zeros((0, d_v), np.float32)
            arr.flags.writeable = False
            classes.append(BankClass(str(name), str(split), arr))
        return cls(int(d_v), tuple(classes))

    def validate(self):
        if self.d_v <= 0:
            raise ValidationError(f"feature dimension must be positive, got {self.d_v}")
        seen = {}
        for c in self.classes:
            if c.split not in SPLITS:
                raise ValidationError(f"class {c.name!r}: unknown split {c.split!r}")
            key = normalize_name(c.name)
            if not key:
                raise ValidationError("empty class name")
            if key in seen:
                raise ValidationError(f"duplicate class name {c.name!r} (clashes with {seen[key]!r})")
            seen[key] = c.name
            if c.features.ndim != 2 or c.features.shape[1] != self.d_v:
                raise ValidationError(f"class {c.name!r}: features shape {c.features.shape}, expected (*, {self.d_v})")
            if not np.all(np.isfinite(c.features)):
                raise ValidationError(f"class {c.name!r}: non-finite feature values")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    def __len__(self):
        return len(self.classes)

    def __getitem__(self, i) -> BankClass:
        return self.classes[i]

    def check_capacity(self, ways: int, per_class: int, what: str = "view"):
        if len(self.classes) < ways:
            raise ConfigurationError(f"{what} has {len(self.classes)} classes, {ways}-way episodes need {ways}")
        short = [c for c in self.classes if c.n_samples < per_class]
        if short:
            worst = min(short, key=lambda c: c.n_samples)
            raise ConfigurationError(
                f"{what}: {len(short)} classes have fewer than the required {per_class} samples "
                f"(class {worst.name!r} has {worst.n_samples})"
            )


def split_view(bank: FeatureBank, split: str) -> FeatureBank:
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}; expected one of {SPLITS}")
    view = FeatureBank(bank.d_v, tuple(c for c in bank.classes if c.split == split))
    if not view.classes:
        warnings.warn(f"split {split!r} has no classes", EmptySplitWarning, stacklevel=2)
    return view


def encode_bank(bank: FeatureBank) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, bank.d_v, len(bank.classes))]
    for c in bank.classes:
        name = c.name.encode("utf-8")
        if len(name) > 0xFFFF:
            raise ValidationError(f"class name too long ({len(name)} bytes)")
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<BI", SPLITS.index(c.split), c.n_samples))
        parts.append(np.ascontiguousarray(c.features, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_bank(buf: bytes) -> FeatureBank:
    def need(offset, n, what):
        if offset + n > len(buf):
            raise CorruptionError(f"truncated file while reading {what}: need {n} bytes, have {len(buf) - offset}", offset)

    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    need(0, HEADER.size, "header")
    _, version, d_v, n_classes = HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise FormatError(f"unsupported feature bank version {version}")
    off = HEADER.size
    items = []
    for i in range(n_classes):
        need(off, 2, f"class {i} name length")
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        need(off, name_len, f"class {i} name")
        try:
            name = bytes(buf[off : off + name_len]).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"class {i} name is not valid UTF-8 (byte offset {off})") from exc
        off += name_len
        need(off, 5, f"class {i} split/count")
        split, n_samples = struct.unpack_from("<BI", buf, off)
        if split >= len(SPLITS):
            raise FormatError(f"class {name!r}: invalid split code {split} (byte offset {off})")
        off += 5
        nbytes = 4 * n_samples * d_v
        need(off, nbytes, f"class {name!r} features")
        feats = np.frombuffer(buf, dtype="<f4", count=n_samples * d_v, offset=off).reshape(n_samples, d_v)
        off += nbytes
        items.append((name, SPLITS[split], feats))
    if off != len(buf):
        raise CorruptionError(f"{len(buf) - off} trailing bytes after last class", off)
    return FeatureBank.from_arrays(d_v, items)


def save_bank(bank: FeatureBank, path: str | PathLike) -> None:
    bank.validate()
    data = encode_bank(bank)
    with open(path, "wb") as fh:
        fh.write(data)


def load_bank(path: str | PathLike) -> FeatureBank:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_bank(buf)


def bank_file_size(bank: FeatureBank) -> int:
    return HEADER.size + sum(7 + len(c.name.encode("utf-8")) + 4 * c.n_samples * bank.d_v for c in bank.classes)


@dataclass
class SynthSpec:
    """Gaussian class clusters with a noisy linear map from class means to semantics.

    ``semantic_map`` is a (d_e, d_v) matrix; when None a random partial
    isometry is drawn from the seed.  ``split_counts`` overrides
    ``split_fractions`` when given.
    """

    n_classes: int = 10
    samples_per_class: int = 100
    d_v: int = 640
    d_e: int = 300
    class_mean_scale: float = 1.0
    within_class_std: float = 0.5
    semantic_map: np.ndarray | None = field(default=None, repr=False)
    semantic_noise_std: float = 0.1
    outlier_fraction: float = 0.0
    outlier_std: float = 0.0
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    split_counts: tuple[int, int, int] | None = None
    name_prefix: str = "synth"

    def validate(self):
        if self.n_classes < 0 or self.samples_per_class < 0 or self.d_v <= 0 or self.d_e <= 0:
            raise ConfigurationError("class/sample counts must be non-negative and dims positive")
        for key in ("class_mean_scale", "within_class_std", "semantic_noise_std", "outlier_std"):
            if getattr(self, key) < 0:
                raise ConfigurationError(f"{key} must be >= 0")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ConfigurationError(f"outlier_fraction must lie in [0, 1), got {self.outlier_fraction}")
        if self.semantic_map is not None and np.shape(self.semantic_map) != (self.d_e, self.d_v):
            raise ConfigurationError(f"semantic_map shape {np.shape(self.semantic_map)} != ({self.d_e}, {self.d_v})")
        if self.split_counts is not None and (sum(self.split_counts) != self.n_classes or min(self.split_counts) < 0):
            raise ConfigurationError(f"split_counts {self.split_counts} must be non-negative and sum to {self.n_classes}")

    def partition(self) -> tuple[int, int, int]:
        if self.split_counts is not None:
            return tuple(int(v) for v in self.split_counts)
        n_train = int(round(self.split_fractions[0] * self.n_classes))
        n_val = min(int(round(self.split_fractions[1] * self.n_classes)), self.n_classes - n_train)
        return n_train, n_val, self.n_classes - n_train - n_val


def semantic_map_matrix(spec: SynthSpec) -> np.ndarray:
    """The (d_e, d_v) map; by default a random partial isometry.

    Orthonormal columns (d_e >= d_v) or rows (d_e < d_v) keep the map well
    conditioned, so semantics carry all of the class-mean information they can.
    """
    if spec.semantic_map is not None:
        return np.asarray(spec.semantic_map, dtype=np.float64)
    rng = RngStream(spec.seed, "synth/semantic-map").generator()
    g = rng.standard_normal((spec.d_e, spec.d_v))
    if spec.d_e >= spec.d_v:
        q, r = np.linalg.qr(g)
        return q * np.sign(np.diag(r))
    q, r = np.linalg.qr(g.T)
    return (q * np.sign(np.diag(r))).T


def synth_generate(spec: SynthSpec):
    """Return ``(FeatureBank, EmbeddingTable)`` as a pure function of ``spec``."""
    from .semstore import EmbeddingTable

    spec.validate()
    stream = RngStream(spec.seed, "synth")
    M = semantic_map_matrix(spec)
    n_train, n_val, _ = spec.partition()
    n_out = int(round(spec.outlier_fraction * spec.samples_per_class))
    items, entries = [], {}
    width = max(3, len(str(max(spec.n_classes - 1, 0))))
    for c in range(spec.n_classes):
        rng = stream.generator(c)
        mu = rng.normal(0.0, spec.class_mean_scale, size=spec.d_v).astype(np.float32).astype(np.float64)
        std = np.full(spec.samples_per_class, spec.within_class_std)
        if n_out:
            std[rng.permutation(spec.samples_per_class)[:n_out]] = spec.outlier_std
        noise = rng.standard_normal((spec.samples_per_class, spec.d_v))
        feats = mu + std[:, None] * noise
        psi = M @ mu
        if spec.semantic_noise_std > 0:
            psi = psi + rng.normal(0.0, spec.semantic_noise_std, size=spec.d_e)
        split = "train" if c < n_train else "val" if c < n_train + n_val else "test"
        name = f"{spec.name_prefix}{c:0{width}d}"
        items.append((name, split, feats))
        entries[name] = psi
    return FeatureBank.from_arrays(spec.d_v, items), EmbeddingTable(spec.d_e, entries)
