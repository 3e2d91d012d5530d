"""Class-name embeddings read from GloVe-style text files."""

from __future__ import annotations

import re
from collections.abc import Iterable, Mapping
from os import PathLike

import numpy as np

from .databank import FeatureBank, normalize_name
from .errors import DimensionError, MissingEmbeddingError, ParseError, ValidationError

_SEPARATORS = re.compile(r"[\s_\-]+")


class EmbeddingTable:
    """Normalized class name -> float64 vector of length ``d_e``."""

    def __init__(self, d_e: int, entries: Mapping[str, Iterable[float]] | None = None):
        if d_e <= 0:
            raise ValidationError(f"embedding dimension must be positive, got {d_e}")
        self.d_e = int(d_e)
        self.entries: dict[str, np.ndarray] = {}
        for name, vec in (entries or {}).items():
            key = normalize_name(name)
            arr = np.array(vec, dtype=np.float64)
            if arr.shape != (self.d_e,):
                raise DimensionError(f"embedding for {name!r} has shape {arr.shape}, expected ({self.d_e},)")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"embedding for {name!r} has non-finite entries")
            if key in self.entries:
                raise ValidationError(f"duplicate embedding for {key!r}")
            arr.flags.writeable = False
            self.entries[key] = arr

    def __contains__(self, name: str) -> bool:
        return normalize_name(name) in self.entries

    def __getitem__(self, name: str) -> np.ndarray:
        key = normalize_name(name)
        try:
            return self.entries[key]
        except KeyError:
            raise MissingEmbeddingError(key, name) from None

    def __len__(self):
        return len(self.entries)

    def matrix(self, names: Iterable[str]) -> np.ndarray:
        rows = [self[n] for n in names]
        return np.stack(rows) if rows else np.zeros((0, self.d_e))

    def unit_normalized(self) -> "EmbeddingTable":
        out = {}
        for k, v in self.entries.items():
            norm = np.linalg.norm(v)
            out[k] = v / norm if norm > 0 else v
        return EmbeddingTable(self.d_e, out)


def load_word_vectors(path: str | PathLike, d_e: int) -> dict[str, np.ndarray]:
    """Read ``token v_1 ... v_{d_e}`` lines; blank lines are skipped.

    The first occurrence of a duplicated token wins.
    """
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d_e + 1:
                raise ParseError(f"expected a token and {d_e} values, found {len(parts) - 1} values", lineno)
            try:
                vec = np.array([float(p.replace("−", "-")) for p in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"unparseable value ({exc})", lineno) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite value", lineno)
            table.setdefault(parts[0], vec)
    return table


def write_word_vectors(path: str | PathLike, table: EmbeddingTable | Mapping[str, np.ndarray]) -> None:
    """Write one line per entry with round-trip float formatting.

    Multi-word keys are written with ``_`` joining the words so each line keeps
    a single token.
    """
    entries = table.entries if isinstance(table, EmbeddingTable) else table
    with open(path, "w", encoding="utf-8") as fh:
        for name, vec in entries.items():
            token = name.replace(" ", "_")
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def class_tokens(class_name: str) -> list[str]:
    return [t for t in _SEPARATORS.split(class_name.lower()) if t]


def embedding_for_class(tokens: Mapping[str, np.ndarray], class_name: str) -> np.ndarray:
    """Mean of the word vectors of the tokens in ``class_name``.

    An exact (joined) entry such as ``king_crab`` takes precedence over the
    per-token mean.
    """
    words = class_tokens(class_name)
    if not words:
        raise ValueError("class name is empty")
    for joined in ("_".join(words), " ".join(words)):
        if joined in tokens:
            return np.array(tokens[joined], dtype=np.float64)
    vecs = []
    for w in words:
        if w not in tokens:
            raise MissingEmbeddingError(w, class_name)
        vecs.append(tokens[w])
    return np.mean(np.stack(vecs), axis=0)


def build_table(tokens: Mapping[str, np.ndarray], class_names: Iterable[str], d_e: int | None = None, unit_norm: bool = False) -> EmbeddingTable:
    names = list(class_names)
    if d_e is None:
        d_e = len(next(iter(tokens.values()))) if tokens else 1
    table = EmbeddingTable(d_e, {n: embedding_for_class(tokens, n) for n in names})
    return table.unit_normalized() if unit_norm else table


def coverage_check(table, bank: FeatureBank) -> list[str]:
    """Bank class names that have no resolvable embedding (empty = full coverage)."""
    missing = []
    for name in bank.names:
        if isinstance(table, EmbeddingTable):
            if name not in table:
                missing.append(name)
        else:
            try:
                embedding_for_class(table, name)
            except MissingEmbeddingError:
                missing.append(name)
    return missing
