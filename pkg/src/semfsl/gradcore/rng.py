"""Keyed random streams.

A stream is identified by ``(seed, label)``; each draw site additionally
passes integer keys (epoch, task index, ...) so that the numbers a site sees
never depend on how many draws happened elsewhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


def _label_key(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngStream:
    seed: int
    label: str = ""

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def generator(self, *keys: int) -> np.random.Generator:
        """Philox generator for the given draw keys."""
        spawn_key = (_label_key(self.label),) + tuple(int(k) for k in keys)
        ss = np.random.SeedSequence(int(self.seed), spawn_key=spawn_key)
        return np.random.Generator(np.random.Philox(ss))

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{label}" if self.label else label)
