"""n-way k-shot task sampling and support-set label noise."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .databank import FeatureBank
from .errors import ConfigurationError
from .semstore import EmbeddingTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = False
    min_clean: int = 3
    noise_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ConfigurationError(f"noise_prob must lie in [0, 1], got {self.noise_prob}")
        if self.min_clean < 0:
            raise ConfigurationError(f"min_clean must be >= 0, got {self.min_clean}")


@dataclass
class Episode:
    """One task.

    Support arrays are laid out per class: row ``c`` of ``support_features``
    holds the ``shots`` samples presented under class ``c``.  ``support_true``
    differs from ``support_presented`` only at noisy slots and is kept for
    reporting; models never read it.
    """

    ways: int
    shots: int
    queries: int
    class_names: list[str]
    class_embeddings: np.ndarray  # (n, d_e)
    support_features: np.ndarray  # (n, k, d_v)
    support_presented: np.ndarray  # (n, k)
    support_true: np.ndarray  # (n, k)
    query_features: np.ndarray  # (n*q, d_v)
    query_labels: np.ndarray  # (n*q,)
    class_indices: np.ndarray  # (n,) positions in the source view
    sample_indices: np.ndarray  # (n, k+q) rows drawn per class, support first
    support_sources: np.ndarray  # (n, k, 2) (view class, row) behind each support slot
    source: FeatureBank | None = field(default=None, repr=False, compare=False)
    warnings: list[str] = field(default_factory=list)

    @property
    def noisy_mask(self) -> np.ndarray:
        return self.support_presented != self.support_true

    def check(self, min_clean: int | None = None) -> None:
        """Raise AssertionError if a structural invariant is violated."""
        n, k, q = self.ways, self.shots, self.queries
        assert len(set(self.class_indices.tolist())) == n
        assert self.support_features.shape[:2] == (n, k)
        assert self.query_features.shape[0] == n * q
        assert np.array_equal(self.support_presented, np.repeat(np.arange(n)[:, None], k, axis=1))
        for c in range(n):
            assert len(set(self.sample_indices[c].tolist())) == k + q
        used = {}
        for c in range(n):
            for slot in range(k):
                key = tuple(self.support_sources[c, slot])
                assert key not in used, "support slot reuses a sample"
                used[key] = True
            for row in self.sample_indices[c, k:]:
                assert (int(self.class_indices[c]), int(row)) not in used, "query overlaps support"
        if min_clean is not None:
            clean = (self.support_presented == self.support_true).sum(axis=1)
            assert np.all(clean >= min(min_clean, k))


def sample_episode(view: FeatureBank, table: EmbeddingTable | None, ways: int, shots: int, queries: int, rng: np.random.Generator) -> Episode:
    """Draw ``ways`` classes, then ``shots + queries`` distinct rows per class."""
    if ways < 1 or shots < 1 or queries < 0:
        raise ConfigurationError(f"invalid episode shape ways={ways} shots={shots} queries={queries}")
    view.check_capacity(ways, shots + queries)
    classes = rng.choice(len(view), size=ways, replace=False)
    per_class = shots + queries
    rows = np.stack([rng.choice(view[c].n_samples, size=per_class, replace=False) for c in classes])
    feats = [view[c].features[r].astype(np.float64) for c, r in zip(classes, rows)]
    support = np.stack([f[:shots] for f in feats])
    query = np.concatenate([f[shots:] for f in feats]) if queries else np.zeros((0, view.d_v))
    labels = np.repeat(np.arange(ways), queries)
    presented = np.repeat(np.arange(ways)[:, None], shots, axis=1)
    names = [view[c].name for c in classes]
    if table is not None:
        emb = table.matrix(names)
    else:
        emb = np.zeros((ways, 0))
    sources = np.stack([np.stack([np.full(shots, c), r[:shots]], axis=-1) for c, r in zip(classes, rows)])
    return Episode(
        ways=ways,
        shots=shots,
        queries=queries,
        class_names=names,
        class_embeddings=emb,
        support_features=support,
        support_presented=presented,
        support_true=presented.copy(),
        query_features=query,
        query_labels=labels,
        class_indices=classes,
        sample_indices=rows,
        support_sources=sources,
        source=view,
    )


def inject_noise(episode: Episode, cfg: NoiseConfig, rng: np.random.Generator) -> Episode:
    """Swap support slots beyond the first ``min_clean`` for samples of other classes.

    Each eligible slot turns noisy with probability ``noise_prob``: its feature
    is replaced by an unused sample of a uniformly chosen other episode class,
    the presented label stays put and the true label records the donor.
    Returns a new episode; the input is not modified.
    """
    if not cfg.enabled:
        return episode
    n, k = episode.ways, episode.shots
    if cfg.min_clean > k:
        raise ConfigurationError(f"min_clean={cfg.min_clean} exceeds shots={k}")
    if episode.source is None:
        raise ConfigurationError("episode has no source bank to draw noisy samples from")
    view = episode.source
    support = episode.support_features.copy()
    true = episode.support_true.copy()
    sources = episode.support_sources.copy()
    notes = list(episode.warnings)
    used = [set(episode.sample_indices[c].tolist()) for c in range(n)]

    def available(d):
        return view[episode.class_indices[d]].n_samples - len(used[d])

    for c in range(n):
        flips = rng.random(k - cfg.min_clean) < cfg.noise_prob
        for slot in np.flatnonzero(flips) + cfg.min_clean:
            others = [d for d in range(n) if d != c]
            if not others:
                notes.append(f"class {c} slot {slot}: no other class to draw noise from")
                continue
            donor = others[rng.integers(len(others))]
            if available(donor) <= 0:
                fallback = [d for d in others if available(d) > 0]
                if not fallback:
                    msg = f"class {c} slot {slot}: no unused donor samples, slot left clean"
                    logger.warning(msg)
                    notes.append(msg)
                    continue
                donor = fallback[rng.integers(len(fallback))]
            bank_class = episode.class_indices[donor]
            free = np.setdiff1d(np.arange(view[bank_class].n_samples), np.fromiter(used[donor], dtype=np.int64))
            row = int(free[rng.integers(len(free))])
            used[donor].add(row)
            support[c, slot] = view[bank_class].features[row]
            true[c, slot] = donor
            sources[c, slot] = (bank_class, row)

    return dataclasses.replace(episode, support_features=support, support_true=true, support_sources=sources, warnings=notes)
