"""Accuracy over many sampled tasks, attention statistics, report files."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from os import PathLike

import numpy as np

from .databank import FeatureBank
from .episodes import NoiseConfig, inject_noise, sample_episode
from .errors import FormatError, UsageError
from .gradcore import RngStream
from .model import HeadParams, episode_logits

Z95 = 1.96


def confidence_interval(values) -> tuple[float, float]:
    """Mean and 95% half-width ``1.96 * sigma / sqrt(n)`` (population sigma)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise UsageError("confidence interval of an empty list")
    return float(arr.mean()), float(Z95 * arr.std() / math.sqrt(arr.size))


@dataclass
class EvalResult:
    mean_accuracy: float
    ci_half_width: float
    n_tasks: int
    per_task_accuracies: np.ndarray | None = field(default=None, repr=False)

    def __str__(self):
        return f"{self.mean_accuracy:.2f} +- {self.ci_half_width:.2f} % over {self.n_tasks} tasks"

    def report_items(self, prefix: str = "eval") -> dict:
        return {
            f"{prefix}.mean_acc": self.mean_accuracy,
            f"{prefix}.ci95": self.ci_half_width,
            f"{prefix}.n_tasks": self.n_tasks,
        }


def _task_episode(view, table, ways, shots, queries, noise, ep_stream, noise_stream, task):
    ep = sample_episode(view, table, ways, shots, queries, ep_stream.generator(task))
    if noise is not None and noise.enabled:
        ep = inject_noise(ep, noise, noise_stream.generator(task))
    return ep


def evaluate(
    view: FeatureBank,
    table,
    params: HeadParams,
    variant: str,
    ways: int = 5,
    shots: int = 1,
    queries: int = 15,
    n_tasks: int = 10000,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    keep_per_task: bool = True,
) -> EvalResult:
    """Mean query accuracy (percent) over ``n_tasks`` eval-mode episodes.

    Task ``t`` draws from its own streams keyed by ``(seed, t)``, so results
    do not depend on the order in which tasks are processed.
    """
    if n_tasks < 1:
        raise UsageError("n_tasks must be positive")
    ep_stream = RngStream(seed, "eval/episode")
    noise_stream = RngStream(seed, "eval/noise")
    accs = np.empty(n_tasks)
    for t in range(n_tasks):
        ep = _task_episode(view, table, ways, shots, queries, noise, ep_stream, noise_stream, t)
        sm = episode_logits(ep, params, variant)
        accs[t] = 100.0 * np.mean(sm.predicted == ep.query_labels)
    mean, half = confidence_interval(accs)
    return EvalResult(mean, half, n_tasks, accs if keep_per_task else None)


@dataclass(frozen=True)
class AttentionRecord:
    task: int
    class_index: int
    slot: int
    weight: float
    is_noisy: bool


@dataclass
class AttentionReport:
    records: list[AttentionRecord]
    bin_edges: np.ndarray
    clean_counts: np.ndarray
    noisy_counts: np.ndarray

    def _weights(self, noisy: bool) -> np.ndarray:
        return np.array([r.weight for r in self.records if r.is_noisy == noisy])

    @property
    def mean_clean(self) -> float:
        w = self._weights(False)
        return float(w.mean()) if w.size else float("nan")

    @property
    def mean_noisy(self) -> float:
        w = self._weights(True)
        return float(w.mean()) if w.size else float("nan")

    @property
    def n_noisy(self) -> int:
        return sum(r.is_noisy for r in self.records)

    def report_items(self, prefix: str = "attn") -> dict:
        items = {
            f"{prefix}.mean_clean": self.mean_clean,
            f"{prefix}.mean_noisy": self.mean_noisy,
            f"{prefix}.n_clean": len(self.records) - self.n_noisy,
            f"{prefix}.n_noisy": self.n_noisy,
        }
        for kind, counts in (("clean", self.clean_counts), ("noisy", self.noisy_counts)):
            for low, count in zip(self.bin_edges[:-1], counts):
                items[f"{prefix}.hist.{kind}.{low:.2f}"] = int(count)
        return items


def attention_report(
    view: FeatureBank,
    table,
    params: HeadParams,
    ways: int = 5,
    shots: int = 5,
    queries: int = 15,
    n_tasks: int = 100,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    variant: str = "sample_att",
    bin_width: float = 0.05,
) -> AttentionReport:
    """Sample-attention weight of every support slot, flagged clean or noisy."""
    if variant not in ("sample_att", "combined"):
        raise UsageError(f"variant {variant!r} has no sample attention")
    if shots < 2:
        raise UsageError("attention report needs at least 2 shots")
    ep_stream = RngStream(seed, "eval/episode")
    noise_stream = RngStream(seed, "eval/noise")
    records = []
    for t in range(n_tasks):
        ep = _task_episode(view, table, ways, shots, queries, noise, ep_stream, noise_stream, t)
        sm = episode_logits(ep, params, variant)
        noisy = ep.noisy_mask
        for c in range(ways):
            for slot in range(shots):
                records.append(AttentionRecord(t, c, slot, float(sm.attention[c, slot]), bool(noisy[c, slot])))
    n_bins = int(round(1.0 / bin_width))
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    weights = np.array([r.weight for r in records])
    flags = np.array([r.is_noisy for r in records], dtype=bool)
    clean, _ = np.histogram(weights[~flags], bins=edges)
    noisy, _ = np.histogram(weights[flags], bins=edges)
    return AttentionReport(records, edges, clean, noisy)


def format_value(value) -> str:
    """Report text for one value; floats use round-trip ``repr``."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def report_lines(items: dict, header: str | None = None) -> list[str]:
    lines = [f"# {h}" for h in (header or "").splitlines() if h]
    lines.extend(f"{key}={format_value(value)}" for key, value in items.items())
    return lines


def write_report(path: str | PathLike, items: dict, header: str | None = None) -> None:
    """Write ``key=value`` lines, optionally preceded by ``#`` comment lines."""
    lines = report_lines(items, header)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path: str | PathLike) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise FormatError(f"report line {lineno}: expected key=value")
            out[key] = _parse_scalar(raw)
    return out


def _parse_scalar(raw: str):
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw

