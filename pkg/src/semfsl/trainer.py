"""Episodic meta-training: one SGD step per sampled task, best-on-validation selection."""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .databank import EmptySplitWarning, FeatureBank, split_view
from .episodes import NoiseConfig, inject_noise, sample_episode
from .errors import ConfigurationError, TrainingDivergedError
from .evaluation import EvalResult, evaluate
from .gradcore import TRAIN, RngStream, backward, cross_entropy, sgd_step
from .model import HeadConfig, HeadParams, check_variant, episode_logits_tensor, save_checkpoint

logger = logging.getLogger(__name__)

# validation episodes are drawn from this seed regardless of the training seed
VAL_SEED = 20_000_601


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    episodes_per_epoch: int = 100
    val_episodes: int = 600
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_halving_period_epochs: int = 40
    ways: int = 5
    shots: int = 1
    queries: int = 15
    variant: str = "combined"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    alpha: float = 0.5
    dist_scale: float = 32.0
    hidden: int = 32
    tau_hidden: tuple[int, ...] = ()
    dropout: tuple[float, float, float] = (0.4, 0.2, 0.6)  # tau_prior, gamma_vis, gamma_sem
    scale_prior: bool = False
    val_seed: int = VAL_SEED
    val_noise: NoiseConfig | None = None  # None: same as ``noise``
    resample_episodes: bool = True  # False replays the same episodes every epoch
    checkpoint_path: str | None = None

    def __post_init__(self):
        check_variant(self.variant)
        for key in ("episodes_per_epoch", "val_episodes", "ways", "shots", "lr_halving_period_epochs"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"{key} must be positive, got {getattr(self, key)}")
        if self.epochs < 0 or self.queries < 1:
            raise ConfigurationError("epochs must be >= 0 and queries >= 1")
        if self.lr < 0:
            raise ConfigurationError(f"lr must be non-negative, got {self.lr}")
        if self.noise.enabled and self.noise.min_clean > self.shots:
            raise ConfigurationError(f"min_clean={self.noise.min_clean} exceeds shots={self.shots}")

    def head_config(self, d_v: int, d_e: int) -> HeadConfig:
        tau_p, vis_p, sem_p = self.dropout
        return HeadConfig(
            d_v=d_v,
            d_e=d_e,
            alpha=self.alpha,
            dist_scale=self.dist_scale,
            hidden=self.hidden,
            tau_dropout=tau_p,
            vis_dropout=vis_p,
            sem_dropout=sem_p,
            tau_hidden=self.tau_hidden,
            scale_prior=self.scale_prior,
        )

    def lr_at(self, epoch: int) -> float:
        return math.ldexp(self.lr, -(epoch // self.lr_halving_period_epochs))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_ci95: float
    lr: float

    def line(self) -> str:
        return (
            f"epoch={self.epoch} train_loss={self.train_loss!r} val_acc={self.val_accuracy!r} "
            f"val_ci95={self.val_ci95!r} lr={self.lr!r}"
        )


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_checkpoint: str | None = None

    @property
    def best_val_accuracy(self) -> float:
        if self.best_epoch is None:
            return float("nan")
        return self.epochs[self.best_epoch].val_accuracy

    def lines(self) -> list[str]:
        out = [r.line() for r in self.epochs]
        if self.best_epoch is not None:
            out.append(f"best_epoch={self.best_epoch} best_val_acc={self.best_val_accuracy!r}")
        return out

    def __str__(self):
        return "\n".join(self.lines())


def _embedding_dim(table) -> int:
    return table.d_e if table is not None else 1


def episode_loss(episode, params: HeadParams, variant: str, mode: str = TRAIN, rng=None):
    """Mean query cross-entropy of ``episode`` (a scalar Tensor)."""
    logits, _, _ = episode_logits_tensor(episode, params, variant, mode, rng)
    return cross_entropy(logits, episode.query_labels)


def validate(bank: FeatureBank, table, params: HeadParams, cfg: TrainConfig) -> EvalResult:
    view = split_view(bank, "val")
    noise = cfg.noise if cfg.val_noise is None else cfg.val_noise
    return evaluate(
        view, table, params, cfg.variant, cfg.ways, cfg.shots, cfg.queries,
        n_tasks=cfg.val_episodes, noise=noise, seed=cfg.val_seed,
    )


def _param_norms(params: HeadParams) -> str:
    return ", ".join(f"{k}={np.linalg.norm(p.data):.3g}" for k, p in params.params.items())


def train(bank: FeatureBank, table, cfg: TrainConfig, init: HeadParams | None = None, callback=None) -> tuple[HeadParams, TrainLog]:
    """Meta-train heads on the train split; return the best-validation params.

    ``init`` continues from existing parameters (not modified).  Without a
    validation split the final parameters are returned.
    """
    params = init.copy() if init is not None else HeadParams.init(cfg.head_config(bank.d_v, _embedding_dim(table)), cfg.seed)
    log = TrainLog()
    if cfg.epochs == 0:
        return params, log

    train_view = split_view(bank, "train")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySplitWarning)
        has_val = len(split_view(bank, "val")) > 0
    train_view.check_capacity(cfg.ways, cfg.shots + cfg.queries, "train split")

    trainable = params.for_variant(cfg.variant)
    ep_stream = RngStream(cfg.seed, "train/episode")
    noise_stream = RngStream(cfg.seed, "train/noise")
    drop_stream = RngStream(cfg.seed, "train/dropout")
    best, best_acc = params.copy(), -math.inf

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        losses = np.empty(cfg.episodes_per_epoch)
        for i in range(cfg.episodes_per_epoch):
            key = (epoch, i) if cfg.resample_episodes else (0, i)
            ep = sample_episode(train_view, table, cfg.ways, cfg.shots, cfg.queries, ep_stream.generator(*key))
            if cfg.noise.enabled:
                ep = inject_noise(ep, cfg.noise, noise_stream.generator(*key))
            for p in trainable:
                p.zero_grad()
            loss = episode_loss(ep, params, cfg.variant, TRAIN, drop_stream.generator(epoch, i))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, episode {i}; parameter norms: {_param_norms(params)}"
                )
            backward(loss)
            sgd_step(trainable, lr, cfg.momentum, cfg.weight_decay)
            losses[i] = value

        if has_val:
            val = validate(bank, table, params, cfg)
            acc, ci = val.mean_accuracy, val.ci_half_width
        else:
            acc, ci = float("nan"), float("nan")
        record = EpochRecord(epoch, float(losses.mean()), acc, ci, lr)
        log.epochs.append(record)
        logger.info(record.line())
        if callback is not None:
            callback(record)
        if not has_val or acc > best_acc:
            best, best_acc = params.copy(), acc
            log.best_epoch = epoch
            if cfg.checkpoint_path is not None:
                save_checkpoint(cfg.checkpoint_path, best, cfg.variant)
                log.best_checkpoint = cfg.checkpoint_path
    return best, log


def select_alpha(bank: FeatureBank, table, cfg: TrainConfig, grid=None, init: HeadParams | None = None):
    """Train one model per mixing weight; return ``(best_alpha, {alpha: val_acc})``.

    Every grid point uses the same seed.  Ties go to the smaller alpha.  With
    ``init`` each grid point fine-tunes from those parameters instead.
    """
    grid = sorted(float(a) for a in (grid if grid is not None else np.round(np.linspace(0.0, 1.0, 11), 1)))
    if not grid:
        raise ConfigurationError("alpha grid is empty")
    if any(not 0.0 <= a <= 1.0 for a in grid):
        raise ConfigurationError(f"alpha grid values must lie in [0, 1], got {grid}")
    scores = {}
    best_alpha, best_acc = grid[0], -math.inf
    for alpha in grid:
        run = dataclasses.replace(cfg, alpha=alpha, checkpoint_path=None)
        start = init.with_config(alpha=alpha) if init is not None else None
        params, log = train(bank, table, run, init=start)
        acc = log.best_val_accuracy if log.epochs else validate(bank, table, params, run).mean_accuracy
        scores[alpha] = acc
        if acc > best_acc:
            best_alpha, best_acc = alpha, acc
    return best_alpha, scores
