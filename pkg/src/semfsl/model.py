"""Meta-learner heads and the prototype/scoring variants.

Five variants share one code path:

==========  ===============================================================
pn          class mean of support features
am3         ``alpha * mean + (1 - alpha) * tau_prior(psi)``
sample_att  like am3, with the semantics-conditioned weighted mean
feat_att    like am3, with the mean scaled per dimension by ``a(psi)``
combined    ``alpha * a(psi) * weighted_mean + (1 - alpha) * tau_prior(psi)``
==========  ===============================================================

Variants with feature attention also scale the query by ``a(psi_c)`` before
measuring its distance to prototype ``c``.  Scores are negated squared
distances divided by the fixed scale ``s``.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from os import PathLike

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError, UsageError
from .gradcore import (
    EVAL,
    Parameter,
    RngStream,
    Tensor,
    affine,
    as_tensor,
    dropout,
    mul,
    relu,
    reshape,
    softmax,
    sq_euclidean,
    tsum,
)

logger = logging.getLogger(__name__)

VARIANTS = ("pn", "am3", "sample_att", "feat_att", "combined")
_USES_SAMPLE_ATT = {"sample_att", "combined"}
_USES_FEAT_ATT = {"feat_att", "combined"}
CHECKPOINT_FORMAT = "semfsl-checkpoint/1"


def check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    return variant


@dataclass(frozen=True)
class HeadConfig:
    d_v: int
    d_e: int
    alpha: float = 0.5
    dist_scale: float = 32.0
    hidden: int = 32
    tau_dropout: float = 0.4
    vis_dropout: float = 0.2
    sem_dropout: float = 0.6
    tau_hidden: tuple[int, ...] = ()
    # also scale the tau_prior branch by the feature attention (ablation switch)
    scale_prior: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.dist_scale > 0:
            raise ConfigurationError(f"dist_scale must be positive, got {self.dist_scale}")
        if self.d_v <= 0 or self.d_e <= 0 or self.hidden <= 0:
            raise ConfigurationError("head dimensions must be positive")
        for p in (self.tau_dropout, self.vis_dropout, self.sem_dropout):
            if not 0.0 <= p < 1.0:
                raise ConfigurationError(f"dropout rates must lie in [0, 1), got {p}")
        object.__setattr__(self, "tau_hidden", tuple(int(h) for h in self.tau_hidden))


def _layer_dims(cfg: HeadConfig) -> dict[str, list[tuple[int, int]]]:
    tau = [cfg.d_e, *cfg.tau_hidden, cfg.d_v]
    return {
        "tau_prior": list(zip(tau[:-1], tau[1:])),
        "gamma_vis": [(cfg.d_v, cfg.hidden), (cfg.hidden, cfg.hidden)],
        "gamma_sem": [(cfg.d_e, cfg.hidden), (cfg.hidden, cfg.hidden)],
        "eta_feat": [(cfg.d_e, cfg.hidden), (cfg.hidden, cfg.d_v)],
    }


class HeadParams:
    """Trainable heads plus the fixed mixing weight and distance scale."""

    def __init__(self, config: HeadConfig, params: OrderedDict[str, Parameter], seed: int = 0):
        self.config = config
        self.params = params
        self.seed = seed

    @classmethod
    def init(cls, config: HeadConfig, seed: int = 0) -> "HeadParams":
        """Glorot-uniform weights, zero biases."""
        params = OrderedDict()
        for head, layers in _layer_dims(config).items():
            rng = RngStream(seed, f"init/{head}").generator()
            for i, (fan_in, fan_out) in enumerate(layers):
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = f"{head}.{i}.weight"
                b = f"{head}.{i}.bias"
                params[w] = Parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), w)
                params[b] = Parameter(np.zeros(fan_out), b)
        return cls(config, params, seed)

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def dist_scale(self) -> float:
        return self.config.dist_scale

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def head(self, name: str) -> list[tuple[Parameter, Parameter]]:
        n = len(_layer_dims(self.config)[name])
        return [(self.params[f"{name}.{i}.weight"], self.params[f"{name}.{i}.bias"]) for i in range(n)]

    def for_variant(self, variant: str) -> list[Parameter]:
        """Parameters that influence ``variant``'s scores."""
        check_variant(variant)
        heads = []
        if variant != "pn" and self.config.alpha < 1.0:
            heads.append("tau_prior")
        if variant in _USES_SAMPLE_ATT:
            heads += ["gamma_vis", "gamma_sem"]
        if variant in _USES_FEAT_ATT:
            heads.append("eta_feat")
        return [p for name, p in self.params.items() if name.split(".", 1)[0] in heads]

    def with_config(self, **changes) -> "HeadParams":
        cfg = HeadConfig(**{**asdict(self.config), **changes})
        if _layer_dims(cfg) != _layer_dims(self.config):
            raise ConfigurationError("config change alters parameter shapes")
        return HeadParams(cfg, self.params, self.seed)

    def copy(self) -> "HeadParams":
        return HeadParams(self.config, OrderedDict((k, Parameter(p.data, k)) for k, p in self.params.items()), self.seed)

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data[...] = state[k]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def neutralize_attention(params: HeadParams) -> HeadParams:
    """Set attention heads to their identity-equivalent settings, in place.

    Sample attention becomes uniform (zero visual embedding) and feature
    attention returns the all-ones vector.
    """
    W, b = params.head("gamma_vis")[-1]
    W.data[...] = 0.0
    b.data[...] = 0.0
    W, b = params.head("eta_feat")[-1]
    W.data[...] = 0.0
    b.data[...] = 1.0
    return params


def _rows(x) -> tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 1:
        return reshape(x, (1, x.shape[0])), True
    return x, False


def _squeeze(x: Tensor, was_vector: bool) -> Tensor:
    return reshape(x, (x.shape[-1],)) if was_vector else x


def tau_prior(psi, params: HeadParams, mode: str = EVAL, rng=None) -> Tensor:
    """Map class embeddings into prototype space (dropout before each layer)."""
    h, vec = _rows(psi)
    layers = params.head("tau_prior")
    for i, (W, b) in enumerate(layers):
        h = dropout(h, params.config.tau_dropout, mode, rng)
        h = affine(h, W, b)
        if i < len(layers) - 1:
            h = relu(h)
    return _squeeze(h, vec)


def _mlp(x, layers, p_drop, mode, rng) -> Tensor:
    (W0, b0), (W1, b1) = layers
    h = affine(x, W0, b0)
    h = dropout(h, p_drop, mode, rng)
    return affine(relu(h), W1, b1)


def gamma_vis(x, params: HeadParams, mode: str = EVAL, rng=None) -> Tensor:
    h, vec = _rows(x)
    return _squeeze(_mlp(h, params.head("gamma_vis"), params.config.vis_dropout, mode, rng), vec)


def gamma_sem(psi, params: HeadParams, mode: str = EVAL, rng=None) -> Tensor:
    h, vec = _rows(psi)
    return _squeeze(_mlp(h, params.head("gamma_sem"), params.config.sem_dropout, mode, rng), vec)


def feature_attention(psi, params: HeadParams, mode: str = EVAL, rng=None) -> Tensor:
    """Per-dimension scale vector(s): affine -> softmax over hidden units -> affine."""
    h, vec = _rows(psi)
    (W0, b0), (W1, b1) = params.head("eta_feat")
    h = softmax(affine(h, W0, b0), axis=-1)
    return _squeeze(affine(h, W1, b1), vec)


def pn_prototype(support) -> Tensor:
    """Mean over the sample axis (second to last)."""
    support = as_tensor(support)
    if support.ndim < 2 or support.shape[-2] == 0:
        raise UsageError(f"prototype needs at least one support row, got shape {support.shape}")
    return tsum(support, axis=-2) * (1.0 / support.shape[-2])


def pn_score(query, prototype, s: float) -> Tensor:
    if not s > 0:
        raise ConfigurationError(f"distance scale must be positive, got {s}")
    return -sq_euclidean(query, prototype) / s


def attention_from_embeddings(u, v) -> Tensor:
    """Softmax over samples of ``u_i . v`` (u: (..., k, h), v: (..., h))."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"attention embeddings {u.shape} and {v.shape} differ in width")
    v = reshape(v, v.shape[:-1] + (1, v.shape[-1]))
    return softmax(tsum(mul(u, v), axis=-1), axis=-1)


def sample_attention(support, psi, params: HeadParams, mode: str = EVAL, rng=None) -> Tensor:
    """Attention weights over support rows; (k, d_v) -> (k,) or (n, k, d_v) -> (n, k)."""
    support = as_tensor(support)
    lead = support.shape[:-1]
    flat = reshape(support, (int(np.prod(lead)), support.shape[-1]))
    u = gamma_vis(flat, params, mode, rng)
    u = reshape(u, lead + (u.shape[-1],))
    v = gamma_sem(psi, params, mode, rng)
    return attention_from_embeddings(u, v)


def sampleatt_prototype(support, weights) -> Tensor:
    support, weights = as_tensor(support), as_tensor(weights)
    if weights.shape != support.shape[:-1]:
        raise DimensionError(f"{weights.shape} weights for support of shape {support.shape}")
    w = reshape(weights, weights.shape + (1,))
    return tsum(mul(w, support), axis=-2)


def prior_prototype(theta_base, psi, params: HeadParams, mode: str = EVAL, rng=None, scale=None) -> Tensor:
    """``alpha * theta_base + (1 - alpha) * tau_prior(psi)``; the prior is
    multiplied by ``scale`` when given."""
    alpha = params.config.alpha
    if alpha == 1.0:
        return as_tensor(theta_base)
    prior = tau_prior(psi, params, mode, rng)
    if scale is not None:
        prior = mul(scale, prior)
    if alpha == 0.0:
        return prior
    return as_tensor(theta_base) * alpha + prior * (1.0 - alpha)


def featatt_score(query, prototype, a, s: float) -> Tensor:
    """``-|| a*query - a*prototype ||^2 / s``."""
    a = as_tensor(a)
    if not np.any(a.data):
        logger.warning("feature attention is all zeros; every score collapses to 0")
    return pn_score(mul(a, query), mul(a, prototype), s)


def combined_prototype(support, psi, params: HeadParams, mode: str = EVAL, rng=None) -> Tensor:
    weights = sample_attention(support, psi, params, mode, rng)
    theta = sampleatt_prototype(support, weights)
    a = feature_attention(psi, params, mode, rng)
    scale = a if params.config.scale_prior else None
    return prior_prototype(mul(a, theta), psi, params, mode, rng, scale=scale)


@dataclass
class Prototypes:
    prototypes: Tensor  # (n, d_v)
    scales: Tensor | None = None  # (n, d_v) feature attention
    weights: Tensor | None = None  # (n, k) sample attention


def class_prototypes(support, psi, params: HeadParams, variant: str, mode: str = EVAL, rng=None) -> Prototypes:
    """Prototypes for support of shape (n, k, d_v) and embeddings (n, d_e)."""
    check_variant(variant)
    support = as_tensor(support)
    weights = scales = None
    if variant in _USES_SAMPLE_ATT:
        weights = sample_attention(support, psi, params, mode, rng)
        base = sampleatt_prototype(support, weights)
    else:
        base = pn_prototype(support)
    if variant == "pn":
        return Prototypes(base)
    if variant in _USES_FEAT_ATT:
        scales = feature_attention(psi, params, mode, rng)
        base = mul(scales, base)
    prior_scale = scales if (scales is not None and params.config.scale_prior) else None
    theta = prior_prototype(base, psi, params, mode, rng, scale=prior_scale)
    return Prototypes(theta, scales, weights)


def score_queries(queries, protos: Prototypes, s: float) -> tuple[Tensor, Tensor]:
    """Return ``(logits, distances)``, both of shape (n_query, n)."""
    q = np.asarray(queries, dtype=np.float64)
    theta = protos.prototypes
    n, d = theta.shape
    q3 = q.reshape(q.shape[0], 1, d)
    if protos.scales is None:
        lhs = q3
    else:
        lhs = mul(q3, reshape(protos.scales, (1, n, d)))
    dist = sq_euclidean(lhs, reshape(theta, (1, n, d)))
    return -dist / s, dist


@dataclass
class ScoreMatrix:
    """Query-by-class scores.

    ``predicted`` is the argmin of the unscaled distances (lowest index on
    ties), which equals the argmax of ``logits`` for any positive scale.
    """

    logits: np.ndarray
    predicted: np.ndarray
    attention: np.ndarray | None = field(default=None, repr=False)
    feature_scales: np.ndarray | None = field(default=None, repr=False)


def episode_logits_tensor(episode, params: HeadParams, variant: str, mode: str = EVAL, rng=None):
    protos = class_prototypes(episode.support_features, episode.class_embeddings, params, variant, mode, rng)
    logits, dist = score_queries(episode.query_features, protos, params.config.dist_scale)
    return logits, dist, protos


def episode_logits(episode, params: HeadParams, variant: str, mode: str = EVAL, rng=None) -> ScoreMatrix:
    logits, dist, protos = episode_logits_tensor(episode, params, variant, mode, rng)
    return ScoreMatrix(
        logits=logits.data,
        predicted=np.argmin(dist.data, axis=1),
        attention=None if protos.weights is None else protos.weights.data,
        feature_scales=None if protos.scales is None else protos.scales.data,
    )


def _fmt_config_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def save_checkpoint(path: str | PathLike, params: HeadParams, variant: str) -> None:
    """Text checkpoint; parameter values are written as hex floats."""
    lines = [f"format={CHECKPOINT_FORMAT}", f"config.variant={check_variant(variant)}", f"config.seed={params.seed}"]
    for f in fields(HeadConfig):
        lines.append(f"config.{f.name}={_fmt_config_value(getattr(params.config, f.name))}")
    for name, p in params.params.items():
        lines.append(f"param.{name}.shape={','.join(str(n) for n in p.data.shape)}")
        lines.append(f"param.{name}.data=" + " ".join(float(v).hex() for v in p.data.ravel()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_config_value(name: str, raw: str):
    kind = {f.name: f.type for f in fields(HeadConfig)}[name]
    if name == "tau_hidden":
        return tuple(int(x) for x in raw.split(",") if x)
    if name == "scale_prior":
        return raw == "true"
    if kind in ("int",):
        return int(raw)
    return float(raw)


def load_checkpoint(path: str | PathLike) -> tuple[HeadParams, str]:
    """Return ``(params, variant)``."""
    with open(path, encoding="utf-8") as fh:
        items = {}
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"checkpoint line {lineno}: expected key=value")
            items[key] = value
    if items.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"not a checkpoint (format={items.get('format')!r})")
    try:
        cfg_kwargs = {f.name: _parse_config_value(f.name, items[f"config.{f.name}"]) for f in fields(HeadConfig)}
        variant = check_variant(items["config.variant"])
        seed = int(items["config.seed"])
        cfg = HeadConfig(**cfg_kwargs)
        params = OrderedDict()
        for head, layers in _layer_dims(cfg).items():
            for i, (fan_in, fan_out) in enumerate(layers):
                for suffix, shape in (("weight", (fan_in, fan_out)), ("bias", (fan_out,))):
                    name = f"{head}.{i}.{suffix}"
                    stored = tuple(int(x) for x in items[f"param.{name}.shape"].split(","))
                    if stored != shape:
                        raise FormatError(f"{name}: stored shape {stored} != expected {shape}")
                    values = np.array([float.fromhex(t) for t in items[f"param.{name}.data"].split()], dtype=np.float64)
                    if values.size != int(np.prod(shape)):
                        raise FormatError(f"{name}: {values.size} values for shape {shape}")
                    params[name] = Parameter(values.reshape(shape), name)
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing entry {exc.args[0]!r}") from None
    except ValueError as exc:
        if isinstance(exc, (FormatError, ConfigurationError)):
            raise
        raise FormatError(f"malformed checkpoint value: {exc}") from None
    return HeadParams(cfg, params, seed), variant
