"""scikit-learn compatible wrappers.

:class:`SemanticMetaLearner` meta-trains the heads on many base classes.
:class:`PrototypeClassifier` turns trained heads into an ordinary classifier:
``fit`` on a support set synthesizes prototypes, ``predict`` scores queries.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .databank import FeatureBank, split_view
from .episodes import NoiseConfig
from .errors import ConfigurationError, MissingEmbeddingError
from .evaluation import EvalResult, evaluate
from .gradcore import Tensor, softmax
from .model import HeadConfig, HeadParams, Prototypes, check_variant, class_prototypes, score_queries
from .semstore import EmbeddingTable
from .trainer import TrainConfig, train


def _as_table(class_embeddings, d_e=None) -> EmbeddingTable:
    if isinstance(class_embeddings, EmbeddingTable):
        return class_embeddings
    if class_embeddings is None:
        raise ConfigurationError("class embeddings are required for semantic variants")
    entries = {str(k): np.asarray(v, dtype=np.float64) for k, v in dict(class_embeddings).items()}
    if d_e is None:
        d_e = len(next(iter(entries.values()))) if entries else 1
    return EmbeddingTable(d_e, entries)


def bank_from_arrays(X, y, validation_fraction: float = 0.0, random_state: int = 0) -> FeatureBank:
    """Group rows of ``X`` by label; hold out a fraction of *classes* for validation."""
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=False)
    labels = list(dict.fromkeys(str(v) for v in y))
    y = np.array([str(v) for v in y])
    n_val = int(round(validation_fraction * len(labels)))
    val = set(np.random.default_rng(random_state).permutation(labels)[:n_val].tolist()) if n_val else set()
    return FeatureBank.from_arrays(
        X.shape[1], [(lab, "val" if lab in val else "train", X[y == lab]) for lab in labels]
    )


class SemanticMetaLearner(BaseEstimator):
    """Episodic meta-training of the semantic attention heads.

    ``fit`` accepts either a :class:`FeatureBank` (its train/val splits are
    used) or a feature matrix with one label per row, in which case
    ``validation_fraction`` of the classes are held out for model selection.
    ``class_embeddings`` maps class names to vectors (or is an
    :class:`EmbeddingTable`).
    """

    def __init__(
        self,
        variant="combined",
        ways=5,
        shots=1,
        queries=15,
        alpha=0.5,
        dist_scale=32.0,
        hidden=32,
        epochs=200,
        episodes_per_epoch=100,
        val_episodes=600,
        lr=0.02,
        momentum=0.9,
        weight_decay=0.0005,
        lr_halving_period_epochs=40,
        noise=False,
        min_clean=3,
        noise_prob=0.5,
        validation_fraction=0.2,
        random_state=0,
    ):
        self.variant = variant
        self.ways = ways
        self.shots = shots
        self.queries = queries
        self.alpha = alpha
        self.dist_scale = dist_scale
        self.hidden = hidden
        self.epochs = epochs
        self.episodes_per_epoch = episodes_per_epoch
        self.val_episodes = val_episodes
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_halving_period_epochs = lr_halving_period_epochs
        self.noise = noise
        self.min_clean = min_clean
        self.noise_prob = noise_prob
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _noise(self) -> NoiseConfig:
        return NoiseConfig(bool(self.noise), self.min_clean, self.noise_prob)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            episodes_per_epoch=self.episodes_per_epoch,
            val_episodes=self.val_episodes,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_halving_period_epochs=self.lr_halving_period_epochs,
            ways=self.ways,
            shots=self.shots,
            queries=self.queries,
            variant=check_variant(self.variant),
            noise=self._noise(),
            seed=self.random_state,
            alpha=self.alpha,
            dist_scale=self.dist_scale,
            hidden=self.hidden,
        )

    def _bank(self, X, y):
        if isinstance(X, FeatureBank):
            return X
        if y is None:
            raise ConfigurationError("labels are required when X is an array")
        return bank_from_arrays(X, y, self.validation_fraction, self.random_state)

    def fit(self, X, y=None, class_embeddings=None):
        bank = self._bank(X, y)
        table = None if self.variant == "pn" and class_embeddings is None else _as_table(class_embeddings)
        self.params_, self.log_ = train(bank, table, self.train_config())
        self.table_ = table
        self.n_features_in_ = bank.d_v
        return self

    def evaluate(self, X, y=None, class_embeddings=None, split="test", n_tasks=10000, seed=0) -> EvalResult:
        """Few-shot accuracy on sampled tasks drawn from ``X``.

        With a FeatureBank only classes tagged ``split`` are used; arrays are
        used whole.
        """
        check_is_fitted(self, "params_")
        if isinstance(X, FeatureBank):
            view = split_view(X, split)
        else:
            X, y = check_X_y(X, y, dtype=np.float64, y_numeric=False)
            view = bank_from_arrays(X, y)
        table = self.table_ if class_embeddings is None else _as_table(class_embeddings)
        return evaluate(
            view, table, self.params_, self.variant, self.ways, self.shots, self.queries,
            n_tasks=n_tasks, noise=self._noise(), seed=seed,
        )

    def make_classifier(self, class_embeddings=None) -> "PrototypeClassifier":
        check_is_fitted(self, "params_")
        emb = self.table_ if class_embeddings is None else class_embeddings
        return PrototypeClassifier(params=self.params_, variant=self.variant, class_embeddings=emb)


class PrototypeClassifier(ClassifierMixin, BaseEstimator):
    """Nearest-prototype classifier synthesized from a support set.

    Each class keeps its own support rows, so classes may have different
    numbers of shots.  ``class_embeddings`` must cover every label seen in
    ``fit`` unless ``variant='pn'``.
    """

    def __init__(self, params: HeadParams | None = None, variant="combined", class_embeddings=None):
        self.params = params
        self.variant = variant
        self.class_embeddings = class_embeddings

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=False)
        check_variant(self.variant)
        if self.params is None:
            if self.variant != "pn":
                raise ConfigurationError("semantic variants need trained params")
            params = HeadParams.init(HeadConfig(d_v=X.shape[1], d_e=1, alpha=1.0, dist_scale=1.0))
        else:
            params = self.params
            if params.config.d_v != X.shape[1]:
                raise ConfigurationError(f"params expect {params.config.d_v} features, got {X.shape[1]}")
        self.classes_ = np.unique(y)
        table = None if self.variant == "pn" else _as_table(self.class_embeddings)
        protos, scales, weights = [], [], []
        for label in self.classes_:
            support = X[y == label][None]
            if table is not None:
                try:
                    psi = table[str(label)][None]
                except MissingEmbeddingError as exc:
                    raise ConfigurationError(f"no class embedding for label {label!r}") from exc
            else:
                psi = np.zeros((1, 1))
            p = class_prototypes(support, psi, params, self.variant)
            protos.append(p.prototypes.data[0])
            scales.append(None if p.scales is None else p.scales.data[0])
            weights.append(None if p.weights is None else p.weights.data[0])
        self.prototypes_ = np.stack(protos)
        self.feature_scales_ = None if scales[0] is None else np.stack(scales)
        self.support_weights_ = weights if weights[0] is not None else None
        self.params_ = params
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "prototypes_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        scales = None if self.feature_scales_ is None else Tensor(self.feature_scales_)
        protos = Prototypes(Tensor(self.prototypes_), scales)
        logits, _ = score_queries(X, protos, self.params_.config.dist_scale)
        return logits.data

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=-1).data

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
