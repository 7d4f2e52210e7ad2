"""scikit-learn style wrappers over the functional pipeline.

Thin adapters: hyperparameters live on the estimator, fitted state gets a
trailing underscore, and the heavy lifting stays in the functional modules.
RegionVectorizer turns (FeatureGrid, MaskSet) pairs into region vectors,
RegionClassifier trains a decoder on vector rows, and RegionRetriever
exposes the exact search index.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .core import ConfigError, RegionVector
from .decoders import (
    LabeledGroup,
    LinearDecoder,
    MlpDecoder,
    TrainConfig,
    TransformerDecoder,
    softmax,
    train,
)
from .pooling import Interpolation, PoolConfig, Reducer, Resample, encode_image
from .retrieval import build_index, query


class RegionVectorizer(BaseEstimator, TransformerMixin):
    """Pool (FeatureGrid, MaskSet) pairs into per-region vectors."""

    def __init__(
        self,
        resample: str = "upsample_features",
        reducer: str = "average",
        interpolation: str = "bilinear",
        add_grid_posemb: bool = False,
    ):
        self.resample = resample
        self.reducer = reducer
        self.interpolation = interpolation
        self.add_grid_posemb = add_grid_posemb

    def fit(self, X, y=None):
        self.config_ = PoolConfig(
            resample=Resample(self.resample),
            reducer=Reducer(self.reducer),
            interpolation=Interpolation(self.interpolation),
            add_grid_posemb=self.add_grid_posemb,
        )
        return self

    def transform(self, X):
        """X: iterable of (FeatureGrid, MaskSet); returns list of EncodeResult."""
        if not hasattr(self, "config_"):
            self.fit(X)
        return [
            encode_image(grid, masks, self.config_, image_id=i)
            for i, (grid, masks) in enumerate(X)
        ]


class RegionClassifier(BaseEstimator, ClassifierMixin):
    """Decoder training on pooled region vectors, one row per region."""

    def __init__(
        self,
        decoder: str = "linear",
        lr: float = 5e-4,
        batch: int = 32,
        epochs: int = 20,
        optimizer: str = "sgd",
        weight_decay: float = 0.0,
        patience: int = 5,
        seed: int = 0,
        hidden: int = 1000,
        blocks: int = 1,
        heads: int = 8,
    ):
        self.decoder = decoder
        self.lr = lr
        self.batch = batch
        self.epochs = epochs
        self.optimizer = optimizer
        self.weight_decay = weight_decay
        self.patience = patience
        self.seed = seed
        self.hidden = hidden
        self.blocks = blocks
        self.heads = heads

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("X must be (n, d) with aligned 1-d y")
        self.classes_ = np.unique(y)
        remap = {c: i for i, c in enumerate(self.classes_.tolist())}
        yy = np.array([remap[c] for c in y.tolist()], dtype=np.int64)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        d, C = X.shape[1], len(self.classes_)
        if self.decoder == "linear":
            self.model_ = LinearDecoder(d, C, seed=self.seed)
        elif self.decoder == "mlp":
            self.model_ = MlpDecoder(d, C, hidden=self.hidden, seed=self.seed)
        elif self.decoder == "transformer":
            self.model_ = TransformerDecoder(
                d, C, blocks=self.blocks, heads=self.heads, seed=self.seed
            )
        else:
            raise ConfigError(f"unknown decoder {self.decoder!r}")
        groups = [
            LabeledGroup(X[i : i + 1], yy[i : i + 1], w[i : i + 1])
            for i in range(len(y))
        ]
        self.result_ = train(
            self.model_,
            groups,
            TrainConfig(
                lr=self.lr,
                batch=self.batch,
                epochs=self.epochs,
                optimizer=self.optimizer,
                weight_decay=self.weight_decay,
                patience=self.patience,
                seed=self.seed,
            ),
        )
        return self

    def decision_function(self, X):
        return self.model_.forward(np.asarray(X, dtype=np.float64))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class RegionRetriever(BaseEstimator):
    """Exact max-region search over a fitted database of region vectors."""

    def __init__(self, normalize: bool = False, top_k: int = 50):
        self.normalize = normalize
        self.top_k = top_k

    def fit(self, X, y=None):
        """X: sequence of RegionVector."""
        self.index_ = build_index(list(X), normalize=self.normalize)
        return self

    def query(self, q: RegionVector | np.ndarray):
        return query(self.index_, q, top_k=self.top_k)
