"""scikit-learn style wrappers around the engine and the federated simulator.

``X`` may be 2-D ``(n, features)`` when ``input_shape`` is given (rows are
reshaped), or already shaped ``(n, *input_shape)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledDataset, PartitionSpec, PublicDataset, dirichlet_partition
from .distill import DistillConfig
from .federated import STRATEGIES, RunReport, simulate
from .nn.losses import softmax
from .nn.network import Network
from .nn.training import TrainConfig, train_supervised
from .nn.zoo import MODEL_IDS, build_model
from .pruning import HardwareProfile
from .resources import CostModel


def _shape_samples(X: np.ndarray, input_shape: Sequence[int] | None) -> np.ndarray:
    if input_shape is None:
        return X
    shape = tuple(int(d) for d in input_shape)
    if X.shape[1:] == shape:
        return X
    if int(np.prod(X.shape[1:])) != int(np.prod(shape)):
        raise ValueError(f"samples of shape {X.shape[1:]} cannot be viewed as {shape}")
    return X.reshape((len(X),) + shape)


class _NetMixin(ClassifierMixin):
    def _check_X(self, X, *, reset: bool) -> np.ndarray:
        X = check_array(X, dtype=np.float32, allow_nd=True)
        if reset:
            self.n_features_in_ = int(np.prod(X.shape[1:]))
        elif int(np.prod(X.shape[1:])) != self.n_features_in_:
            raise ValueError(
                f"X has {int(np.prod(X.shape[1:]))} features per sample, "
                f"but this estimator was fitted with {self.n_features_in_}"
            )
        return np.ascontiguousarray(_shape_samples(X, self.input_shape))

    def _fit_labels(self, X, y) -> tuple[np.ndarray, np.ndarray]:
        X, y = check_X_y(X, y, dtype=np.float32, allow_nd=True)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least two classes")
        return self._check_X(X, reset=True), encoded.astype(np.int64)

    def _model(self) -> Network:
        raise NotImplementedError

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        return self._model().predict_logits(self._check_X(X, reset=False))

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X) -> np.ndarray:
        best = self.decision_function(X).argmax(axis=1)
        return self.classes_[best]


class NetworkClassifier(_NetMixin, BaseEstimator):
    """A single zoo network trained centrally."""

    def __init__(
        self,
        model: str = "cnn-small",
        input_shape: Sequence[int] | None = None,
        width: float = 1.0,
        optimizer: str = "sgd-momentum",
        schedule: str = "cosine",
        lr_max: float = 0.05,
        lr_min: float = 0.005,
        momentum: float = 0.9,
        weight_decay: float = 3e-4,
        batch_size: int = 16,
        epochs: int = 10,
        random_state: int = 0,
    ):
        self.model = model
        self.input_shape = input_shape
        self.width = width
        self.optimizer = optimizer
        self.schedule = schedule
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            self.optimizer, self.schedule, self.lr_max, self.lr_min, self.momentum,
            self.weight_decay, self.batch_size, self.epochs, self.random_state,
        )

    def fit(self, X, y):
        if self.model not in MODEL_IDS:
            raise ValueError(f"unknown model {self.model!r}")
        cfg = self._train_config()
        X, y = self._fit_labels(X, y)
        self.network_ = build_model(self.model, X.shape[1:], len(self.classes_), self.width, seed=self.random_state)
        self.loss_curve_ = train_supervised(
            self.network_, X, y, cfg, np.random.default_rng([self.random_state, 2])
        )
        return self

    def _model(self) -> Network:
        return self.network_


class FederatedClassifier(_NetMixin, BaseEstimator):
    """Simulated federation over a Dirichlet split of the training set.

    The fitted ``network_`` is the server model: the distilled student for
    ``reft``/``static`` or the averaged model for ``fedavg``.  ``report_`` holds
    the full run report including the bandwidth ledger.  Without ``X_public``
    the unlabeled training inputs double as the public set.
    """

    def __init__(
        self,
        strategy: str = "reft",
        client_gflops: Sequence[float] = (10, 20, 40, 60, 100),
        f_lambda_gflops: float | None = 100.0,
        alpha: float = 1.0,
        min_shard: int = 8,
        model: str = "cnn-small",
        input_shape: Sequence[int] | None = None,
        rounds: int = 1,
        lr_max: float = 0.05,
        lr_min: float = 0.005,
        batch_size: int = 16,
        epochs: int = 10,
        temperature: float = 4.0,
        distill_mode: str = "kl",
        distill_steps: int = 200,
        distill_batch_size: int = 512,
        distill_lr: float = 1e-3,
        bits: int = 32,
        threads: int = 1,
        random_state: int = 0,
    ):
        self.strategy = strategy
        self.client_gflops = client_gflops
        self.f_lambda_gflops = f_lambda_gflops
        self.alpha = alpha
        self.min_shard = min_shard
        self.model = model
        self.input_shape = input_shape
        self.rounds = rounds
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.batch_size = batch_size
        self.epochs = epochs
        self.temperature = temperature
        self.distill_mode = distill_mode
        self.distill_steps = distill_steps
        self.distill_batch_size = distill_batch_size
        self.distill_lr = distill_lr
        self.bits = bits
        self.threads = threads
        self.random_state = random_state

    def fit(self, X, y, X_public=None):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not len(self.client_gflops):
            raise ValueError("client_gflops must name at least one client")
        X, y = self._fit_labels(X, y)
        public = X if X_public is None else self._check_X(X_public, reset=False)
        n_classes = len(self.classes_)
        profiles = [
            HardwareProfile(f"c{i + 1:02d}", float(g) * 1e9) for i, g in enumerate(self.client_gflops)
        ]
        spec = PartitionSpec(len(profiles), self.alpha, self.random_state, self.min_shard)
        shards = dirichlet_partition(LabeledDataset(X, y, n_classes), spec)
        base = build_model(self.model, X.shape[1:], n_classes, seed=np.random.default_rng([self.random_state, 1]))
        f_lambda = None if self.f_lambda_gflops is None else float(self.f_lambda_gflops) * 1e9
        self.report_: RunReport = simulate(
            self.strategy,
            profiles,
            shards,
            LabeledDataset(X, y, n_classes),
            base,
            public=PublicDataset(public),
            f_lambda=f_lambda,
            train=TrainConfig(lr_max=self.lr_max, lr_min=self.lr_min, batch_size=self.batch_size, epochs=self.epochs),
            distill_cfg=DistillConfig(
                self.temperature, self.distill_mode, self.distill_steps, self.distill_batch_size, self.distill_lr
            ),
            cost=CostModel(self.bits),
            rounds=self.rounds,
            seed=self.random_state,
            threads=self.threads,
        )
        self.network_ = self.report_.global_net
        return self

    def _model(self) -> Network:
        return self.network_
