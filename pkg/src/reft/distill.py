"""One-shot, importance-weighted client-to-server knowledge distillation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import PublicDataset
from .nn.losses import log_softmax, softmax
from .nn.network import Network
from .nn.optim import OptimizerState, adam_step
from .nn.training import TrainingDiverged
from .resources import BandwidthLedger


class NothingToDistill(ValueError):
    pass


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 4.0
    mode: str = "kl"
    steps: int = 200
    batch_size: int = 512
    lr: float = 1e-3
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.mode not in ("kl", "l2"):
            raise ValueError(f"unknown distillation loss {self.mode!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.optimizer != "adam":
            raise ValueError("distillation uses adam")


@dataclass
class LogitMatrix:
    """Per public sample, per class outputs.

    Classes outside ``coverage`` are absent and stored as NaN so they can never
    be mistaken for a real zero logit.
    """

    values: np.ndarray
    coverage: np.ndarray
    client_id: str = ""

    def __post_init__(self) -> None:
        self.coverage = np.asarray(self.coverage, dtype=bool)
        if self.values.ndim != 2 or self.values.shape[1] != self.coverage.size:
            raise ValueError("logit matrix and coverage disagree on the class count")
        if not self.coverage.any():
            raise ValueError("a logit matrix must cover at least one class")
        if not np.isfinite(self.values[:, self.coverage]).all():
            raise ValueError("non-finite logits")
        if not np.isnan(self.values[:, ~self.coverage]).all():
            self.values = np.array(self.values, dtype=np.result_type(self.values, np.float32))
            self.values[:, ~self.coverage] = np.nan

    @property
    def n_present(self) -> int:
        """Number of transmitted logits (absent classes are not sent)."""
        return int(self.values.shape[0] * self.coverage.sum())

    def masked(self) -> np.ma.MaskedArray:
        return np.ma.MaskedArray(self.values, np.broadcast_to(~self.coverage, self.values.shape))


@dataclass
class ImportanceWeights:
    weights: np.ndarray  # (n_classes, n_clients)
    covered: np.ndarray  # (n_classes,)
    client_ids: tuple[str, ...] = ()


@dataclass
class ServerState:
    """Everything the server holds: no private labeled data by construction."""

    global_net: Network
    public: PublicDataset
    config: DistillConfig = field(default_factory=DistillConfig)
    ledger: BandwidthLedger = field(default_factory=BandwidthLedger)
    seed: int = 0


def compute_importance_weights(
    counts: np.ndarray, client_ids: Sequence[str] = ()
) -> ImportanceWeights:
    """I[t, c] = N[c, t] / sum_c N[c, t] for counts shaped (n_clients, n_classes)."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or (counts < 0).any():
        raise ValueError("counts must be a non-negative (clients, classes) matrix")
    per_class = counts.T
    totals = per_class.sum(axis=1)
    covered = totals > 0
    weights = np.zeros_like(per_class)
    weights[covered] = per_class[covered] / totals[covered, None]
    return ImportanceWeights(weights, covered, tuple(client_ids))


def client_logits(
    net: Network,
    public: PublicDataset,
    coverage: np.ndarray | Iterable[int],
    client_id: str = "",
) -> LogitMatrix:
    """Score every public sample once with the client model."""
    cov = np.asarray(list(coverage) if not isinstance(coverage, np.ndarray) else coverage)
    if cov.dtype != bool:
        mask = np.zeros(net.n_outputs, dtype=bool)
        mask[cov.astype(int)] = True
        cov = mask
    z = net.predict_logits(public.x, batch_size=max(len(public), 1)).astype(np.float32)
    z[:, ~cov] = np.nan
    return LogitMatrix(z, cov, client_id)


def aggregate_teacher_logits(mats: Sequence[LogitMatrix], w: ImportanceWeights) -> LogitMatrix:
    """Importance-weighted teacher logits, renormalized over clients covering each class."""
    if not mats:
        raise NothingToDistill("no client logits to aggregate")
    n, t = mats[0].values.shape
    if w.weights.shape != (t, len(mats)):
        raise ValueError(f"importance weights have shape {w.weights.shape}, expected {(t, len(mats))}")
    for m in mats:
        if m.values.shape != (n, t):
            raise ValueError("client logit matrices cover different public sets")
    present = np.stack([m.coverage for m in mats], axis=1)  # (t, clients)
    eff = np.where(present, w.weights, 0.0)
    norm = eff.sum(axis=1)
    covered = norm > 0
    if not covered.any():
        raise NothingToDistill("no class is covered by any client")
    coef = np.zeros_like(eff)
    coef[covered] = eff[covered] / norm[covered, None]
    z = np.zeros((n, t), dtype=np.float64)
    for c, m in enumerate(mats):
        z += np.where(m.coverage, m.values.astype(np.float64), 0.0) * coef[:, c]
    z[:, ~covered] = np.nan
    return LogitMatrix(z.astype(np.float32), covered, "teacher")


def kd_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    cfg: DistillConfig = DistillConfig(),
    coverage: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Distillation loss over covered classes and its gradient wrt the student logits.

    ``kl``: tau^2 * mean_i sum_t p log(p/q) with p, q the tau-softened teacher and
    student distributions.  ``l2``: mean squared logit difference.
    """
    tau = cfg.temperature
    if not tau > 0:
        raise ValueError("temperature must be positive")
    s = np.asarray(student_logits, dtype=np.float64)
    tl = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != tl.shape:
        raise ValueError(f"student {s.shape} and teacher {tl.shape} shapes differ")
    cov = np.ones(s.shape[1], bool) if coverage is None else np.asarray(coverage, bool)
    n = s.shape[0]
    grad = np.zeros_like(s)
    if n == 0:
        return 0.0, grad.astype(np.asarray(student_logits).dtype)
    sc, tc = s[:, cov], tl[:, cov]
    if cfg.mode == "l2":
        d = sc - tc
        loss = float(np.mean(d * d))
        grad[:, cov] = 2.0 * d / d.size
    else:
        logp = log_softmax(tc / tau)
        logq = log_softmax(sc / tau)
        p = np.exp(logp)
        loss = float(tau * tau * np.sum(p * (logp - logq)) / n)
        grad[:, cov] = tau * (softmax(sc / tau) - p) / n
    return loss, grad.astype(np.asarray(student_logits).dtype)


def distill(
    server: ServerState,
    teacher: LogitMatrix,
    rng: np.random.Generator | None = None,
) -> tuple[Network, list[float]]:
    """Train a copy of the global model against fixed teacher logits.

    Runs ``steps`` Adam minibatch steps on the public set; the teacher logits are
    never recomputed.  Returns the student and its per-step loss.
    """
    cfg = server.config
    if not teacher.coverage.any():
        raise NothingToDistill("teacher covers no class")
    if len(teacher.values) != len(server.public):
        raise ValueError("teacher logits do not match the public set")
    rng = rng if rng is not None else np.random.default_rng(server.seed)
    student = server.global_net.copy()
    params = student.parameters()
    state = OptimizerState.for_params("adam", params)
    x, z = server.public.x, teacher.values
    n = len(x)
    bs = min(cfg.batch_size, n)
    history = []
    for step in range(cfg.steps):
        idx = np.sort(rng.choice(n, size=bs, replace=False)) if bs < n else np.arange(n)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, g = kd_loss(student.forward(x[idx]), z[idx], cfg, teacher.coverage)
        if not math.isfinite(loss):
            raise TrainingDiverged("distillation loss diverged", cfg.lr, step)
        grads = student.backward(g)
        adam_step(params, grads, state, cfg.lr)
        history.append(loss)
    student.clear_caches()
    return student, history
