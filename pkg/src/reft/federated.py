"""Three-stage REFT orchestration plus FedAvg and static-pruning baselines.

Stage 2 (local training) runs on a thread pool; everything that reduces over
clients happens after the barrier with clients sorted by id, so results do not
depend on scheduling or on the thread count.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, TypeVar

import numpy as np

from .data import (
    GaussianBlobs,
    LabeledDataset,
    PartitionSpec,
    PublicDataset,
    class_counts,
    dirichlet_partition,
    load_raw,
    public_from_raw,
)
from .distill import (
    DistillConfig,
    ServerState,
    aggregate_teacher_logits,
    client_logits,
    compute_importance_weights,
    distill,
)
from .nn.losses import per_sample_cross_entropy
from .nn.network import Network, count_flops, count_params
from .nn.training import TrainConfig, accuracy, train_supervised
from .nn.zoo import build_model
from .pruning import HardwareProfile, plan_pruning, static_pruning_ratio
from .resources import (
    DOWN,
    LOGITS,
    UP,
    WEIGHTS,
    BandwidthLedger,
    CostModel,
    modeled_baselines,
    record_transfer,
    simulated_train_time,
    training_flops,
    utilization_factor,
)

log = logging.getLogger(__name__)

STRATEGIES = ("fedavg", "static", "reft")
METRIC_COLUMNS = (
    "round",
    "client_id",
    "stage",
    "train_loss",
    "test_acc",
    "bytes_down",
    "bytes_up",
    "params",
    "flops",
    "pruning_ratio",
)
SERVER = "server"

T = TypeVar("T")


class ArchitectureMismatchError(ValueError):
    """FedAvg can only average models that share one architecture."""


def _abort(report: "RunReport", exc: Exception) -> Exception:
    """Mark ``report`` aborted and attach it to ``exc`` as ``exc.report``."""
    if getattr(exc, "report", None) is None:
        report.status = "aborted"
        report.error = f"{type(exc).__name__}: {exc}"
        log.info("run aborted: %s", report.error)
        exc.report = report
    return exc


def client_seed(run_seed: int, client_id: str) -> np.random.SeedSequence:
    """Independent stream per client, stable across processes."""
    return np.random.SeedSequence([run_seed, zlib.crc32(client_id.encode())])


@dataclass
class ClientState:
    client_id: str
    net: Network
    data: LabeledDataset
    profile: HardwareProfile
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def rng(self, round_: int = 0) -> np.random.Generator:
        return np.random.default_rng(client_seed(self.seed, self.client_id).spawn(round_ + 1)[round_])


def local_train(client: ClientState, test: LabeledDataset | None = None, round_: int = 0) -> tuple[Network, dict]:
    """Train a copy of the client model on its private shard."""
    net = client.net.copy()
    history = train_supervised(net, client.data.x, client.data.y, client.train, client.rng(round_))
    metrics = {
        "train_loss": history[-1] if history else float("nan"),
        "train_acc": accuracy(net, client.data.x, client.data.y),
        "test_acc": accuracy(net, test.x, test.y) if test is not None else float("nan"),
        "epochs": len(history),
    }
    return net, metrics


def fedavg_aggregate(models: Sequence[Network], shard_sizes: Sequence[int]) -> Network:
    """Parameter-wise mean weighted by k_c / k."""
    if not models or len(models) != len(shard_sizes):
        raise ValueError("need one shard size per model")
    arch = models[0].architecture()
    for i, m in enumerate(models[1:], 1):
        if m.architecture() != arch:
            raise ArchitectureMismatchError(
                f"model {i} does not share the architecture of model 0; "
                "FedAvg cannot aggregate heterogeneous models"
            )
    k = np.asarray(shard_sizes, dtype=np.float64)
    if (k < 0).any() or k.sum() <= 0:
        raise ValueError("shard sizes must be non-negative with a positive total")
    w = k / k.sum()
    out = models[0].copy()
    averaged = []
    for tensors in zip(*(m.parameters() for m in models)):
        acc = np.zeros(tensors[0].shape, np.float64)
        for wc, p in zip(w, tensors):
            acc += wc * p
        averaged.append(acc)
    out.set_parameters(averaged)
    return out


def client_loss(net: Network, data: LabeledDataset) -> float:
    if len(data) == 0:
        return 0.0
    return float(per_sample_cross_entropy(net.predict_logits(data.x), data.y).mean())


def global_loss(clients: Sequence[ClientState]) -> float:
    """sum_c (k_c / k) * mean client loss."""
    k = sum(len(c.data) for c in clients)
    if k == 0:
        raise ValueError("clients hold no data")
    return float(sum(len(c.data) / k * client_loss(c.net, c.data) for c in clients))


@dataclass
class RunReport:
    strategy: str
    seed: int
    status: str = "ok"
    error: str | None = None
    config: dict = field(default_factory=dict)
    plans: list[dict] = field(default_factory=list)
    clients: list[dict] = field(default_factory=list)
    central: dict = field(default_factory=dict)
    metrics: list[dict] = field(default_factory=list)
    ledger: BandwidthLedger = field(default_factory=BandwidthLedger)
    notes: list[str] = field(default_factory=list)
    global_net: Network | None = field(default=None, repr=False)
    client_nets: dict[str, Network] = field(default_factory=dict, repr=False)

    def row(self, round_: int, client_id: str, stage: str, **values) -> None:
        r = {c: "" for c in METRIC_COLUMNS}
        r.update(round=round_, client_id=client_id, stage=stage)
        r.update(values)
        self.metrics.append(r)

    def summary(self) -> dict:
        s = self.ledger.summary()
        s["per_client_mean_total"] = (
            int(round(np.mean([c["total"] for c in s["clients"].values()]))) if s["clients"] else 0
        )
        return s

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "config": self.config,
            "plans": self.plans,
            "clients": self.clients,
            "central": self.central,
            "bandwidth": self.summary(),
            "notes": self.notes,
        }


def _pmap(fn: Callable[[T], object], items: Sequence[T], threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _coverage(data: LabeledDataset) -> np.ndarray:
    return class_counts(data) > 0


def simulate(
    strategy: str,
    profiles: Sequence[HardwareProfile],
    shards: Sequence[LabeledDataset],
    test: LabeledDataset,
    base_net: Network,
    *,
    public: PublicDataset | None = None,
    client_nets: Mapping[str, Network] | None = None,
    f_lambda: float | None = None,
    train: TrainConfig = TrainConfig(),
    distill_cfg: DistillConfig = DistillConfig(),
    cost: CostModel = CostModel(),
    rounds: int = 1,
    seed: int = 0,
    threads: int = 1,
    report: RunReport | None = None,
) -> RunReport:
    """Run one strategy end to end.

    ``base_net`` is the server's initial global model.  ``client_nets`` optionally
    gives clients their own starting architectures (by id); otherwise every
    client starts from ``base_net``.  Component errors propagate unchanged with
    the partial report attached as ``exc.report``.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if len(profiles) != len(shards) or not profiles:
        raise ValueError("need one shard per client profile")
    order = sorted(range(len(profiles)), key=lambda i: profiles[i].client_id)
    profiles = [profiles[i] for i in order]
    shards = [shards[i] for i in order]
    report = report or RunReport(strategy, seed)
    report.notes.append("FLOPs count one multiply-accumulate as one FLOP; double for the 2-FLOP/MAC convention")
    try:
        if strategy == "fedavg":
            _run_fedavg(report, profiles, shards, test, base_net, client_nets, train, cost, rounds, seed, threads)
        else:
            if public is None:
                raise ValueError(f"strategy {strategy!r} needs a public dataset")
            if f_lambda is None:
                raise ValueError(f"strategy {strategy!r} needs f_lambda")
            _run_reft(
                report, strategy, profiles, shards, test, public, base_net, client_nets,
                f_lambda, train, distill_cfg, cost, seed, threads,
            )
    except Exception as exc:
        raise _abort(report, exc)
    return report


def _client_summary(p: HardwareProfile, net: Network, data: LabeledDataset, train: TrainConfig, f_static: float, metrics: dict, ratio: float) -> dict:
    flops = count_flops(net)
    return {
        "client_id": p.client_id,
        "capacity_flops": p.flops,
        "pruning_ratio": ratio,
        "params": count_params(net),
        "flops": flops,
        "shard_size": len(data),
        "class_counts": class_counts(data).tolist(),
        "train_loss": metrics["train_loss"],
        "train_acc": metrics["train_acc"],
        "test_acc": metrics["test_acc"],
        "utilization": utilization_factor(f_static, p.flops),
        "sim_train_time_s": simulated_train_time(training_flops(flops, len(data), train.epochs), p.flops),
    }


def _run_reft(
    report, strategy, profiles, shards, test, public, base_net, client_nets,
    f_lambda, train, distill_cfg, cost, seed, threads,
) -> None:
    ids = [p.client_id for p in profiles]
    ratio = static_pruning_ratio(profiles, f_lambda) if strategy == "static" else None
    starts = {i: (client_nets or {}).get(i, base_net) for i in ids}

    # stage 1: one-shot pruning of the initial weights, one download per client
    planned = plan_pruning(profiles, f_lambda, starts, ratio=ratio)
    nets = {}
    for p, (net, plan) in zip(profiles, planned):
        nets[p.client_id] = net
        report.plans.append(plan.to_dict())
        t = record_transfer(report.ledger, p.client_id, 0, DOWN, WEIGHTS, count_params(net), cost)
        report.row(0, p.client_id, "prune", bytes_down=t.bytes, params=plan.params_after,
                   flops=plan.flops_after, pruning_ratio=plan.ratio)

    # stage 2: local training (parallel)
    clients = [ClientState(i, nets[i], d, p, train, seed) for i, d, p in zip(ids, shards, profiles)]
    trained = _pmap(lambda c: local_train(c, test), clients, threads)
    f_static = min(p.flops for p in profiles)
    for c, (net, m), plan in zip(clients, trained, report.plans):
        report.client_nets[c.client_id] = net
        report.row(0, c.client_id, "train", train_loss=m["train_loss"], test_acc=m["test_acc"],
                   params=count_params(net), flops=count_flops(net), pruning_ratio=plan["ratio"])
        report.clients.append(_client_summary(c.profile, net, c.data, train, f_static, m, plan["ratio"]))

    # stage 3: each client scores the public set once and uploads its logits
    mats = []
    for c, (net, _) in zip(clients, trained):
        mat = client_logits(net, public, _coverage(c.data), c.client_id)
        t = record_transfer(report.ledger, c.client_id, 0, UP, LOGITS, mat.n_present, cost)
        report.row(0, c.client_id, "upload", bytes_up=t.bytes)
        mats.append(mat)
    weights = compute_importance_weights(np.stack([class_counts(c.data) for c in clients]), ids)
    teacher = aggregate_teacher_logits(mats, weights)
    server = ServerState(base_net, public, distill_cfg, report.ledger, seed)
    student, history = distill(server, teacher, np.random.default_rng([seed, 0x5EED]))
    acc = accuracy(student, test.x, test.y)
    report.global_net = student
    report.central = {
        "test_acc": acc,
        "distill_loss_first": history[0],
        "distill_loss_last": history[-1],
        "distill_steps": len(history),
        "teacher_classes": teacher.coverage.astype(int).tolist(),
        "params": count_params(student),
        "flops": count_flops(student),
    }
    report.row(0, SERVER, "distill", train_loss=history[-1], test_acc=acc,
               params=count_params(student), flops=count_flops(student), pruning_ratio=0.0)
    report.central["modeled_baselines"] = modeled_baselines(count_params(base_net), rounds=1, cost_model=cost)


def _run_fedavg(report, profiles, shards, test, base_net, client_nets, train, cost, rounds, seed, threads) -> None:
    if rounds < 1:
        raise ValueError("fedavg needs at least one round")
    ids = [p.client_id for p in profiles]
    starts = {i: (client_nets or {}).get(i, base_net) for i in ids}
    odd = [i for i in ids if starts[i].architecture() != base_net.architecture()]
    if odd:
        raise ArchitectureMismatchError(
            f"clients {odd} do not share the global architecture; "
            "FedAvg cannot aggregate heterogeneous models"
        )
    sizes = [len(d) for d in shards]
    f_static = min(p.flops for p in profiles)
    global_net = base_net.copy()
    for r in range(1, rounds + 1):
        if r == 1:
            local = [starts[i] for i in ids]
        else:
            local = [global_net for _ in ids]
        downs = [record_transfer(report.ledger, i, r, DOWN, WEIGHTS, count_params(n), cost) for i, n in zip(ids, local)]
        clients = [ClientState(i, n, d, p, train, seed) for i, n, d, p in zip(ids, local, shards, profiles)]
        trained = _pmap(lambda c: local_train(c, test, round_=r - 1), clients, threads)
        for c, (net, m), down in zip(clients, trained, downs):
            up = record_transfer(report.ledger, c.client_id, r, UP, WEIGHTS, count_params(net), cost)
            report.row(r, c.client_id, "train", train_loss=m["train_loss"], test_acc=m["test_acc"],
                       bytes_down=down.bytes, bytes_up=up.bytes, params=count_params(net),
                       flops=count_flops(net), pruning_ratio=0.0)
            report.client_nets[c.client_id] = net
            if r == rounds:
                report.clients.append(_client_summary(c.profile, net, c.data, train, f_static, m, 0.0))
        global_net = fedavg_aggregate([net for net, _ in trained], sizes)
        acc = accuracy(global_net, test.x, test.y)
        report.row(r, SERVER, "aggregate", test_acc=acc, params=count_params(global_net),
                   flops=count_flops(global_net), pruning_ratio=0.0)
    report.global_net = global_net
    report.central = {
        "test_acc": acc,
        "rounds": rounds,
        "params": count_params(global_net),
        "flops": count_flops(global_net),
        "modeled_baselines": modeled_baselines(count_params(base_net), rounds, cost),
    }


def build_datasets(config) -> tuple[LabeledDataset, LabeledDataset, PublicDataset]:
    """Train, test and public sets described by an ``ExperimentConfig``."""
    ds = config.dataset
    if ds.kind == "raw":
        train = load_raw(ds.train_path, ds.raw_format())
        test = load_raw(ds.test_path, ds.raw_format())
        public = public_from_raw(ds.public_path, ds.raw_format(ds.public_classes))
        return train, test, public
    blobs = GaussianBlobs(ds.classes, ds.input_shape, ds.separation, seed=config.dataset_seed)
    train = blobs.labeled(ds.train_per_class, seed=0)
    test = blobs.labeled(ds.test_per_class, seed=1)
    if ds.public_mode == "same":
        n_per = -(-ds.public_size // ds.classes)
        public = PublicDataset(blobs.labeled(n_per, seed=2).x[: ds.public_size])
    else:
        public = blobs.public(ds.public_size, seed=0)
    return train, test, public


def run_strategy(config, threads: int = 1) -> RunReport:
    """Execute the strategy described by an ``ExperimentConfig``.

    On failure the component error propagates with the partial report attached
    as ``exc.report``.
    """
    report = RunReport(config.strategy, config.seed, config=config.resolved())
    try:
        train, test, public = build_datasets(config)
        profiles = config.profiles()
        spec = PartitionSpec(
            len(profiles),
            config.partition.alpha,
            seed=config.dataset_seed,
            min_size=config.partition.min_shard,
            max_retries=config.partition.max_retries,
        )
        shards = dirichlet_partition(train, spec)
        init_seed = np.random.SeedSequence([config.seed, 1])

        def model(width: float) -> Network:
            return build_model(
                config.model, train.input_shape, train.n_classes, width, seed=np.random.default_rng(init_seed)
            )

        base = model(1.0)
        client_nets = {p.client_id: model(p.width) for p in profiles if p.width != 1.0}
    except Exception as exc:
        raise _abort(report, exc)
    return simulate(
        config.strategy,
        profiles,
        shards,
        test,
        base,
        public=public,
        client_nets=client_nets,
        f_lambda=config.f_lambda,
        train=config.train.build(),
        distill_cfg=config.distill.build(),
        cost=config.cost.build(),
        rounds=config.rounds,
        seed=config.seed,
        threads=threads,
        report=report,
    )
