"""Acceptance gate: one test per criterion, summarized at the end of the run."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from helpers import max_rel_error, numeric_grads, random_network, tiny_cnn
from reft.cli import EXIT_OK, main
from reft.config import parse_config
from reft.data import PartitionSpec, dirichlet_partition_indices
from reft.distill import DistillConfig, compute_importance_weights, kd_loss
from reft.federated import ArchitectureMismatchError, run_strategy
from reft.nn import build_model, count_flops, count_params, serialized_size
from reft.nn.losses import cross_entropy_loss
from reft.pruning import apply_mask, apply_speedup, generate_mask, prune_network, variable_pruning_ratio
from reft.resources import DOWN, LOGITS, UP, WEIGHTS, bandwidth_weights

G = 1e9
CONFIGS = Path(__file__).resolve().parent.parent / "configs"
PROFILE = [10, 20, 40, 60, 100]


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def config(name, **overrides):
    return parse_config(CONFIGS / name, overrides or None)


@criterion(1, "variable pruning ratio worked examples")
def test_c01_ratio_worked_examples():
    t0 = time.perf_counter()
    assert [variable_pruning_ratio(f * G, 100 * G) for f in PROFILE] == [0.9, 0.8, 0.6, 0.4, 0.0]
    assert [variable_pruning_ratio(f * G, 50 * G) for f in PROFILE] == [0.8, 0.6, 0.2, 0.0, 0.0]
    assert time.perf_counter() - t0 < 1


@criterion(2, "per-client FedAvg bandwidth reconciles with the closed form")
def test_c02_bandwidth_closed_form():
    params = 9_407_500  # 37.63 MB of 32-bit weights
    per_client = 2 * bandwidth_weights(1, 977, params, 32)
    assert per_client == 2 * 977 * 37_630_000
    assert abs(per_client / 1e9 - 73.5) <= 0.01 * 73.5

    cfg = config("fedavg-5clients.json", rounds=3, train={"epochs": 0})
    report = run_strategy(cfg)
    n_params = count_params(report.global_net)
    closed = 2 * bandwidth_weights(len(cfg.clients), cfg.rounds, n_params, cfg.cost.bits)
    assert report.ledger.total() == closed
    assert sum(e.bytes for e in report.ledger.entries) == closed


@criterion(3, "VGG-16 structure and pruning at ratio 0.9")
def test_c03_vgg16_reproduction():
    net = build_model("vgg16", (3, 32, 32), 10)
    assert abs(count_params(net) - 33.6e6) <= 0.05 * 33.6e6
    assert abs(count_flops(net) - 0.33e9) <= 0.10 * 0.33e9
    pruned, _ = prune_network(net, 0.9)
    assert count_params(pruned) <= 0.6e6
    assert serialized_size(pruned) <= 2.5e6


@criterion(4, "reconfigured network equals zero-masked original")
def test_c04_mask_speedup_equivalence():
    rng = np.random.default_rng(2024)
    pairs, residual, worst = 0, 0, 0.0
    while pairs < 120:
        net = random_network(rng)
        ratio = float(rng.uniform(0.0, 0.95))
        mask = generate_mask(net, ratio)
        x = rng.normal(size=(3,) + net.input_shape).astype(np.float32)
        diff = np.max(np.abs(apply_speedup(net, mask).forward(x) - apply_mask(net, mask).forward(x)))
        worst = max(worst, float(diff))
        residual += any(type(layer).__name__ == "ResidualAdd" for layer in net.layers)
        pairs += 1
    for model in ("resnet8", "cnn-small"):
        net = build_model(model, (3, 8, 8), 4, seed=5)
        for ratio in (0.3, 0.6, 0.9):
            mask = generate_mask(net, ratio)
            x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
            diff = np.max(np.abs(apply_speedup(net, mask).forward(x) - apply_mask(net, mask).forward(x)))
            worst = max(worst, float(diff))
    assert residual >= 20
    assert worst < 1e-5


@criterion(5, "finite-difference gradient check in float64")
def test_c05_gradient_check():
    net = tiny_cnn(np.float64)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(4, 2, 6, 6)), np.array([0, 1, 2, 1])
    for p in net.parameters():
        p += rng.normal(scale=0.05, size=p.shape)
    _, g = cross_entropy_loss(net.forward(x), y)
    analytic = net.backward(g)
    assert max_rel_error(analytic, numeric_grads(net, x, y, h=1e-5)) < 1e-4


@criterion(6, "tau^2 KL gradient at tau=100 aligns with the L2 gradient")
def test_c06_high_temperature_limit():
    rng = np.random.default_rng(6)
    hot, l2 = DistillConfig(temperature=100.0), DistillConfig(mode="l2")
    worst = 1.0
    for _ in range(1000):
        t = int(rng.integers(2, 11))
        s, z = rng.normal(size=(1, t)), rng.normal(size=(1, t))
        s -= s.mean()
        z -= z.mean()
        a, b = kd_loss(s, z, hot)[1].ravel(), kd_loss(s, z, l2)[1].ravel()
        worst = min(worst, float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b))))
    assert worst > 0.999


@criterion(7, "importance weights sum to one and ignore count scale")
def test_c07_importance_weights():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        shape = (int(rng.integers(1, 8)), int(rng.integers(1, 12)))
        counts = rng.integers(0, 50, size=shape) * (rng.random(shape) < 0.7)
        w = compute_importance_weights(counts)
        assert np.all(np.abs(w.weights[w.covered].sum(axis=1) - 1.0) <= 1e-9)
        assert np.all(w.weights[~w.covered] == 0)
        scaled = compute_importance_weights(counts * int(rng.integers(2, 1000)))
        np.testing.assert_allclose(scaled.weights, w.weights, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(scaled.covered, w.covered)


@criterion(8, "REFT is one-shot and at least 10x cheaper than FedAvg")
def test_c08_one_shot_communication():
    reft = run_strategy(config("reft-5clients.json"))
    n = len(reft.clients)
    assert len(reft.ledger.select(direction=DOWN, kind=WEIGHTS)) == n
    assert len(reft.ledger.select(direction=UP, kind=LOGITS)) == n
    assert len(reft.ledger) == 2 * n

    fedavg = run_strategy(config("fedavg-5clients.json", rounds=50, train={"lr_max": 0.05, "lr_min": 0.005, "epochs": 1}))
    assert len(fedavg.ledger) == 2 * n * 50
    reft_pc = reft.summary()["per_client_mean_total"]
    fedavg_pc = fedavg.summary()["per_client_mean_total"]
    assert fedavg_pc >= 10 * reft_pc
    for cid, totals in reft.summary()["clients"].items():
        assert fedavg.summary()["clients"][cid]["total"] >= 10 * totals["total"]


def _strong_accuracy(report):
    accs = {c["client_id"]: c["test_acc"] for c in report.clients}
    return (accs["c4"] + accs["c5"]) / 2


@criterion(9, "variable pruning serves strong clients at least as well as static")
def test_c09_utilization_direction():
    reft, static = [], []
    for seed in (0, 1, 2):
        reft.append(_strong_accuracy(run_strategy(config("reft-5clients.json", seed=seed))))
        static.append(_strong_accuracy(run_strategy(config("static-5clients.json", seed=seed))))
    print(f"strong-client accuracy reft={np.mean(reft):.4f} static={np.mean(static):.4f}")
    assert np.mean(reft) >= np.mean(static)


@criterion(10, "heterogeneous widths: REFT completes, FedAvg raises")
def test_c10_heterogeneous_architectures():
    cfg = config("reft-5clients.json")
    clients = [dict(c, width=w) for c, w in zip(cfg.resolved()["clients"], (0.5, 1.0, 1.5, 0.75, 1.0))]
    reft = run_strategy(config("reft-5clients.json", clients=clients))
    assert reft.status == "ok"
    assert len({p["params_before"] for p in reft.plans}) == 4
    with pytest.raises(ArchitectureMismatchError) as info:
        run_strategy(config("fedavg-5clients.json", clients=clients))
    assert info.value.report.status == "aborted"
    assert len(info.value.report.ledger) == 0


@criterion(11, "Dirichlet skew: alpha 0.1 more skewed than alpha 100")
def test_c11_dirichlet_skew():
    labels = np.repeat(np.arange(10), 100)

    def max_per_class_share(alpha, seed):
        shards = dirichlet_partition_indices(labels, 10, PartitionSpec(5, alpha, seed, min_size=1))
        counts = np.stack([np.bincount(labels[idx], minlength=10) for idx in shards])
        return float((counts / counts.sum(axis=0)).max(axis=0).mean())

    skewed = np.mean([max_per_class_share(0.1, s) for s in range(200)])
    flat = np.mean([max_per_class_share(100.0, s) for s in range(200)])
    print(f"mean max per-class share alpha=0.1: {skewed:.4f}, alpha=100: {flat:.4f}")
    assert skewed > flat


@criterion(12, "run is byte-identical across repeats and thread counts")
def test_c12_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    data = json.loads((CONFIGS / "reft-5clients.json").read_text())
    data["distill"]["steps"] = 20
    cfg.write_text(json.dumps(data))
    outs = []
    for i, threads in enumerate(("1", "1", "4")):
        out = tmp_path / f"run{i}"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--threads", threads]) == EXIT_OK
        outs.append(out)
    for name in ("metrics.csv", "ledger.csv"):
        blobs = {(o / name).read_bytes() for o in outs}
        assert len(blobs) == 1, name
