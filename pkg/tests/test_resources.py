import csv
import io
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reft.nn import build_model, count_flops, count_params
from reft.pruning import prune_network
from reft.resources import (
    DOWN,
    LOGITS,
    UP,
    WEIGHTS,
    BandwidthLedger,
    CostModel,
    bandwidth_logits,
    bandwidth_weights,
    format_bytes,
    modeled_baselines,
    record_transfer,
    simulated_train_time,
    training_flops,
    transfer_bytes,
    utilization_factor,
)

RESNET8_W = 9_407_500


def test_resnet8_transfer_size():
    assert transfer_bytes(RESNET8_W, 32) / 1e6 == pytest.approx(37.63)
    assert bandwidth_weights(1, 1, RESNET8_W, 32) == 37_630_000


def test_zero_rounds_zero_bytes():
    assert bandwidth_weights(5, 0, RESNET8_W, 32) == 0
    assert bandwidth_logits(1000, 0, 32) == 0


def test_resnet8_fedavg_total_reconciles():
    per_client = 2 * bandwidth_weights(1, 977, RESNET8_W, 32)
    assert per_client == 2 * 977 * 37_630_000
    assert abs(per_client / 1e9 - 73.5) / 73.5 < 0.01


def test_logit_payload_example():
    assert bandwidth_logits(50_000 * 10, 1, 32) == 2_000_000


@given(st.integers(0, 10**7), st.integers(0, 10), st.sampled_from([8, 16, 32]))
def test_logit_bytes_linear_in_bits(logits, transfers, bits):
    assert bandwidth_logits(logits, transfers, 2 * bits) == 2 * bandwidth_logits(logits, transfers, bits)


def test_bits_validated():
    with pytest.raises(ValueError):
        CostModel(bits=12)
    with pytest.raises(ValueError):
        CostModel(logit_bits=4)
    with pytest.raises(ValueError):
        bandwidth_weights(-1, 1, 1, 32)


def test_utilization_examples():
    assert utilization_factor(5e9, 5e9) == 1.0
    assert utilization_factor(10e9, 100e9) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        utilization_factor(0, 1)


@given(st.lists(st.floats(1e6, 1e12), min_size=1, max_size=8))
def test_utilization_in_unit_interval_under_static(caps):
    f_static = min(caps)
    values = [utilization_factor(f_static, f) for f in caps]
    assert all(0 < u <= 1 for u in values)
    assert utilization_factor(f_static, f_static) == 1.0


def test_simulated_time():
    assert simulated_train_time(100e9, 10e9) == 10.0
    assert simulated_train_time(50e9, 10e9) == 5.0
    assert training_flops(10, 4, 2) == 240
    with pytest.raises(ValueError):
        simulated_train_time(1.0, 0.0)


def test_pruned_vgg_trains_much_faster():
    net = build_model("vgg16", (3, 32, 32), 10)
    pruned, _ = prune_network(net, 0.9)
    f = 50e9
    speedup = simulated_train_time(count_flops(net), f) / simulated_train_time(count_flops(pruned), f)
    assert speedup >= 4


def test_record_transfer_sizes():
    ledger = BandwidthLedger()
    t = record_transfer(ledger, "c1", 0, DOWN, WEIGHTS, 1000, CostModel(32))
    assert t.bytes == 4000 and t.bits == 32
    t = record_transfer(ledger, "c1", 0, UP, LOGITS, 1000, CostModel(32, logit_bits=8))
    assert t.bytes == 1000 and t.bits == 8
    with pytest.raises(ValueError):
        record_transfer(ledger, "c1", 0, "sideways", WEIGHTS, 1)
    with pytest.raises(ValueError):
        record_transfer(ledger, "c1", 0, UP, "gradients", 1)
    assert ledger.total() == 5000 and len(ledger) == 2


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 10**6), st.sampled_from([8, 16, 32, 64]))
def test_ledger_matches_closed_form_for_fedavg(clients, rounds, params, bits):
    ledger = BandwidthLedger()
    cost = CostModel(bits)
    for r in range(1, rounds + 1):
        for c in range(clients):
            record_transfer(ledger, f"c{c}", r, DOWN, WEIGHTS, params, cost)
            record_transfer(ledger, f"c{c}", r, UP, WEIGHTS, params, cost)
    assert len(ledger) == 2 * clients * rounds
    assert ledger.total(direction=DOWN) == bandwidth_weights(clients, rounds, params, bits)
    assert ledger.total() == 2 * bandwidth_weights(clients, rounds, params, bits)
    assert ledger.total() == sum(e.bytes for e in ledger.entries)


def test_reft_downstream_decreases_with_ratio():
    base = build_model("cnn-small", (3, 32, 32), 10)
    sizes = [transfer_bytes(count_params(prune_network(base, p)[0])) for p in (0.0, 0.2, 0.4, 0.6, 0.8)]
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


@pytest.mark.parametrize("rounds", [2, 5, 50])
def test_reft_below_fedavg_per_client(rounds):
    params = count_params(build_model("cnn-small", (3, 8, 8), 4))
    fedavg = 2 * bandwidth_weights(1, rounds, params, 32)
    reft = transfer_bytes(params) + bandwidth_logits(1024 * 4, 1, 32)
    assert reft <= fedavg


def test_ledger_csv_and_summary():
    ledger = BandwidthLedger()
    record_transfer(ledger, "b", 0, DOWN, WEIGHTS, 10)
    record_transfer(ledger, "a", 0, UP, LOGITS, 5)
    rows = list(csv.reader(io.StringIO(ledger.to_csv())))
    assert rows[0] == ["client", "round", "direction", "kind", "bytes"]
    assert rows[1] == ["b", "0", "down", "weights", "40"]
    s = ledger.summary()
    assert s["clients"] == {"a": {"downstream": 0, "upstream": 20, "total": 20},
                            "b": {"downstream": 40, "upstream": 0, "total": 40}}
    assert (s["downstream"], s["upstream"], s["total"]) == (40, 20, 60)


def test_ledger_appends_are_serialized():
    ledger = BandwidthLedger()

    def work(c):
        for r in range(200):
            record_transfer(ledger, f"c{c}", r, UP, WEIGHTS, 3)

    threads = [threading.Thread(target=work, args=(c,)) for c in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(ledger) == 1600 and ledger.total() == 1600 * 12


def test_modeled_baselines():
    rows = {r["method"]: r for r in modeled_baselines(1000, 10)}
    assert rows["fedavg"]["total"] == 2 * bandwidth_weights(1, 10, 1000, 32)
    assert rows["fl-pqsu"]["upstream"] == 1000
    assert rows["prunefl"]["downstream"] == 1600


def test_format_bytes_decimal_units():
    assert format_bytes(37_630_000) == "37.63 MB"
    assert format_bytes(73_520_000_000) == "73.52 GB"
    assert format_bytes(12) == "12 B"
