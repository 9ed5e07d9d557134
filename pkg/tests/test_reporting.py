import csv
import io
import json

import numpy as np
import pytest

from reft.nn import build_model, count_flops, count_params, serialized_size
from reft.reporting import PRUNE_COLUMNS, dumps_json, prune_report, rows_to_csv


def test_ratio_zero_row_is_unpruned():
    net = build_model("cnn-small", (3, 8, 8), 4)
    (row,) = prune_report("cnn-small", [0.0], (3, 8, 8), 4)
    assert row["params"] == count_params(net)
    assert row["flops"] == count_flops(net)
    assert row["size_bytes"] == serialized_size(net)
    assert row["flops_2x"] == 2 * row["flops"]


def test_vgg16_prune_report():
    rows = prune_report("vgg16", [0.0, 0.3, 0.6, 0.9])
    assert abs(rows[0]["params"] - 33.6e6) / 33.6e6 < 0.05
    for r in rows[1:]:
        assert abs(r["params"] - r["quadratic_params"]) / r["quadratic_params"] < 0.25
        assert r["expected_params"] == pytest.approx(rows[0]["params"] * (1 - r["ratio"]))
    assert rows[-1]["size_mb"] <= 2.5


def test_csv_and_json_are_strict():
    text = rows_to_csv([{"model": "m", "ratio": float("nan")}], PRUNE_COLUMNS)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == list(PRUNE_COLUMNS) and rows[1][1] == ""
    assert json.loads(dumps_json({"a": float("nan"), "b": [float("inf"), 1.5], 3: np.float64(2.0).item()})) == {
        "a": None, "b": [None, 1.5], "3": 2.0,
    }
