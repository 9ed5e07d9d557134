"""Run artifacts: JSON report, metrics/ledger CSV, prune reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path
from typing import Sequence

from .federated import METRIC_COLUMNS, RunReport
from .nn.network import count_flops, count_params, serialized_size
from .nn.zoo import build_model
from .pruning import expected_flops, expected_param_count, prune_network


def _clean(obj):
    # strict JSON: NaN/inf become null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def metrics_csv(report: RunReport) -> str:
    return rows_to_csv(report.metrics, METRIC_COLUMNS)


def write_run(report: RunReport, out: str | os.PathLike, resolved_config: str | None = None) -> list[Path]:
    """Write report.json, metrics.csv, ledger.csv (and config.resolved.json)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.json": dumps_json(report.to_dict()),
        "metrics.csv": metrics_csv(report),
        "ledger.csv": report.ledger.to_csv(),
    }
    if resolved_config is not None:
        files["config.resolved.json"] = resolved_config
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    if report.global_net is not None:
        report.global_net.save(out / "global.ckpt")
        written.append(out / "global.ckpt")
    return written


PRUNE_COLUMNS = (
    "model",
    "ratio",
    "params",
    "flops",
    "flops_2x",
    "size_bytes",
    "size_mb",
    "expected_params",
    "expected_flops",
    "quadratic_params",
)


def prune_report(
    model_id: str,
    ratios: Sequence[float],
    input_shape: Sequence[int] = (3, 32, 32),
    n_classes: int = 10,
    seed: int = 0,
) -> list[dict]:
    """Measured params/FLOPs/checkpoint size of a zoo model at each pruning ratio.

    ``expected_*`` are the linear N(1-P) idealizations; ``quadratic_params`` is
    N(1-P)^2, the scaling of chained conv layers pruned on both sides.
    """
    base = build_model(model_id, input_shape, n_classes, seed=seed)
    n0, f0 = count_params(base), count_flops(base)
    rows = []
    for p in ratios:
        net = prune_network(base, p)[0] if p > 0 else base
        flops = count_flops(net)
        size = serialized_size(net)
        rows.append(
            {
                "model": model_id,
                "ratio": float(p),
                "params": count_params(net),
                "flops": flops,
                "flops_2x": 2 * flops,
                "size_bytes": size,
                "size_mb": size / 1e6,
                "expected_params": expected_param_count(n0, p),
                "expected_flops": expected_flops(f0, p),
                "quadratic_params": n0 * (1 - p) ** 2,
            }
        )
    return rows


COMPARE_COLUMNS = (
    "strategy",
    "client_id",
    "capacity_flops",
    "pruning_ratio",
    "params",
    "flops",
    "test_acc",
    "bytes_down",
    "bytes_up",
    "bytes_total",
)


def compare_rows(reports: Sequence[RunReport]) -> list[dict]:
    rows = []
    for rep in reports:
        per = rep.ledger.per_client()
        for c in sorted(rep.clients, key=lambda c: c["client_id"]):
            b = per.get(c["client_id"], {"downstream": 0, "upstream": 0, "total": 0})
            rows.append(
                {
                    "strategy": rep.strategy,
                    "client_id": c["client_id"],
                    "capacity_flops": c["capacity_flops"],
                    "pruning_ratio": c["pruning_ratio"],
                    "params": c["params"],
                    "flops": c["flops"],
                    "test_acc": c["test_acc"],
                    "bytes_down": b["downstream"],
                    "bytes_up": b["upstream"],
                    "bytes_total": b["total"],
                }
            )
        rows.append(
            {
                "strategy": rep.strategy,
                "client_id": "central",
                "params": rep.central.get("params", ""),
                "flops": rep.central.get("flops", ""),
                "test_acc": rep.central.get("test_acc", ""),
                "bytes_down": rep.ledger.total(direction="down"),
                "bytes_up": rep.ledger.total(direction="up"),
                "bytes_total": rep.ledger.total(),
            }
        )
    return rows
