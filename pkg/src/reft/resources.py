"""Bandwidth accounting and FLOP-based cost proxies.

All byte counts are integers; MB/GB are decimal (1e6 / 1e9 bytes).
"""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import asdict, dataclass, field
from typing import Iterable

VALID_BITS = (8, 16, 32, 64)
DOWN, UP = "down", "up"
WEIGHTS, LOGITS = "weights", "logits"


@dataclass(frozen=True)
class CostModel:
    bits: int = 32
    logit_bits: int | None = None

    def __post_init__(self) -> None:
        for b in (self.bits, self.logit_bits):
            if b is not None and b not in VALID_BITS:
                raise ValueError(f"bit width must be one of {VALID_BITS}, got {b}")

    @property
    def effective_logit_bits(self) -> int:
        return self.logit_bits or self.bits


def bandwidth_weights(clients: int, rounds: int, params: int, bits: int = 32) -> int:
    """C * R * W * B, in bytes."""
    if min(clients, rounds, params, bits) < 0:
        raise ValueError("bandwidth terms must be non-negative")
    return clients * rounds * params * bits // 8


def transfer_bytes(params: int, bits: int = 32) -> int:
    """Size of one weight transfer for one client, W * B / 8."""
    return bandwidth_weights(1, 1, params, bits)


def bandwidth_logits(logits: int, transfers: int, bits: int = 32) -> int:
    """L * S * B, in bytes."""
    if min(logits, transfers, bits) < 0:
        raise ValueError("bandwidth terms must be non-negative")
    return logits * transfers * bits // 8


def utilization_factor(f_static: float, f_c: float) -> float:
    if not (f_static > 0 and f_c > 0):
        raise ValueError("capacities must be positive")
    return f_static / f_c


def simulated_train_time(total_flops: float, f_c: float) -> float:
    """Seconds needed for ``total_flops`` at a sustained ``f_c`` FLOPS."""
    if total_flops < 0 or not f_c > 0:
        raise ValueError("total_flops must be >= 0 and f_c > 0")
    return total_flops / f_c


def training_flops(forward_flops: int, samples: int, epochs: int) -> int:
    # backward ~ 2x forward
    return 3 * forward_flops * samples * epochs


@dataclass(frozen=True)
class Transfer:
    client: str
    round: int
    direction: str
    kind: str
    units: int
    bits: int
    bytes: int


@dataclass
class BandwidthLedger:
    """Append-only transfer log."""

    entries: list[Transfer] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, entry: Transfer) -> Transfer:
        if entry.bytes < 0:
            raise ValueError("transfer size must be non-negative")
        with self._lock:
            self.entries.append(entry)
        return entry

    def select(self, *, client=None, direction=None, kind=None) -> list[Transfer]:
        return [
            e
            for e in self.entries
            if (client is None or e.client == client)
            and (direction is None or e.direction == direction)
            and (kind is None or e.kind == kind)
        ]

    def total(self, **filters) -> int:
        return sum(e.bytes for e in self.select(**filters))

    def clients(self) -> list[str]:
        return sorted({e.client for e in self.entries})

    def per_client(self) -> dict[str, dict[str, int]]:
        out = {}
        for c in self.clients():
            down, up = self.total(client=c, direction=DOWN), self.total(client=c, direction=UP)
            out[c] = {"downstream": down, "upstream": up, "total": down + up}
        return out

    def summary(self) -> dict:
        """Per-client downstream/upstream/total plus the run-wide totals."""
        return {
            "clients": self.per_client(),
            "downstream": self.total(direction=DOWN),
            "upstream": self.total(direction=UP),
            "total": self.total(),
            "entries": len(self.entries),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["client", "round", "direction", "kind", "bytes"])
        for e in self.entries:
            w.writerow([e.client, e.round, e.direction, e.kind, e.bytes])
        return buf.getvalue()

    def to_records(self) -> list[dict]:
        return [asdict(e) for e in self.entries]


def record_transfer(
    ledger: BandwidthLedger,
    client: str,
    round: int,
    direction: str,
    payload_kind: str,
    size_units: int,
    cost_model: CostModel = CostModel(),
) -> Transfer:
    """Log one transfer; ``size_units`` is a parameter count or a logit count."""
    if direction not in (DOWN, UP):
        raise ValueError(f"direction must be {DOWN!r} or {UP!r}")
    if payload_kind == WEIGHTS:
        bits = cost_model.bits
        nbytes = bandwidth_weights(1, 1, size_units, bits)
    elif payload_kind == LOGITS:
        bits = cost_model.effective_logit_bits
        nbytes = bandwidth_logits(size_units, 1, bits)
    else:
        raise ValueError(f"unknown payload kind {payload_kind!r}")
    return ledger.record(Transfer(client, round, direction, payload_kind, size_units, bits, nbytes))


def modeled_baselines(params: int, rounds: int, cost_model: CostModel = CostModel()) -> list[dict]:
    """Analytic per-client rows for weight-sharing baselines that are not executed.

    FL-PQSU ships full-size (masked, unreconfigured) weights down and INT8 weights
    up; PruneFL is approximated by its ~60% final sparsity in both directions.
    """
    full = transfer_bytes(params, cost_model.bits)
    int8 = transfer_bytes(params, 8)
    prunefl = transfer_bytes(int(round(params * 0.4)), cost_model.bits)
    rows = [
        ("fedavg", full, full),
        ("fl-pqsu", full, int8),
        ("prunefl", prunefl, prunefl),
    ]
    return [
        {"method": m, "downstream": d, "upstream": u, "rounds": rounds, "total": (d + u) * rounds}
        for m, d, u in rows
    ]


def format_bytes(n: int | float) -> str:
    for unit, scale in (("GB", 1e9), ("MB", 1e6), ("kB", 1e3)):
        if abs(n) >= scale:
            return f"{n / scale:.2f} {unit}"
    return f"{int(n)} B"


def sum_entries(entries: Iterable[Transfer]) -> int:
    return sum(e.bytes for e in entries)
