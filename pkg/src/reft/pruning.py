"""Structured L1 channel pruning with dependency-aware masks and reconfiguration.

Channel ownership is traced through the graph: conv/dense layers own their
output channels, parameter-free layers pass ownership through, and every
residual add merges the owners of its two operands into one dependency group.
A group reachable from the network input or containing the classifier is never
pruned.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .nn.layers import Conv2d, Dense, Flatten, Layer, ResidualAdd, fed_by
from .nn.network import Network, count_flops, count_params, serialized_size

ChannelMask = dict[int, np.ndarray]

_INPUT = -1


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class DependencyGroup:
    members: tuple[int, ...]
    channels: int
    prunable: bool = True


@dataclass(frozen=True)
class HardwareProfile:
    client_id: str
    flops: float
    ram_bytes: int | None = None
    width: float = 1.0

    def __post_init__(self) -> None:
        if not self.flops > 0:
            raise ValueError(f"client {self.client_id!r}: compute capacity must be positive")


@dataclass
class PruningPlan:
    client_id: str
    flops: float
    f_lambda: float
    ratio: float
    layers: list[dict] = field(default_factory=list)
    params_before: int = 0
    params_after: int = 0
    flops_before: int = 0
    flops_after: int = 0
    bytes_before: int = 0
    bytes_after: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _prunable(layer: Layer) -> bool:
    return isinstance(layer, (Conv2d, Dense))


def _out_channels(layer: Layer) -> int:
    return layer.out_channels if isinstance(layer, Conv2d) else layer.units


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[int, int] = {}

    def find(self, a: int) -> int:
        self.parent.setdefault(a, a)
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the input sentinel (-1) as root so lockedness is easy to read
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


@dataclass
class _Trace:
    owner: dict[int, int]  # tensor index -> owning producer (-1 = input)
    per_channel: dict[int, int]  # tensor index -> features per channel
    uf: _UnionFind

    def group_of(self, tensor: int) -> int:
        return self.uf.find(self.owner[tensor])


def _trace(net: Network) -> _Trace:
    uf = _UnionFind()
    owner = {_INPUT: _INPUT}
    per_channel = {_INPUT: 1}
    uf.find(_INPUT)
    for i, layer in enumerate(net.layers):
        src = fed_by(layer, i)
        if _prunable(layer):
            owner[i] = i
            per_channel[i] = 1
            uf.find(i)
        elif isinstance(layer, ResidualAdd):
            uf.union(owner[src], owner[layer.source])
            owner[i] = owner[src]
            per_channel[i] = per_channel[src]
        elif isinstance(layer, Flatten):
            in_shape = net.input_shape if src == _INPUT else net.shapes[src]
            owner[i] = owner[src]
            per_channel[i] = per_channel[src] * int(np.prod(in_shape[1:]))
        else:
            owner[i] = owner[src]
            per_channel[i] = per_channel[src]
    return _Trace(owner, per_channel, uf)


def _classifier_index(net: Network) -> int:
    for i in range(len(net.layers) - 1, -1, -1):
        if _prunable(net.layers[i]):
            return i
    raise MaskError("network has no conv/dense layer")


def build_dependency_graph(net: Network) -> list[DependencyGroup]:
    """Partition conv/dense layers into groups that must share one output mask."""
    tr = _trace(net)
    head = _classifier_index(net)
    by_root: dict[int, list[int]] = {}
    for i, layer in enumerate(net.layers):
        if _prunable(layer):
            by_root.setdefault(tr.uf.find(i), []).append(i)
    groups = []
    for root, members in sorted(by_root.items(), key=lambda kv: kv[1][0]):
        widths = {_out_channels(net.layers[m]) for m in members}
        if len(widths) != 1:
            raise MaskError(f"dependency group {members} has unequal channel counts {widths}")
        locked = root == tr.uf.find(_INPUT) or head in members
        groups.append(DependencyGroup(tuple(members), widths.pop(), not locked))
    return groups


def channel_l1_scores(layer: Layer) -> np.ndarray:
    """Sum of |w| over everything feeding each output channel (bias excluded)."""
    if not _prunable(layer):
        raise TypeError(f"{layer.kind} layers have no output channels to score")
    w = np.abs(layer.params["weight"].astype(np.float64))
    return w.reshape(w.shape[0], -1).sum(axis=1)


def keep_count(channels: int, ratio: float) -> int:
    # guard against (1 - 0.7) * 10 = 3.0000000000000004 rounding up to 4
    return max(1, math.ceil((1.0 - ratio) * channels - 1e-9))


def generate_mask(
    net: Network,
    ratio: float,
    groups: Sequence[DependencyGroup] | None = None,
    scores: Mapping[int, np.ndarray] | None = None,
) -> ChannelMask:
    """Keep the ceil((1-ratio)*C) highest-scoring channels of every prunable group.

    Group score is the element-wise sum of member scores; ties go to the lower
    channel index.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"pruning ratio must be in [0, 1), got {ratio}")
    if groups is None:
        groups = build_dependency_graph(net)
    if scores is None:
        scores = {
            i: channel_l1_scores(layer) for i, layer in enumerate(net.layers) if _prunable(layer)
        }
    mask: ChannelMask = {}
    for g in groups:
        keep = np.ones(g.channels, dtype=bool)
        if g.prunable and ratio > 0:
            total = np.sum([scores[m] for m in g.members], axis=0)
            order = np.argsort(-total, kind="stable")
            keep[:] = False
            keep[order[: keep_count(g.channels, ratio)]] = True
        for m in g.members:
            mask[m] = keep.copy()
    return mask


def _validated(net: Network, mask: Mapping[int, np.ndarray]) -> ChannelMask:
    full: ChannelMask = {}
    for i, layer in enumerate(net.layers):
        if _prunable(layer):
            m = np.asarray(mask.get(i, np.ones(_out_channels(layer), bool)), dtype=bool)
            if m.shape != (_out_channels(layer),):
                raise MaskError(
                    f"mask for layer {i} has length {m.size}, layer has {_out_channels(layer)} channels"
                )
            if not m.any():
                raise MaskError(f"mask for layer {i} removes every channel")
            full[i] = m
    extra = set(mask) - set(full)
    if extra:
        raise MaskError(f"mask references non-prunable layers {sorted(extra)}")
    for g in build_dependency_graph(net):
        ref = full[g.members[0]]
        if not g.prunable and not ref.all():
            raise MaskError(f"layers {g.members} are locked and cannot be pruned")
        for m in g.members[1:]:
            if not np.array_equal(full[m], ref):
                raise MaskError(f"layers {g.members} form a dependency group but masks differ")
    return full


def _input_keep(net: Network, tr: _Trace, mask: ChannelMask, i: int) -> np.ndarray | None:
    src = fed_by(net.layers[i], i)
    owner = tr.owner[src]
    if owner == _INPUT:
        return None
    return np.repeat(mask[owner], tr.per_channel[src])


def apply_speedup(net: Network, mask: Mapping[int, np.ndarray]) -> Network:
    """Physically remove masked channels and the matching downstream input slices."""
    full = _validated(net, mask)
    tr = _trace(net)
    layers: list[Layer] = []
    for i, layer in enumerate(net.layers):
        if not _prunable(layer):
            new = copy.copy(layer)
            new.params, new.grads, new._cache = {}, {}, None
            layers.append(new)
            continue
        out_keep = full[i]
        in_keep = _input_keep(net, tr, full, i)
        w = layer.params["weight"][out_keep]
        if in_keep is not None:
            w = w[:, in_keep]
        if isinstance(layer, Conv2d):
            new = Conv2d(w.shape[1], w.shape[0], layer.kernel_size, layer.stride, layer.padding, layer.bias)
        else:
            new = Dense(w.shape[1], w.shape[0], layer.bias)
        new.input_from = layer.input_from
        new.params["weight"] = np.ascontiguousarray(w)
        if layer.bias:
            new.params["bias"] = layer.params["bias"][out_keep].copy()
        layers.append(new)
    return Network(net.input_shape, layers, dtype=net.dtype)


def apply_mask(net: Network, mask: Mapping[int, np.ndarray]) -> Network:
    """Zero masked channels in place of removing them (simulated pruning)."""
    full = _validated(net, mask)
    tr = _trace(net)
    out = net.copy()
    for i, layer in enumerate(out.layers):
        if not _prunable(layer):
            continue
        drop = ~full[i]
        layer.params["weight"][drop] = 0
        if layer.bias:
            layer.params["bias"][drop] = 0
        in_keep = _input_keep(net, tr, full, i)
        if in_keep is not None:
            layer.params["weight"][:, ~in_keep] = 0
    return out


def variable_pruning_ratio(f_c: float, f_lambda: float) -> float:
    """max(0, 1 - F_c / F_lambda), evaluated as (F_lambda - F_c) / F_lambda."""
    if not (f_c > 0 and f_lambda > 0):
        raise ValueError(f"compute capacities must be positive (F_c={f_c}, F_lambda={f_lambda})")
    if f_c >= f_lambda:
        return 0.0
    return (f_lambda - f_c) / f_lambda


def static_pruning_ratio(clients: Sequence[HardwareProfile], f_lambda: float) -> float:
    """Ratio of the least capable client, applied to every client."""
    return variable_pruning_ratio(min(c.flops for c in clients), f_lambda)


def prune_network(net: Network, ratio: float) -> tuple[Network, ChannelMask]:
    mask = generate_mask(net, ratio)
    return apply_speedup(net, mask), mask


def _plan_for(client: HardwareProfile, f_lambda: float, ratio: float, base: Network, pruned: Network) -> PruningPlan:
    layers = []
    for i, (before, after) in enumerate(zip(base.layers, pruned.layers)):
        if _prunable(before):
            layers.append(
                {"index": i, "kind": before.kind, "kept": _out_channels(after), "total": _out_channels(before)}
            )
    return PruningPlan(
        client_id=client.client_id,
        flops=client.flops,
        f_lambda=f_lambda,
        ratio=ratio,
        layers=layers,
        params_before=count_params(base),
        params_after=count_params(pruned),
        flops_before=count_flops(base),
        flops_after=count_flops(pruned),
        bytes_before=serialized_size(base),
        bytes_after=serialized_size(pruned),
    )


def plan_pruning(
    clients: Sequence[HardwareProfile],
    f_lambda: float,
    base_net: Network | Mapping[str, Network],
    ratio: float | None = None,
) -> list[tuple[Network, PruningPlan]]:
    """One-shot per-client pruning of the initial global weights.

    ``base_net`` may map client ids to per-client starting architectures.
    ``ratio`` overrides the per-client ratio (static pruning).
    """
    if not clients:
        raise ValueError("plan_pruning needs at least one client")
    out = []
    for client in clients:
        base = base_net[client.client_id] if isinstance(base_net, Mapping) else base_net
        p = variable_pruning_ratio(client.flops, f_lambda) if ratio is None else ratio
        pruned = apply_speedup(base, generate_mask(base, p)) if p > 0 else base.copy()
        out.append((pruned, _plan_for(client, f_lambda, p, base, pruned)))
    return out


def expected_param_count(n: float, ratio: float) -> float:
    """Linear idealization N(1-P)."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be in [0, 1]")
    return n * (1.0 - ratio)


def expected_flops(f: float, ratio: float) -> float:
    """Linear idealization F(1-P)."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be in [0, 1]")
    return f * (1.0 - ratio)
