from __future__ import annotations

import copy
import io
import json
import os
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from .layers import (
    Layer,
    ResidualAdd,
    ShapeError,
    fed_by,
    kaiming_uniform,
    layer_from_spec,
    layer_spec,
)

CHECKPOINT_MAGIC = b"REFTNET"
CHECKPOINT_VERSION = 1


class Network:
    """Ordered layer graph.

    Each layer consumes the previous layer's output unless it sets
    ``input_from``; residual-add layers additionally read ``source``.  Index -1
    addresses the network input.  ``shapes[i]`` is the per-sample output shape
    of layer ``i``.
    """

    def __init__(
        self,
        input_shape: Sequence[int],
        layers: Sequence[Layer],
        dtype=np.float32,
    ) -> None:
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self.shapes = self._infer_shapes(self.input_shape)
        self._forwarded = False
        for layer in self.layers:
            for name, p in layer.params.items():
                layer.params[name] = np.ascontiguousarray(p, dtype=self.dtype)

    def _infer_shapes(self, input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
        shapes: list[tuple[int, ...]] = []
        for i, layer in enumerate(self.layers):
            try:
                src = fed_by(layer, i)
                if not -1 <= src < i:
                    raise ShapeError(f"input_from must reference an earlier layer, got {src}")
                prev = input_shape if src == -1 else shapes[src]
                if isinstance(layer, ResidualAdd):
                    if not -1 <= layer.source < i or layer.source == src:
                        raise ShapeError(
                            f"residual_add must reference a distinct earlier layer, got {layer.source}"
                        )
                    other = input_shape if layer.source == -1 else shapes[layer.source]
                    if other != prev:
                        raise ShapeError(
                            f"residual_add operands differ: {prev} vs {other} "
                            f"(from layer {layer.source})"
                        )
                    out = prev
                else:
                    out = layer.output_shape(prev)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            shapes.append(out)
        return shapes

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1] if self.shapes else self.input_shape

    @property
    def n_outputs(self) -> int:
        return int(np.prod(self.output_shape))

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{name}", p

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p in self.named_parameters()]

    def set_parameters(self, values: Sequence[np.ndarray]) -> None:
        values = list(values)
        slots = [(layer, name) for layer in self.layers for name in layer.params]
        if len(values) != len(slots):
            raise ValueError(f"expected {len(slots)} tensors, got {len(values)}")
        for (layer, name), v in zip(slots, values):
            if v.shape != layer.params[name].shape:
                raise ValueError(f"shape mismatch for {name}: {v.shape} vs {layer.params[name].shape}")
            layer.params[name] = np.array(v, dtype=self.dtype)

    def init_weights(self, rng: np.random.Generator) -> "Network":
        for layer in self.layers:
            if layer.trainable:
                kaiming_uniform(layer, rng)
        return self

    def architecture(self) -> tuple:
        """Hashable description of topology and tensor shapes."""
        return (
            self.input_shape,
            tuple(json.dumps(layer_spec(layer), sort_keys=True) for layer in self.layers),
        )

    def copy(self) -> "Network":
        return copy.deepcopy(self.clear_caches())

    def astype(self, dtype) -> "Network":
        net = self.copy()
        net.dtype = np.dtype(dtype)
        for layer in net.layers:
            for name, p in layer.params.items():
                layer.params[name] = p.astype(net.dtype)
        return net

    def clear_caches(self) -> "Network":
        for layer in self.layers:
            layer.clear_cache()
        self._forwarded = False
        return self

    # -- compute -------------------------------------------------------------

    def forward(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch)
        if batch.ndim < 1 or tuple(batch.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"input batch of shape {batch.shape} does not match network input "
                f"(N, {', '.join(map(str, self.input_shape))})"
            )
        inp = batch.astype(self.dtype, copy=False)
        outputs: list[np.ndarray] = []
        x = inp
        for i, layer in enumerate(self.layers):
            src = fed_by(layer, i)
            x = inp if src == -1 else outputs[src]
            if isinstance(layer, ResidualAdd):
                x = layer.forward(x, inp if layer.source == -1 else outputs[layer.source])
            else:
                x = layer.forward(x)
            outputs.append(x)
        self._forwarded = True
        self._batch_size = batch.shape[0]
        return x

    __call__ = forward

    def backward(self, logits_grad: np.ndarray) -> list[np.ndarray]:
        """Backpropagate ``dL/dlogits``; returns gradients in ``parameters()`` order."""
        if not self._forwarded:
            raise RuntimeError("backward called before forward")
        expect = (self._batch_size, *self.output_shape)
        if logits_grad.shape != expect:
            raise ShapeError(f"logits gradient has shape {logits_grad.shape}, expected {expect}")
        n = len(self.layers)
        pending: list[np.ndarray | None] = [None] * n
        pending[n - 1] = logits_grad.astype(self.dtype, copy=False)

        def push(idx: int, g: np.ndarray) -> None:
            if idx < 0:
                return
            pending[idx] = g if pending[idx] is None else pending[idx] + g

        for i in range(n - 1, -1, -1):
            g = pending[i]
            pending[i] = None
            layer = self.layers[i]
            if g is None:
                # output never consumed: zero gradient
                g = np.zeros((self._batch_size, *self.shapes[i]), self.dtype)
            if isinstance(layer, ResidualAdd):
                push(fed_by(layer, i), g)
                push(layer.source, g)
            else:
                push(fed_by(layer, i), layer.backward(g))
        return [layer.grads[name] for layer in self.layers for name in layer.params]

    def predict_logits(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        if len(x) == 0:
            return np.zeros((0, *self.output_shape), self.dtype)
        out = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        self.clear_caches()
        return np.concatenate(out)

    # -- serialization -------------------------------------------------------

    def header(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "input_shape": list(self.input_shape),
            "layers": [layer_spec(layer) for layer in self.layers],
            "tensors": [[name, list(p.shape)] for name, p in self.named_parameters()],
        }

    def save(self, f: str | os.PathLike | BinaryIO) -> None:
        if isinstance(f, (str, os.PathLike)):
            with open(f, "wb") as fh:
                self.save(fh)
            return
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":"))
        f.write(CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION)
        f.write(head.encode("ascii") + b"\n")
        for p in self.parameters():
            f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.save(buf)
        return buf.getvalue()

    @classmethod
    def load(cls, f: str | os.PathLike | BinaryIO) -> "Network":
        if isinstance(f, (str, os.PathLike)):
            with open(f, "rb") as fh:
                return cls.load(fh)
        return cls.from_bytes(f.read())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Network":
        magic, _, rest = data.partition(b"\n")
        if not magic.startswith(CHECKPOINT_MAGIC):
            raise ValueError("not a network checkpoint")
        version = int(magic.split()[1])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        head_line, _, payload = rest.partition(b"\n")
        head = json.loads(head_line)
        layers = [layer_from_spec(s) for s in head["layers"]]
        net = cls(head["input_shape"], layers)
        offset = 0
        values = []
        for _, shape in head["tensors"]:
            size = int(np.prod(shape)) * 4
            if offset + size > len(payload):
                raise ValueError(f"checkpoint truncated at payload byte {offset}")
            values.append(np.frombuffer(payload, "<f4", count=size // 4, offset=offset).reshape(shape))
            offset += size
        if offset != len(payload):
            raise ValueError(f"checkpoint has {len(payload) - offset} trailing bytes")
        net.set_parameters(values)
        return net

    def __repr__(self) -> str:
        body = "\n".join(f"  ({i}) {layer!r}" for i, layer in enumerate(self.layers))
        return f"Network(input={self.input_shape},\n{body}\n)"


def count_params(net: Network) -> int:
    return sum(int(p.size) for p in net.parameters())


def count_flops(net: Network, input_shape: Sequence[int] | None = None) -> int:
    """Forward FLOPs for one sample, counting one multiply-accumulate as one FLOP.

    Conv/dense bias adds are folded into the MAC; ReLU, pooling and residual
    adds cost one op per output element; flatten is free.
    """
    shape = tuple(input_shape) if input_shape is not None else net.input_shape
    shapes = net._infer_shapes(shape) if shape != net.input_shape else net.shapes
    total = 0
    for i, (layer, out) in enumerate(zip(net.layers, shapes)):
        src = fed_by(layer, i)
        prev = shape if src == -1 else shapes[src]
        total += int(np.prod(out)) if isinstance(layer, ResidualAdd) else layer.flops(prev)
    return total


def serialized_size(net: Network) -> int:
    """Checkpoint size in bytes, without materializing the payload."""
    head = json.dumps(net.header(), sort_keys=True, separators=(",", ":"))
    magic = CHECKPOINT_MAGIC + b" %d\n" % CHECKPOINT_VERSION
    return len(magic) + len(head) + 1 + 4 * count_params(net)
