"""Random network builders shared by the engine, pruning and acceptance tests."""

from __future__ import annotations

import numpy as np

from reft.nn import Conv2d, Dense, Flatten, GlobalAvgPool, MaxPool2d, Network, ReLU, ResidualAdd


def random_network(rng: np.random.Generator, dtype=np.float32, max_channels: int = 8) -> Network:
    """Small random topology: conv stages, optional residual blocks, pooling, dense head."""
    c_in = int(rng.integers(1, 4))
    hw0 = int(rng.choice([4, 6, 8]))
    hw = hw0
    c = int(rng.integers(2, max_channels + 1))
    layers = [Conv2d(c_in, c, 3, padding=1), ReLU()]
    for _ in range(int(rng.integers(1, 4))):
        kind = rng.choice(["conv", "identity", "projection", "pool"])
        last = len(layers) - 1
        if kind == "conv":
            c2 = int(rng.integers(2, max_channels + 1))
            k = int(rng.choice([1, 3]))
            layers += [Conv2d(c, c2, k, padding=k // 2), ReLU()]
            c = c2
        elif kind == "identity":
            layers += [Conv2d(c, c, 3, padding=1), ReLU(), Conv2d(c, c, 3, padding=1)]
            layers += [ResidualAdd(source=last), ReLU()]
        elif kind == "projection":
            c2 = int(rng.integers(2, max_channels + 1))
            layers += [Conv2d(c, c2, 3, padding=1), ReLU(), Conv2d(c2, c2, 3, padding=1)]
            main = len(layers) - 1
            proj = Conv2d(c, c2, 1)
            proj.input_from = last
            layers += [proj, ResidualAdd(source=main), ReLU()]
            c = c2
        elif hw >= 4:
            layers.append(MaxPool2d(2))
            hw //= 2
    n_out = int(rng.integers(2, 5))
    if rng.random() < 0.5:
        layers += [GlobalAvgPool(), Dense(c, n_out)]
    else:
        hidden = int(rng.integers(2, 7))
        layers += [Flatten(), Dense(c * hw * hw, hidden), ReLU(), Dense(hidden, n_out)]
    return Network((c_in, hw0, hw0), layers, dtype=dtype).init_weights(rng)


def tiny_cnn(dtype=np.float64, seed: int = 0) -> Network:
    """Three parameterised layers, under 500 parameters."""
    layers = [
        Conv2d(2, 4, 3, padding=1), ReLU(), MaxPool2d(2),
        Conv2d(4, 6, 3, padding=1), ReLU(), GlobalAvgPool(),
        Dense(6, 3),
    ]
    return Network((2, 6, 6), layers, dtype=dtype).init_weights(np.random.default_rng(seed))


def numeric_grads(net: Network, x: np.ndarray, y: np.ndarray, h: float = 1e-4) -> list[np.ndarray]:
    """Central differences of mean cross entropy for every parameter."""
    from reft.nn.losses import cross_entropy_loss

    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            lp = cross_entropy_loss(net.forward(x), y)[0]
            p[i] = old - h
            lm = cross_entropy_loss(net.forward(x), y)[0]
            p[i] = old
            g[i] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def max_rel_error(a: list[np.ndarray], b: list[np.ndarray]) -> float:
    worst = 0.0
    for x, y in zip(a, b):
        denom = np.maximum(np.abs(x) + np.abs(y), 1e-8)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst
