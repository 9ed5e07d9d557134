"""Reference topologies.

VGG-16 uses the 13-conv backbone for 32x32 inputs with a 4096-4096 classifier,
which lands at ~33.6 M parameters.  ResNet-8 is three stages of one basic block
(stage 1 identity shortcut, stages 2-3 strided 1x1 projections) at widths
176/352/704, i.e. 11x the usual 16/32/64 CIFAR widths; that puts the fp32
payload near 37 MB.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .layers import Conv2d, Dense, Flatten, GlobalAvgPool, Layer, MaxPool2d, ReLU, ResidualAdd
from .network import Network

VGG16_CONV = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")
VGG16_CLASSIFIER = (4096, 4096)
RESNET8_WIDTHS = (176, 352, 704)

MODEL_IDS = ("mlp-small", "cnn-small", "resnet8", "vgg16")


def _scaled(c: int, width: float) -> int:
    return max(1, int(round(c * width)))


def mlp_small(input_shape: Sequence[int], n_classes: int, width: float = 1.0) -> Network:
    d = int(np.prod(input_shape))
    h1, h2 = _scaled(64, width), _scaled(32, width)
    layers = [Flatten(), Dense(d, h1), ReLU(), Dense(h1, h2), ReLU(), Dense(h2, n_classes)]
    return Network(input_shape, layers)


def cnn_small(input_shape: Sequence[int], n_classes: int, width: float = 1.0) -> Network:
    c = input_shape[0]
    c1, c2 = _scaled(16, width), _scaled(32, width)
    layers = [
        Conv2d(c, c1, 3, padding=1),
        ReLU(),
        MaxPool2d(2),
        Conv2d(c1, c2, 3, padding=1),
        ReLU(),
        GlobalAvgPool(),
        Dense(c2, n_classes),
    ]
    return Network(input_shape, layers)


def vgg16(
    input_shape: Sequence[int] = (3, 32, 32),
    n_classes: int = 10,
    width: float = 1.0,
    classifier: Sequence[int] = VGG16_CLASSIFIER,
) -> Network:
    layers: list[Layer] = []
    c = input_shape[0]
    for v in VGG16_CONV:
        if v == "M":
            layers.append(MaxPool2d(2))
            continue
        out = _scaled(v, width)
        layers += [Conv2d(c, out, 3, padding=1), ReLU()]
        c = out
    probe = Network(input_shape, list(layers))
    d = int(np.prod(probe.output_shape))
    layers.append(Flatten())
    for units in classifier:
        units = _scaled(units, width)
        layers += [Dense(d, units), ReLU()]
        d = units
    layers.append(Dense(d, n_classes))
    return Network(input_shape, layers)


def resnet8(
    input_shape: Sequence[int] = (3, 32, 32),
    n_classes: int = 10,
    width: float = 1.0,
    widths: Sequence[int] = RESNET8_WIDTHS,
) -> Network:
    w1, w2, w3 = (_scaled(w, width) for w in widths)
    layers: list[Layer] = [Conv2d(input_shape[0], w1, 3, padding=1), ReLU()]

    def block(c_in: int, c_out: int, stride: int) -> None:
        entry = len(layers) - 1
        layers.append(Conv2d(c_in, c_out, 3, stride=stride, padding=1))
        layers.append(ReLU())
        layers.append(Conv2d(c_out, c_out, 3, padding=1))
        main = len(layers) - 1
        if stride == 1 and c_in == c_out:
            layers.append(ResidualAdd(source=entry))
        else:
            proj = Conv2d(c_in, c_out, 1, stride=stride)
            proj.input_from = entry
            layers.append(proj)
            layers.append(ResidualAdd(source=main))
        layers.append(ReLU())

    block(w1, w1, 1)
    block(w1, w2, 2)
    block(w2, w3, 2)
    layers += [GlobalAvgPool(), Dense(w3, n_classes)]
    return Network(input_shape, layers)


_BUILDERS = {"mlp-small": mlp_small, "cnn-small": cnn_small, "resnet8": resnet8, "vgg16": vgg16}


def build_model(
    model_id: str,
    input_shape: Sequence[int],
    n_classes: int,
    width: float = 1.0,
    seed: int | np.random.Generator | None = 0,
) -> Network:
    """Instantiate a zoo topology with Kaiming-uniform weights."""
    try:
        builder = _BUILDERS[model_id]
    except KeyError:
        raise ValueError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}") from None
    net = builder(tuple(input_shape), n_classes, width=width)
    return net.init_weights(np.random.default_rng(seed))
