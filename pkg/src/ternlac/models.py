"""Reference networks for the built-in datasets."""

from __future__ import annotations

import math

from .graph import BatchNormInf, Conv2d, FullyConnected, NetworkSpec, ReLUT, SoftmaxXent


def fixed_gain(channels: int, fan_in: int) -> BatchNormInf:
    """Folded norm that undoes the gain of an unscaled ternary layer.

    Ternary weights with roughly 60% nonzeros have second moment ~0.6, so
    the output variance is about ``0.6 * fan_in`` times the input's.
    """
    s = 1.0 / math.sqrt(0.6 * fan_in)
    return BatchNormInf((s,) * channels, (0.0,) * channels)


def blob_mlp(classes: int = 2, hidden: int = 16, in_dim: int = 2, precision: str = "ternary") -> NetworkSpec:
    """Two FC layers; the first stays full precision."""
    return NetworkSpec("blob_mlp", [
        FullyConnected(in_dim, hidden),
        ReLUT(),
        FullyConnected(hidden, classes, precision=precision),
        SoftmaxXent(classes),
    ], (in_dim,))


def conv8x8_net(classes: int = 4, precision: str = "ternary") -> NetworkSpec:
    """Three 3x3 convs on 8x8 inputs, channels doubling at each stride-2 stage."""
    gain = (lambda c, fan: [fixed_gain(c, fan)]) if precision == "ternary" else (lambda c, fan: [])
    layers = [Conv2d(1, 8, 3, 3, 1, 1), ReLUT()]
    layers += [Conv2d(8, 16, 3, 3, 2, 1, precision=precision), *gain(16, 72), ReLUT()]
    layers += [Conv2d(16, 32, 3, 3, 2, 1, precision=precision), *gain(32, 144), ReLUT()]
    layers += [FullyConnected(128, classes, precision=precision), *gain(classes, 128), SoftmaxXent(classes)]
    return NetworkSpec("conv8x8_net", layers, (1, 8, 8))


BUILTIN = {"blob_mlp": blob_mlp, "conv8x8_net": conv8x8_net}
