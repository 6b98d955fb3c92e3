"""Small trainable building blocks on top of :mod:`emoembed.autodiff`."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import DimensionError


class Linear:
    def __init__(self, n_in, n_out, rng, bias=True, name="linear", gain=2.0):
        bound = np.sqrt(3.0 * gain / n_in)
        self.weight = ad.Parameter(rng.uniform(-bound, bound, size=(n_out, n_in)), name=f"{name}.weight")
        self.bias = ad.Parameter(np.zeros(n_out), name=f"{name}.bias") if bias else None

    @property
    def n_in(self):
        return self.weight.value.shape[1]

    @property
    def n_out(self):
        return self.weight.value.shape[0]

    def __call__(self, x):
        return ad.affine(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class FeedForward:
    """Stack of affine layers with a hidden nonlinearity; the last layer is linear."""

    def __init__(self, widths, rng, activation="relu", dropout=0.0, name="ffn"):
        widths = list(widths)
        if len(widths) < 2:
            raise DimensionError("a feed-forward net needs at least input and output widths")
        self.widths = widths
        self.activation = activation
        self.dropout = dropout
        last = len(widths) - 2
        self.layers = [
            Linear(a, b, rng, name=f"{name}.{i}", gain=1.0 if i == last else 2.0)
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))
        ]

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]

    def __call__(self, x, rng=None):
        """Forward pass. Dropout is active only when ``rng`` is given."""
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ad.activation(self.activation, h)
                if rng is not None and self.dropout > 0:
                    h = ad.dropout(h, self.dropout, rng)
        return h

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]
