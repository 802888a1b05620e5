"""Detection and removal networks at toy scale.

RDNet: conv(3->16)+relu, one residual block, conv(16->1), sigmoid.
RRNet: concat(I, mask) -> conv(4->32)+relu, two residual blocks, conv(32->3),
then a global skip: T_hat = clamp(I + out).
A residual block is relu(x + conv(relu(conv(x)))).
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autograd import (DTYPE, Tensor, add, clamp01, concat_channels, conv2d, parameter,
                       relu, sigmoid)

RDNET_WIDTH = 16
RRNET_WIDTH = 32

# (name, in_channels, out_channels, zero_init)
_LAYERS = [
    ("rdnet.head", 3, RDNET_WIDTH, False),
    ("rdnet.block.conv1", RDNET_WIDTH, RDNET_WIDTH, False),
    ("rdnet.block.conv2", RDNET_WIDTH, RDNET_WIDTH, False),
    ("rdnet.tail", RDNET_WIDTH, 1, True),
    ("rrnet.head", 4, RRNET_WIDTH, False),
    ("rrnet.block1.conv1", RRNET_WIDTH, RRNET_WIDTH, False),
    ("rrnet.block1.conv2", RRNET_WIDTH, RRNET_WIDTH, False),
    ("rrnet.block2.conv1", RRNET_WIDTH, RRNET_WIDTH, False),
    ("rrnet.block2.conv2", RRNET_WIDTH, RRNET_WIDTH, False),
    ("rrnet.tail", RRNET_WIDTH, 3, True),
]


class ParamStore(OrderedDict):
    """Named trainable tensors plus how they were initialised."""

    def __init__(self, *args, seed=None, scheme="kaiming", **kw):
        super().__init__(*args, **kw)
        self.seed = seed
        self.scheme = scheme

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.items())

    @classmethod
    def from_arrays(cls, arrays, seed=None, scheme="loaded") -> "ParamStore":
        store = cls(seed=seed, scheme=scheme)
        for k, v in arrays.items():
            store[k] = parameter(np.array(v, dtype=DTYPE), name=k)
        return store

    def prefixed(self, prefix: str):
        return [v for k, v in self.items() if k.startswith(prefix)]


def init_params(seed: int = 0, zero_tails: bool = True) -> ParamStore:
    """Kaiming fan-in normal weights, zero biases; tails zeroed when ``zero_tails``.

    Zero tails make the untrained cascade output M_hat = 0.5 and T_hat = I.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore(seed=seed, scheme="kaiming" if zero_tails else "kaiming-full")
    for name, cin, cout, zero in _LAYERS:
        std = np.sqrt(2.0 / (cin * 9))
        w = rng.normal(0.0, std, size=(cout, cin, 3, 3))
        if zero and zero_tails:
            w[:] = 0.0
        store[name + ".weight"] = parameter(w.astype(DTYPE), name + ".weight")
        store[name + ".bias"] = parameter(np.zeros(cout, DTYPE), name + ".bias")
    return store


def _conv(params, name, x):
    return conv2d(x, params[name + ".weight"], params[name + ".bias"])


def _block(params, name, x):
    h = relu(_conv(params, name + ".conv1", x))
    return relu(add(x, _conv(params, name + ".conv2", h)))


def _check_input(x: Tensor, channels: int, what: str):
    if x.data.ndim != 4 or x.data.shape[1] != channels:
        raise ValueError(f"{what} must be (N, {channels}, H, W), got {x.shape}")


def rdnet_forward(params, image: Tensor) -> Tensor:
    _check_input(image, 3, "RDNet input")
    h = relu(_conv(params, "rdnet.head", image))
    h = _block(params, "rdnet.block", h)
    return sigmoid(_conv(params, "rdnet.tail", h))


def rrnet_forward(params, image: Tensor, mask: Tensor, detach_mask: bool = True) -> Tensor:
    _check_input(image, 3, "RRNet image")
    _check_input(mask, 1, "RRNet mask")
    if mask.shape[0] != image.shape[0] or mask.shape[2:] != image.shape[2:]:
        raise ValueError(f"mask {mask.shape} does not match image {image.shape}")
    if detach_mask:
        mask = mask.detach()
    h = relu(_conv(params, "rrnet.head", concat_channels(image, mask)))
    h = _block(params, "rrnet.block1", h)
    h = _block(params, "rrnet.block2", h)
    return clamp01(add(image, _conv(params, "rrnet.tail", h)))


def cascade_forward(params, image: Tensor, detach_mask: bool = True):
    """(M_hat, T_hat) for an (N, 3, H, W) batch."""
    m = rdnet_forward(params, image)
    return m, rrnet_forward(params, image, m, detach_mask)
