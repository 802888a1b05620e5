"""Minimal tape-based reverse-mode differentiation over NCHW float arrays.

Tensors are indexed (N, C, H, W). Feature maps produced by ``conv2d`` are
stored channels-last in memory (an NCHW-strided view of an NHWC buffer), so
convolutions can run as plain GEMMs over contiguous row blocks; elementwise
numpy ops preserve that layout.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32

# When set to a list, non-smooth ops append their branch pattern to it, so
# a finite-difference probe can tell whether it stepped across a kink.
_branch_log = None


class record_branches:
    """Context manager collecting the branch patterns of non-smooth ops."""

    def __enter__(self):
        global _branch_log
        self._prev = _branch_log
        _branch_log = []
        return _branch_log

    def __exit__(self, *exc):
        global _branch_log
        _branch_log = self._prev
        return False


def _log_branch(pattern):
    if _branch_log is not None:
        _branch_log.append(np.packbits(pattern))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Propagate from this tensor; seeds with ones for a scalar."""
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, k):
        return scale(self, k)

    __rmul__ = __mul__


def parameter(data, name=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True, name=name)


def _result(data, parents, backward):
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, rg, parents if rg else (), backward if rg else None)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _nhwc(x: np.ndarray) -> np.ndarray:
    return x.transpose(0, 2, 3, 1)


def _nchw(x: np.ndarray) -> np.ndarray:
    return x.transpose(0, 3, 1, 2)


def _padded_rows(x_nhwc: np.ndarray):
    n, h, w, c = x_nhwc.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x_nhwc.dtype)
    xp[:, 1:-1, 1:-1] = x_nhwc
    return xp.reshape(-1, c)


def _row_triples(rows: np.ndarray) -> np.ndarray:
    """Concatenate each row with its two right-hand neighbours (3 taps along x)."""
    n_rows, c = rows.shape
    out = np.empty((n_rows - 2, 3 * c), dtype=rows.dtype)
    for b in range(3):
        out[:, b * c:(b + 1) * c] = rows[b:b + n_rows - 2]
    return out


def _conv_nhwc(x: np.ndarray, w_taps: np.ndarray, x3: np.ndarray | None = None) -> np.ndarray:
    """3x3 zero-padded cross-correlation. x: (N,H,W,C); w_taps: (3, 3C, O).

    ``x3`` may carry a precomputed ``_row_triples(_padded_rows(x))``.
    """
    n, h, w, _ = x.shape
    o = w_taps.shape[-1]
    wp = w + 2
    if x3 is None:
        x3 = _row_triples(_padded_rows(x))
    span = x3.shape[0] - 2 * wp
    out = np.empty((n * (h + 2) * wp, o), dtype=x.dtype)
    acc = out[:span]
    np.matmul(x3[:span], w_taps[0], out=acc)
    acc += x3[wp:wp + span] @ w_taps[1]
    acc += x3[2 * wp:2 * wp + span] @ w_taps[2]
    return out.reshape(n, h + 2, wp, o)[:, :h, :w]


def _taps(weight: np.ndarray) -> np.ndarray:
    """(O, C, 3, 3) -> (3, 3C, O) ordered (row tap, col tap, channel)."""
    o, c = weight.shape[:2]
    return np.ascontiguousarray(weight.transpose(2, 3, 1, 0)).reshape(3, 3 * c, o)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3, stride 1, zero padding 1. weight (O, C, 3, 3), bias (O,)."""
    if weight.data.shape[2:] != (3, 3):
        raise ValueError("only 3x3 kernels are supported")
    if x.data.ndim != 4 or x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(f"input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.data.shape != (weight.data.shape[0],):
        raise ValueError("bias must have one entry per output channel")
    dt = np.result_type(x.data, weight.data)
    xh = _nhwc(x.data).astype(dt, copy=False)
    x3 = _row_triples(_padded_rows(xh))
    out = _conv_nhwc(xh, _taps(weight.data).astype(dt, copy=False), x3)
    if bias is not None:
        out = out + bias.data
    else:
        out = np.ascontiguousarray(out)
    parents = (x, weight) + ((bias,) if bias is not None else ())

    def backward(g):
        gh = np.ascontiguousarray(_nhwc(g))
        n, h, w, o = gh.shape
        c = xh.shape[-1]
        wp = w + 2
        gx = gw = gb = None
        if weight.requires_grad:
            span = x3.shape[0] - 2 * wp
            gfull = np.zeros((n, h + 2, wp, o), dtype=gh.dtype)
            gfull[:, :h, :w] = gh
            grows = gfull.reshape(-1, o)[:span]
            taps = np.stack([x3[a * wp:a * wp + span].T @ grows for a in range(3)])
            gw = taps.reshape(3, 3, c, o).transpose(3, 2, 0, 1)
        if x.requires_grad:
            flipped = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx = _nchw(_conv_nhwc(gh, _taps(flipped)))
        if bias is not None and bias.requires_grad:
            gb = gh.sum(axis=(0, 1, 2))
        return (gx, gw) + ((gb,) if bias is not None else ())

    return _result(_nchw(out), parents, backward)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    _log_branch(pos)
    return _result(np.maximum(x.data, 0), (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = (1.0 / (1.0 + np.exp(-x.data))).astype(x.data.dtype)
    return _result(y, (x,), lambda g: (g * y * (1 - y),))


def clamp01(x: Tensor) -> Tensor:
    """Clip to [0, 1]; gradient passes where the input lies inside [0, 1]."""
    inside = (x.data >= 0) & (x.data <= 1)
    _log_branch(inside)
    return _result(np.clip(x.data, 0, 1), (x,), lambda g: (g * inside,))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x: Tensor, k: float) -> Tensor:
    return _result(x.data * x.data.dtype.type(k), (x,), lambda g: (g * k,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack along C with ``a``'s channels first."""
    sa, sb = a.shape, b.shape
    if sa[0] != sb[0] or sa[2:] != sb[2:]:
        raise ValueError(f"cannot concatenate {sa} and {sb}")
    ca = sa[1]
    return _result(np.concatenate([a.data, b.data], axis=1), (a, b),
                   lambda g: (g[:, :ca], g[:, ca:]))


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling; odd trailing rows/columns are dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x.data[:, :, :2 * h2, :2 * w2]
    out = 0.25 * (v[:, :, 0::2, 0::2] + v[:, :, 1::2, 0::2] + v[:, :, 0::2, 1::2]
                  + v[:, :, 1::2, 1::2])

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        q = 0.25 * g
        for dy in (0, 1):
            for dx in (0, 1):
                gx[:, :, dy:2 * h2:2, dx:2 * w2:2] = q
        return (gx,)

    return _result(out.astype(x.data.dtype), (x,), backward)


def _edge_pad(a):
    return np.pad(a, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")


def _fold_edge_pad(gp):
    """Adjoint of replicate padding by one pixel."""
    g = gp[:, :, 1:-1, 1:-1].copy()
    g[:, :, 0, :] += gp[:, :, 0, 1:-1]
    g[:, :, -1, :] += gp[:, :, -1, 1:-1]
    g[:, :, :, 0] += gp[:, :, 1:-1, 0]
    g[:, :, :, -1] += gp[:, :, 1:-1, -1]
    g[:, :, 0, 0] += gp[:, :, 0, 0]
    g[:, :, 0, -1] += gp[:, :, 0, -1]
    g[:, :, -1, 0] += gp[:, :, -1, 0]
    g[:, :, -1, -1] += gp[:, :, -1, -1]
    return g


SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T


def _filter3(p, k):
    h, w = p.shape[2] - 2, p.shape[3] - 2
    out = 0
    for a in range(3):
        for b in range(3):
            if k[a, b]:
                out = out + k[a, b] * p[:, :, a:a + h, b:b + w]
    return out


def _filter3_adjoint(g, k):
    n, c, h, w = g.shape
    gp = np.zeros((n, c, h + 2, w + 2), dtype=g.dtype)
    for a in range(3):
        for b in range(3):
            if k[a, b]:
                gp[:, :, a:a + h, b:b + w] += k[a, b] * g
    return gp


def sobel_magnitude(x: Tensor) -> Tensor:
    """Per-channel Sobel magnitude with replicate borders.

    The derivative at zero magnitude is taken as zero.
    """
    p = _edge_pad(x.data)
    gx = _filter3(p, SOBEL_X)
    gy = _filter3(p, SOBEL_Y)
    mag = np.sqrt(gx * gx + gy * gy).astype(x.data.dtype)

    def backward(g):
        safe = np.where(mag > 0, mag, 1)
        w = np.where(mag > 0, g / safe, 0)
        gp = _filter3_adjoint(w * gx, SOBEL_X) + _filter3_adjoint(w * gy, SOBEL_Y)
        return (_fold_edge_pad(gp).astype(x.data.dtype),)

    return _result(mag, (x,), backward)


# ---------------------------------------------------------------------------
# reductions (accumulated in float64)
# ---------------------------------------------------------------------------

def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    """mean |a - b|; the subgradient at 0 is 0."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    _log_branch(d > 0)
    n = d.size
    val = np.abs(d).sum(dtype=np.float64) / n

    def backward(g):
        s = (np.sign(d) * (float(g) / n)).astype(a.data.dtype)
        return s, -s

    return _result(np.asarray(val), (a, b), backward)


def tv_mean(x: Tensor) -> Tensor:
    """Anisotropic forward-difference TV per (sample, channel), divided by H*W,
    averaged over samples and channels."""
    n, c, h, w = x.shape
    dx = x.data[:, :, :, 1:] - x.data[:, :, :, :-1]
    dy = x.data[:, :, 1:, :] - x.data[:, :, :-1, :]
    _log_branch(dx > 0)
    _log_branch(dy > 0)
    norm = n * c * h * w
    val = (np.abs(dx).sum(dtype=np.float64) + np.abs(dy).sum(dtype=np.float64)) / norm

    def backward(g):
        k = float(g) / norm
        sx, sy = np.sign(dx) * k, np.sign(dy) * k
        gx = np.zeros(x.shape, dtype=np.float64)
        gx[:, :, :, 1:] += sx
        gx[:, :, :, :-1] -= sx
        gx[:, :, 1:, :] += sy
        gx[:, :, :-1, :] -= sy
        return (gx.astype(x.data.dtype),)

    return _result(np.asarray(val), (x,), backward)


def weighted_sum(terms) -> Tensor:
    """sum_i k_i * t_i for scalar tensors given as (k, tensor) pairs."""
    terms = list(terms)
    val = sum(k * float(t.data) for k, t in terms)
    return _result(np.asarray(val, dtype=np.float64), tuple(t for _, t in terms),
                   lambda g: tuple(np.asarray(k * float(g)) for k, _ in terms))
