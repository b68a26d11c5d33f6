"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float64 by default). Operations executed while a
Tape is active record backward rules on that tape; Tensor.backward() replays
the tape in reverse and accumulates gradients into requires_grad leaves.
Without an active tape, operations are plain forward computations.

Each training step owns a private tape, so batch members may be evaluated in
parallel worker threads as long as each worker opens its own Tape.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import DimensionError, NumericError

_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = _LOCAL.tapes = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only record of operations for one forward pass."""

    def __init__(self):
        self.nodes = []  # (out, inputs, backward_fn)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def backward(self, out, seed=None):
        if out._tape is not self:
            raise ValueError("output was not recorded on this tape")
        if seed is None:
            if out.data.size != 1:
                raise ValueError(
                    "backward() without a seed requires a scalar output"
                )
            seed = np.ones_like(out.data)
        grads = {id(out): np.asarray(seed, dtype=out.data.dtype)}
        for node_out, inputs, backward_fn in reversed(self.nodes):
            g = grads.pop(id(node_out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._tape is None:  # leaf: accumulate into .grad
                    if inp.grad is None:
                        inp.grad = gi.copy()
                    else:
                        inp.grad = inp.grad + gi
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + gi
                else:
                    grads[id(inp)] = gi


class Tensor:
    """N-dimensional real array with optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._tape = None  # tape that produced this tensor, None for leaves

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def check_finite(self, context=""):
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values encountered {context}".strip())
        return self

    def backward(self, seed=None):
        if self._tape is None:
            raise ValueError("backward() on a tensor with no recorded tape")
        self._tape.backward(self, seed=seed)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return tslice(self, key)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_output(value, inputs, backward_fn):
    tape = active_tape()
    out = Tensor(value, dtype=np.asarray(value).dtype)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append((out, tuple(inputs), backward_fn))
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g (broadcast result shape) back to an input shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops (numpy broadcasting semantics)
# ---------------------------------------------------------------------------

def add(a, b):
    return _make_output(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    return _make_output(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    return _make_output(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a, b):
    return _make_output(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a):
    return _make_output(-a.data, (a,), lambda g: (-g,))


def powc(a, p):
    """Elementwise power with a constant exponent."""
    val = a.data**p
    return _make_output(val, (a,), lambda g: (g * p * a.data ** (p - 1),))


def sqrt(a):
    val = np.sqrt(a.data)
    return _make_output(val, (a,), lambda g: (g * 0.5 / val,))


def exp(a):
    val = np.exp(a.data)
    return _make_output(val, (a,), lambda g: (g * val,))


def log(a):
    return _make_output(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a):
    # stable logistic via tanh
    val = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make_output(val, (a,), lambda g: (g * val * (1.0 - val),))


def silu(a):
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make_output(
        a.data * s,
        (a,),
        lambda g: (g * (s + a.data * s * (1.0 - s)),),
    )


def softplus(a):
    val = np.logaddexp(0.0, a.data)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make_output(val, (a,), lambda g: (g * s,))


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    val = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make_output(val, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    return _make_output(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),)
    )


def permute(a, axes):
    inv = np.argsort(axes)
    return _make_output(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),)
    )


def transpose(a):
    """Swap the last two axes."""
    axes = list(range(a.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return permute(a, tuple(axes))


def tslice(a, key):
    val = a.data[key]

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return _make_output(val, (a,), backward)


def pad(a, pad_width):
    """Constant zero padding; pad_width as in numpy.pad."""
    val = np.pad(a.data, pad_width)
    unpad = tuple(
        slice(lo, lo + n) for (lo, _hi), n in zip(pad_width, a.shape)
    )
    return _make_output(val, (a,), lambda g: (g[unpad],))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    val = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return _make_output(val, tensors, backward)


def gather_flat(a, idx, out_shape):
    """Pick flat indices from a's row-major buffer; inverse scatter-adds."""
    val = a.data.reshape(-1)[idx].reshape(out_shape)

    def backward(g):
        ga = np.zeros(a.data.size, dtype=a.data.dtype)
        np.add.at(ga, idx, g.reshape(-1))
        return (ga.reshape(a.shape),)

    return _make_output(val, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    val = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make_output(val, (a, b), backward)


def linear(x, weight, bias=None):
    """Affine map over the trailing axis: y = x @ weight.T + bias."""
    if x.shape[-1] != weight.shape[-1]:
        raise DimensionError(
            f"linear: input extent {x.shape[-1]} != weight in-extent "
            f"{weight.shape[-1]}"
        )
    y = matmul(x, transpose(weight))
    if bias is not None:
        y = y + bias
    return y


def layer_norm(x, gain, shift, eps=1e-5):
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    if x.shape[-1] != gain.shape[-1] or x.shape[-1] != shift.shape[-1]:
        raise DimensionError("layer_norm: gain/shift extent mismatch")
    mu = tmean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = tmean(xc * xc, axis=-1, keepdims=True)
    xn = xc / sqrt(var + eps)
    return xn * gain + shift


def softmax(x, axis=-1):
    shifted = x - np.max(x.data, axis=axis, keepdims=True)
    e = exp(shifted)
    return e / tsum(e, axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x, kernel, stride=(1, 1), padding=(0, 0)):
    """2D cross-correlation (no kernel flip) over NCHW input.

    x: [N, C, H, W], kernel: [O, C, kh, kw] -> [N, O, H', W'] with
    H' = floor((H + 2*ph - kh)/sh) + 1, likewise W'.
    """
    sh, sw = stride
    ph, pw = padding
    if sh < 1 or sw < 1:
        raise DimensionError("conv2d: stride components must be >= 1")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if c != ck:
        raise DimensionError(
            f"conv2d: input channels {c} != kernel channels {ck}"
        )
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError("conv2d: kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw]  # [N, C, H', W', kh, kw]
    val = np.einsum("nchwuv,ocuv->nohw", windows, kernel.data, optimize=True)

    def backward(g):
        gk = np.einsum("nchwuv,nohw->ocuv", windows, g, optimize=True)
        gxp = np.zeros_like(xp)
        hout, wout = g.shape[2], g.shape[3]
        # scatter each kernel offset back onto the padded input grid
        contrib = np.einsum("nohw,ocuv->nchwuv", g, kernel.data, optimize=True)
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, u : u + hout * sh : sh, v : v + wout * sw : sw] += (
                    contrib[:, :, :, :, u, v]
                )
        gx = gxp[:, :, ph : ph + h, pw : pw + w]
        return (gx, gk)

    return _make_output(val, (x, kernel), backward)


# ---------------------------------------------------------------------------
# first-order linear recurrence (scan) kernel
# ---------------------------------------------------------------------------

def _scan_sequential(a, x):
    h = np.empty_like(x)
    prev = np.zeros(x.shape[:-1], dtype=x.dtype)
    for t in range(x.shape[-1]):
        prev = a[..., t] * prev + x[..., t]
        h[..., t] = prev
    return h


def _scan_blocked(a, x):
    """Doubling-pass inclusive scan; log2(L) vectorized sweeps over t."""
    h = x.copy()
    coef = a.copy()
    shift = 1
    length = x.shape[-1]
    while shift < length:
        h[..., shift:] += coef[..., shift:] * h[..., :-shift]
        coef[..., shift:] = coef[..., shift:] * coef[..., :-shift]
        shift *= 2
    return h


def linear_scan(a, x, mode="sequential"):
    """h_t = a_t * h_{t-1} + x_t along the trailing axis, h_0 = 0.

    mode selects the forward kernel: "sequential" (step-by-step reference)
    or "blocked" (doubling-pass restructuring); both compute the same values.
    """
    if a.shape != x.shape:
        raise DimensionError("linear_scan: coefficient/input shape mismatch")
    if x.shape[-1] < 1:
        raise DimensionError("linear_scan: empty sequence")
    kernel = {"sequential": _scan_sequential, "blocked": _scan_blocked}[mode]
    h = kernel(a.data, x.data)
    finite_per_step = np.isfinite(h).reshape(-1, h.shape[-1]).all(axis=0)
    if not finite_per_step.all():
        step = int(np.argmin(finite_per_step))
        raise NumericError(f"linear_scan: non-finite state at step {step}")

    def backward(g):
        # adjoint recurrence lam_t = g_t + a_{t+1} * lam_{t+1}, run as a
        # forward scan on time-reversed arrays
        a_next = np.roll(np.flip(a.data, axis=-1), 1, axis=-1)
        a_next[..., 0] = 0.0
        lam = kernel(a_next, np.flip(g, axis=-1))
        lam = np.flip(lam, axis=-1)
        h_prev = np.roll(h, 1, axis=-1)
        h_prev[..., 0] = 0.0
        return (lam * h_prev, lam)

    return _make_output(h, (a, x), backward)


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------

def init_weight(shape, fan_in, rng, requires_grad=True):
    """Uniform +-sqrt(1/fan_in); the conventional default."""
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape), requires_grad)
