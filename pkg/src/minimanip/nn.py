"""Minimal reverse-mode autodiff on numpy, with just the ops the models need.

Tensors wrap ndarrays and record a tape; backward() walks it in reverse
topological order. Convolutions go through im2col + GEMM and recompute the
column matrix in the backward pass instead of retaining it (it dwarfs the
activations). Everything is deterministic given a seeded numpy Generator.
"""
from __future__ import annotations

import math

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data)

    def _accumulate(self, g):
        # Stored by reference; backward fns that pass one array to two parents
        # copy for the second (see add), so in-place accumulation is safe.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node._backward = None  # release closures and grads as we go
                node._parents = ()
                node.grad = None

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dt = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dt))


def _unbroadcast(g, shape):
    """Sum grad g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data, parents, backward, requires_grad=None):
    out = Tensor(data)
    if requires_grad is None:
        requires_grad = any(p.requires_grad for p in parents)
    out.requires_grad = requires_grad
    if requires_grad:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


# -- elementwise --------------------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)

    def bwd(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        if ga is not None and gb is not None and ga is gb:
            gb = gb.copy()
        if ga is not None:
            a._accumulate(ga)
        if gb is not None:
            b._accumulate(gb)

    return _make(a.data + b.data, (a, b), bwd)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bwd)


def _sigmoid(z):
    # exp(-|z|) never overflows; branch-free and vectorized
    e = np.exp(-np.abs(z))
    denom = 1.0 + e
    return np.where(z >= 0, 1.0 / denom, e / denom)


def silu(x):
    s = _sigmoid(x.data)
    y = x.data * s

    def bwd(g):
        x._accumulate(g * (s * (1.0 + x.data * (1.0 - s))))

    return _make(y, (x,), bwd)


def relu(x):
    mask = x.data > 0

    def bwd(g):
        x._accumulate(g * mask)

    return _make(x.data * mask, (x,), bwd)


def tanh(x):
    y = np.tanh(x.data)

    def bwd(g):
        x._accumulate(g * (1.0 - y * y))

    return _make(y, (x,), bwd)


# -- shape --------------------------------------------------------------

def reshape(x, shape):
    old = x.shape

    def bwd(g):
        x._accumulate(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), bwd)


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        x._accumulate(np.ascontiguousarray(g.transpose(inv)))

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), bwd)


def concat(xs, axis):
    sizes = [x.shape[axis] for x in xs]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        for x, lo, hi in zip(xs, offs[:-1], offs[1:]):
            if x.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                x._accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return _make(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), bwd)


# -- reductions ---------------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    def bwd(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).astype(x.dtype, copy=True))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(ge, x.shape).astype(x.dtype, copy=True))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), bwd)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- matmul -------------------------------------------------------------

def matmul(a, b):
    """a @ b. Supports (..., m, k) @ (k, n) and same-leading-batch (..., m, k) @ (..., k, n).

    Weight products (2-D rhs) are flattened into one large GEMM instead of a
    per-slice batched loop.
    """
    flat_rhs = b.ndim == 2 and a.ndim > 2
    if flat_rhs:
        k = a.shape[-1]
        y = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        y = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            if flat_rhs:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            a._accumulate(ga)
        if b.requires_grad:
            if flat_rhs:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            b._accumulate(gb)

    return _make(y, (a, b), bwd)


# -- softmax / losses ---------------------------------------------------

def softmax(x, axis=-1):
    y = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def bwd(g):
        gy = g * y
        dot = gy.sum(axis=axis, keepdims=True)
        gy -= y * dot
        x._accumulate(gy)

    return _make(y, (x,), bwd)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bwd(g):
        sm = np.exp(y)
        x._accumulate(g - sm * g.sum(axis=axis, keepdims=True))

    return _make(y, (x,), bwd)


def gather_last(x, idx):
    """Pick x[i, idx[i]] from a 2-D tensor."""
    rows = np.arange(x.shape[0])
    idx = np.asarray(idx).reshape(-1)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        x._accumulate(gx)

    return _make(x.data[rows, idx], (x,), bwd)


def cross_entropy(logits, targets):
    """Mean NLL of integer `targets` (any shape) under logits (*targets.shape, n_classes)."""
    lp = log_softmax(logits, axis=-1)
    flat = lp.reshape(-1, lp.shape[-1])
    picked = gather_last(flat, np.asarray(targets).reshape(-1))
    return mul(mean(picked), -1.0)


def mse(a, b):
    """Mean squared error over all elements."""
    d = a - _as_tensor(b, like=a)
    return mean(mul(d, d))


# -- normalization ------------------------------------------------------

def layernorm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale/shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xn = x.data - mu
    var = np.mean(np.square(xn), axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn *= inv

    def bwd(g):
        n = x.shape[-1]
        if gamma.requires_grad:
            gamma._accumulate((g * xn).reshape(-1, n).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            term = gx - gx.mean(axis=-1, keepdims=True) - xn * (gx * xn).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    return _make(xn * gamma.data + beta.data, (x, gamma, beta), bwd)


# -- conv / resize ------------------------------------------------------

def conv1x1(x, w, b):
    """Pointwise conv on (N,H,W,C): a single flat GEMM, no data movement."""
    c, o = w.shape[2], w.shape[3]
    wmat = w.data.reshape(c, o)
    y = x.data.reshape(-1, c) @ wmat + b.data
    y = y.reshape(x.shape[:3] + (o,))

    def bwd(g):
        gmat = g.reshape(-1, o)
        if w.requires_grad or b.requires_grad:
            w._accumulate((x.data.reshape(-1, c).T @ gmat).reshape(1, 1, c, o))
            b._accumulate(gmat.sum(axis=0))
        if x.requires_grad:
            x._accumulate((gmat @ wmat.T).reshape(x.shape))

    return _make(y, (x, w, b), bwd)


def conv2d(x, w, b, stride=1, pad=1):
    """x (N,H,W,C), w (kh,kw,C,O), b (O,) -> (N,Ho,Wo,O).

    Computed as a sum of kh*kw shifted GEMMs rather than im2col: traffic stays
    proportional to the tensor size instead of kh*kw times it.
    """
    kh, kw, c, o = w.shape
    if kh == 1 and kw == 1 and stride == 1:
        return conv1x1(x, w, b)
    n, h, wd, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    rows = n * ho * wo
    y = np.empty((rows, o), dtype=x.dtype)
    scratch = np.empty((rows, c), dtype=x.dtype)
    tmp = np.empty((rows, o), dtype=x.dtype)
    first = True
    for i in range(kh):
        for j in range(kw):
            np.copyto(scratch.reshape(n, ho, wo, c),
                      xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :])
            np.matmul(scratch, w.data[i, j], out=y if first else tmp)
            if not first:
                y += tmp
            first = False
    y += b.data
    y = y.reshape(n, ho, wo, o)

    def bwd(g):
        gmat = g.reshape(rows, o)
        xp2 = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
        if b.requires_grad:
            b._accumulate(gmat.sum(axis=0))
        gx = np.zeros_like(xp2) if x.requires_grad else None
        buf = np.empty((rows, c), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride), slice(None))
                if w.requires_grad:
                    np.copyto(buf.reshape(n, ho, wo, c), xp2[sl])
                    if w.grad is None:
                        w.grad = np.zeros_like(w.data)
                    w.grad[i, j] += buf.T @ gmat
                if gx is not None:
                    np.matmul(gmat, w.data[i, j].T, out=buf)
                    gx[sl] += buf.reshape(n, ho, wo, c)
        if gx is not None:
            x._accumulate(gx[:, pad:gx.shape[1] - pad, pad:gx.shape[2] - pad, :] if pad else gx)

    return _make(y, (x, w, b), bwd)


def upsample2x(x):
    """Nearest-neighbor 2x upsample of (N,H,W,C)."""
    n, h, w, c = x.shape
    y = np.empty((n, h, 2, w, 2, c), dtype=x.dtype)
    y[...] = x.data[:, :, None, :, None, :]
    y = y.reshape(n, 2 * h, 2 * w, c)

    def bwd(g):
        n2, h2, w2, c2 = g.shape
        x._accumulate(g.reshape(n2, h2 // 2, 2, w2 // 2, 2, c2).sum(axis=(2, 4)))

    return _make(y, (x,), bwd)


# -- parameters / modules ------------------------------------------------

class Param(Tensor):
    """Trainable tensor."""

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


class Module:
    """Parameter container; subclasses define fields that are Params or Modules."""

    def params(self, prefix=""):
        out = {}
        for name, v in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(v, Param):
                out[key] = v
            elif isinstance(v, Module):
                out.update(v.params(prefix=key + "."))
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, Module):
                        out.update(item.params(prefix=f"{key}.{i}."))
                    elif isinstance(item, Param):
                        out[f"{key}.{i}"] = item
        return out

    def n_params(self):
        return sum(p.data.size for p in self.params().values())

    def zero_grad(self):
        for p in self.params().values():
            p.grad = None

    def astype(self, dtype):
        for p in self.params().values():
            p.data = p.data.astype(dtype)
        return self

    def load_state(self, state):
        own = self.params()
        missing = set(own) ^ set(state)
        if missing:
            raise ValueError(f"parameter names do not match checkpoint: {sorted(missing)[:5]}")
        for k, p in own.items():
            if p.data.shape != state[k].shape:
                raise ValueError(f"shape mismatch for {k}: {p.data.shape} vs {state[k].shape}")
            p.data = state[k].astype(p.data.dtype)

    def state(self):
        return {k: p.data.copy() for k, p in self.params().items()}


class Linear(Module):
    def __init__(self, n_in, n_out, rng, scale=None, dtype=np.float32):
        s = scale if scale is not None else math.sqrt(2.0 / n_in)
        self.w = Param(rng.normal(0.0, s, size=(n_in, n_out)).astype(dtype))
        self.b = Param(np.zeros(n_out, dtype=dtype))

    def __call__(self, x):
        return matmul(x, self.w) + self.b


class Conv2d(Module):
    """3x3 (or kxk) conv over channels-last maps."""

    def __init__(self, c_in, c_out, rng, k=3, stride=1, dtype=np.float32):
        s = math.sqrt(2.0 / (c_in * k * k))
        self.w = Param(rng.normal(0.0, s, size=(k, k, c_in, c_out)).astype(dtype))
        self.b = Param(np.zeros(c_out, dtype=dtype))
        self.stride = stride
        self.pad = k // 2

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class UpBlock(Module):
    """Nearest 2x upsample followed by a pointwise channel map."""

    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.proj = Conv2d(c_in, c_out, rng, k=1, dtype=dtype)

    def __call__(self, x):
        return self.proj(upsample2x(x))


class LayerNorm(Module):
    def __init__(self, n, dtype=np.float32):
        self.g = Param(np.ones(n, dtype=dtype))
        self.b = Param(np.zeros(n, dtype=dtype))

    def __call__(self, x):
        return layernorm(x, self.g, self.b)


class SelfAttention(Module):
    """Single-head self-attention over (B, T, D), optionally causal."""

    def __init__(self, d, rng, causal=False, dtype=np.float32):
        s = math.sqrt(1.0 / d)
        self.wq = Param(rng.normal(0.0, s, size=(d, d)).astype(dtype))
        self.wk = Param(rng.normal(0.0, s, size=(d, d)).astype(dtype))
        self.wv = Param(rng.normal(0.0, s, size=(d, d)).astype(dtype))
        self.wo = Param(rng.normal(0.0, s, size=(d, d)).astype(dtype))
        self.causal = causal
        self.d = d

    def __call__(self, x):
        q = matmul(x, self.wq)
        k = matmul(x, self.wk)
        v = matmul(x, self.wv)
        scores = mul(matmul(q, swap_last(k)), 1.0 / math.sqrt(self.d))
        if self.causal:
            t = x.shape[-2]
            bias = np.triu(np.full((t, t), -1e9, dtype=x.dtype), k=1)
            scores = scores + Tensor(bias)
        att = softmax(scores, axis=-1)
        return matmul(matmul(att, v), self.wo)


def swap_last(x):
    """Transpose the last two axes (any leading batch dims)."""
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


class TransformerBlock(Module):
    """Pre-norm attention + MLP block on (B, T, D)."""

    def __init__(self, d, rng, causal=False, mlp_mult=2, dtype=np.float32):
        self.ln1 = LayerNorm(d, dtype=dtype)
        self.attn = SelfAttention(d, rng, causal=causal, dtype=dtype)
        self.ln2 = LayerNorm(d, dtype=dtype)
        self.fc1 = Linear(d, mlp_mult * d, rng, dtype=dtype)
        self.fc2 = Linear(mlp_mult * d, d, rng, scale=math.sqrt(1.0 / (mlp_mult * d)), dtype=dtype)

    def __call__(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(relu(self.fc1(self.ln2(x))))


class Adam:
    """Standard Adam with optional global-norm clipping."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=None):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.clip = clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        if self.clip is not None:
            norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if norm > self.clip:
                scale = self.clip / (norm + 1e-12)
                grads = {k: g * scale for k, g in grads.items()}
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            p = self.params[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def sinusoidal_embedding(t, dim, max_period=10000.0):
    """Timestep -> (len(t), dim) sin/cos features (plain ndarray, no grad)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def finite_difference_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar f at ndarray x (float64)."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g
