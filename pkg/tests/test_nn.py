import numpy as np
import pytest

from minimanip import nn


def _gradcheck_input(build_loss, x0, tol=1e-6):
    x = nn.Tensor(x0.astype(np.float64), requires_grad=True)
    loss = build_loss(x)
    loss.backward()
    analytic = x.grad.copy()
    numeric = nn.finite_difference_grad(
        lambda a: float(build_loss(nn.Tensor(a)).data), x0.astype(np.float64))
    rel = np.abs(analytic - numeric).max() / (np.abs(numeric).max() + 1e-12)
    assert rel < tol, rel


def test_matmul_grad():
    rng = np.random.default_rng(0)
    w = nn.Tensor(rng.normal(size=(5, 4)))
    _gradcheck_input(lambda x: nn.mse(nn.matmul(x, w), 0.3), rng.normal(size=(6, 5)))


def test_batched_matmul_grad():
    rng = np.random.default_rng(1)
    b = nn.Tensor(rng.normal(size=(3, 4, 2)))
    _gradcheck_input(lambda x: nn.mse(nn.matmul(x, b), 0.0), rng.normal(size=(3, 5, 4)))


def test_softmax_ce_grad():
    rng = np.random.default_rng(2)
    t = rng.integers(0, 7, size=5)
    _gradcheck_input(lambda x: nn.cross_entropy(x, t), rng.normal(size=(5, 7)))


def test_layernorm_grad():
    rng = np.random.default_rng(3)
    g = nn.Tensor(rng.normal(size=6) + 1.0)
    b = nn.Tensor(rng.normal(size=6))
    _gradcheck_input(lambda x: nn.mse(nn.layernorm(x, g, b), 0.1), rng.normal(size=(4, 6)))


def test_conv2d_grad_stride():
    rng = np.random.default_rng(4)
    w = nn.Tensor(rng.normal(size=(3, 3, 2, 4)) * 0.4)
    b = nn.Tensor(rng.normal(size=4))
    _gradcheck_input(lambda x: nn.mse(nn.conv2d(x, w, b, stride=2, pad=1), 0.0),
                     rng.normal(size=(2, 6, 6, 2)))


def test_conv2d_weight_grad():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(2, 6, 6, 2))
    w = nn.Tensor(rng.normal(size=(3, 3, 2, 3)) * 0.4, requires_grad=True)
    b = nn.Tensor(np.zeros(3), requires_grad=True)
    loss = nn.mse(nn.conv2d(nn.Tensor(x0), w, b), 0.0)
    loss.backward()
    analytic = w.grad.copy()

    def f(a):
        return float(nn.mse(nn.conv2d(nn.Tensor(x0), nn.Tensor(a), nn.Tensor(b.data)), 0.0).data)

    numeric = nn.finite_difference_grad(f, w.data.copy())
    rel = np.abs(analytic - numeric).max() / np.abs(numeric).max()
    assert rel < 1e-6


def test_upsample_and_silu_grad():
    rng = np.random.default_rng(6)
    _gradcheck_input(lambda x: nn.mse(nn.upsample2x(nn.silu(x)), 0.2),
                     rng.normal(size=(2, 3, 3, 2)))


def test_attention_block_grad():
    rng = np.random.default_rng(7)
    blk = nn.TransformerBlock(6, rng, dtype=np.float64)
    _gradcheck_input(lambda x: nn.mse(blk(x), 0.0), rng.normal(size=(2, 4, 6)), tol=1e-5)


def test_causal_attention_masks_future():
    rng = np.random.default_rng(8)
    attn = nn.SelfAttention(4, rng, causal=True, dtype=np.float64)
    x1 = rng.normal(size=(1, 5, 4))
    x2 = x1.copy()
    x2[0, -1] += 10.0  # only the last token changes
    y1 = attn(nn.Tensor(x1)).data
    y2 = attn(nn.Tensor(x2)).data
    assert np.allclose(y1[0, :-1], y2[0, :-1])
    assert not np.allclose(y1[0, -1], y2[0, -1])


def test_cross_entropy_uniform_logits():
    logits = nn.Tensor(np.zeros((10, 256)))
    targets = np.arange(10) % 256
    assert abs(float(nn.cross_entropy(logits, targets).data) - np.log(256.0)) < 1e-5


def test_adam_reduces_quadratic():
    rng = np.random.default_rng(9)
    p = nn.Param(rng.normal(size=(8,)).astype(np.float64))
    opt = nn.Adam({"p": p}, lr=0.1)
    for _ in range(200):
        loss = nn.mse(p, 0.0)
        p.grad = None
        loss.backward()
        opt.step()
    assert float(np.abs(p.data).max()) < 1e-2


def test_grad_accumulation_two_uses():
    # the same tensor used twice must receive the sum of both paths
    x = nn.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = x + x
    loss = nn.sum_(y)
    loss.backward()
    assert np.allclose(x.grad, [2.0, 2.0])
