"""Reverse-mode engine: op semantics, gradient accumulation, finite differences."""

import numpy as np
import pytest
from scipy.special import logsumexp

from lienn import autodiff as ad
from lienn.autodiff import Tensor


def t(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_tensor_basics(rng):
    x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    assert x.shape == (2, 2) and x.ndim == 2 and x.size == 4
    assert x.detach().requires_grad is False
    assert Tensor(5.0).item() == 5.0


def test_backward_requires_scalar(rng):
    x = t(rng, 3)
    with pytest.raises(ValueError):
        ad.add(x, x).backward()
    with pytest.raises(ValueError):
        Tensor(1.0).backward()


def test_arithmetic_matches_numpy(rng):
    a, b = t(rng, 2, 3), t(rng, 2, 3)
    assert np.allclose((a + b).data, a.data + b.data)
    assert np.allclose((a - b).data, a.data - b.data)
    assert np.allclose((a * b).data, a.data * b.data)
    assert np.allclose((a / 2.0).data, a.data / 2.0)
    assert np.allclose((-a).data, -a.data)
    assert np.allclose((2.0 + a).data, 2.0 + a.data)
    with pytest.raises(TypeError):
        a / b


def test_simple_chain_gradient():
    """d/dx sum((2x)^2) = 8x, accumulated through shared nodes."""
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    y = ad.reduce_sum(ad.square(ad.mul(x, 2.0)))
    y.backward()
    assert np.allclose(x.grad, 8.0 * x.data)


def test_reused_tensor_accumulates(rng):
    """A tensor feeding two branches receives the sum of both gradients."""
    x = t(rng, 4)
    y = ad.add(ad.reduce_sum(ad.square(x)), ad.reduce_sum(ad.mul(x, 3.0)))
    y.backward()
    assert np.allclose(x.grad, 2.0 * x.data + 3.0)


def test_broadcast_gradients_unbroadcast(rng):
    """Gradients of broadcast operands sum over the broadcast axes."""
    a = t(rng, 3, 1)
    b = t(rng, 1, 4)
    ad.reduce_sum(ad.mul(a, b)).backward()
    assert a.grad.shape == (3, 1)
    assert b.grad.shape == (1, 4)
    assert np.allclose(a.grad[:, 0], np.full(3, b.data.sum()))


def test_no_grad_blocks_graph(rng):
    x = t(rng, 3)
    with ad.no_grad():
        y = ad.square(x)
    assert y.requires_grad is False
    assert y._parents == ()


def test_relu_zero_subgradient():
    """relu passes gradient only where the input is strictly positive."""
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    ad.reduce_sum(ad.relu(x)).backward()
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


def test_matmul_gradients(rng):
    a, b = t(rng, 3, 4), t(rng, 4, 2)
    ad.reduce_sum(a @ b).backward()
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))


def test_channel_matmul_matches_einsum(rng):
    x, w = t(rng, 2, 8, 3, 5), t(rng, 3, 4)
    out = ad.channel_matmul(x, w)
    assert out.shape == (2, 8, 4, 5)
    assert np.allclose(out.data, np.einsum("bkcn,cd->bkdn", x.data, w.data))
    with pytest.raises(ValueError):
        ad.channel_matmul(t(rng, 2, 8, 3, 5), t(rng, 4, 4))


def test_bilinear_form_matches_einsum(rng, sl3):
    x, y = t(rng, 2, 8, 3, 4), t(rng, 2, 8, 3, 4)
    out = ad.bilinear_form(x, y, sl3.killing)
    assert out.shape == (2, 1, 3, 4)
    ref = np.einsum("bkcn,kl,blcn->bcn", x.data, sl3.killing, y.data)
    assert np.allclose(out.data[:, 0], ref)


def test_bilinear_form_broadcasts_shared_direction(rng, sl3):
    """A (B, K, 1, N) second argument pairs against every channel."""
    x, d = t(rng, 2, 8, 3, 4), t(rng, 2, 8, 1, 4)
    out = ad.bilinear_form(x, d, sl3.killing)
    ref = np.einsum("bkcn,kl,bln->bcn", x.data, sl3.killing, d.data[:, :, 0])
    assert np.allclose(out.data[:, 0], ref)
    ad.reduce_sum(ad.square(out)).backward()
    assert d.grad.shape == (2, 8, 1, 4)


def test_bracket_channels_matches_algebra(rng, sl3):
    u, v = t(rng, 2, 8, 3, 4), t(rng, 2, 8, 3, 4)
    out = ad.bracket_channels(u, v, sl3)
    ref = sl3.bracket_coeffs(
        u.data.transpose(0, 2, 3, 1), v.data.transpose(0, 2, 3, 1)
    ).transpose(0, 3, 1, 2)
    assert np.abs(out.data - ref).max() < 1e-12
    with pytest.raises(ValueError):
        ad.bracket_channels(t(rng, 2, 3, 3, 4), t(rng, 2, 3, 3, 4), sl3)


def test_reshape_and_broadcast_round_trip(rng):
    x = t(rng, 2, 3)
    y = ad.reshape(x, 6)
    z = ad.broadcast_to(ad.reshape(y, (2, 3)), (4, 2, 3))
    ad.reduce_sum(ad.square(z)).backward()
    assert np.allclose(x.grad, 8.0 * x.data)


def test_concat_splits_gradient(rng):
    a, b = t(rng, 2, 2), t(rng, 2, 3)
    out = ad.concat([a, b], axis=1)
    assert out.shape == (2, 5)
    ad.reduce_sum(ad.mul(out, out.data.copy())).backward()
    assert np.allclose(a.grad, a.data)
    assert np.allclose(b.grad, b.data)


def test_where_pass_freezes_mask(rng):
    mask = np.array([True, False, True])
    a, b = t(rng, 3), t(rng, 3)
    out = ad.where_pass(mask, a, b)
    assert np.allclose(out.data, np.where(mask, a.data, b.data))
    ad.reduce_sum(out).backward()
    assert np.array_equal(a.grad, [1.0, 0.0, 1.0])
    assert np.array_equal(b.grad, [0.0, 1.0, 0.0])


def test_reductions_axis_semantics(rng):
    x = t(rng, 2, 3, 4)
    assert ad.reduce_sum(x, axis=1).shape == (2, 4)
    assert ad.reduce_sum(x, axis=(0, 2), keepdims=True).shape == (1, 3, 1)
    assert abs(ad.reduce_mean(x).item() - x.data.mean()) < 1e-12
    s = ad.reduce_mean(x, axis=2)
    assert np.allclose(s.data, x.data.mean(axis=2))
    ad.reduce_sum(s).backward()
    assert np.allclose(x.grad, 0.25)


def test_argmax_and_gather_set(rng):
    """argmax_set picks indices; gather_set routes gradients to them only."""
    x = t(rng, 2, 8, 3, 5)
    scores = rng.normal(size=(2, 3, 5))
    idx = ad.argmax_set(scores, axis=-1)
    assert idx.shape == (2, 3)
    out = ad.gather_set(x, idx)
    assert out.shape == (2, 8, 3, 1)
    for b in range(2):
        for c in range(3):
            assert np.array_equal(out.data[b, :, c, 0], x.data[b, :, c, idx[b, c]])
    ad.reduce_sum(out).backward()
    assert x.grad.sum() == 2 * 8 * 3
    with pytest.raises(ValueError):
        ad.gather_set(x, np.zeros((2, 4), dtype=int))


def test_softmax_cross_entropy_matches_scipy(rng):
    logits = t(rng, 4, 3)
    labels = np.array([0, 2, 1, 1])
    out = ad.softmax_cross_entropy(logits, labels)
    ref = np.mean(
        logsumexp(logits.data, axis=1) - logits.data[np.arange(4), labels]
    )
    assert abs(out.item() - ref) < 1e-12
    out.backward()
    p = np.exp(logits.data - logsumexp(logits.data, axis=1, keepdims=True))
    p[np.arange(4), labels] -= 1.0
    assert np.allclose(logits.grad, p / 4.0)


def test_mse_reduction(rng):
    pred = t(rng, 3, 2)
    target = rng.normal(size=(3, 2))
    out = ad.mse(pred, target)
    assert abs(out.item() - np.mean((pred.data - target) ** 2)) < 1e-12
    out.backward()
    assert np.allclose(pred.grad, 2.0 * (pred.data - target) / 6.0)


def test_grad_check_api(rng):
    """grad_check reports near-zero error for a smooth op and validates inputs."""
    x = t(rng, 3, 2)
    err = ad.grad_check(lambda a: ad.reduce_sum(ad.square(a)), x)
    assert err < 1e-8
    with pytest.raises(ValueError):
        ad.grad_check(lambda a: ad.square(a), t(rng, 2))
    with pytest.raises(ValueError):
        ad.grad_check(lambda a: ad.reduce_sum(a), Tensor(np.zeros(2)))
