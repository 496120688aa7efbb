"""Layers: value oracles, mode semantics, enumeration, gradient checks."""

import logging
import math

import numpy as np
import pytest

from conftest import check_grad
from entromix import layers, tensor as T
from entromix.errors import ConfigError, DomainError, ShapeError
from entromix.tensor import Tensor


def _zero_params(module):
    for _, p in module.named_parameters():
        p.data[...] = 0.0


# ---------------------------------------------------------------------------
# Linear
# ---------------------------------------------------------------------------


def test_linear_identity_weights_passthrough(rng):
    lin = layers.Linear(4, 4, rng)
    lin.weight.data[...] = np.eye(4, dtype=np.float32)
    lin.bias.data[...] = 0.0
    x = rng.normal(size=(3, 4)).astype(np.float32)
    np.testing.assert_allclose(lin(Tensor(x)).numpy(), x, rtol=1e-6)


def test_linear_zero_weight_gives_bias(rng):
    lin = layers.Linear(4, 2, rng)
    lin.weight.data[...] = 0.0
    lin.bias.data[...] = np.array([0.5, -1.5], dtype=np.float32)
    out = lin(Tensor(np.ones((3, 4), dtype=np.float32))).numpy()
    np.testing.assert_allclose(out, np.tile([0.5, -1.5], (3, 1)), rtol=1e-6)


def test_linear_matches_scalar_loop(rng):
    with T.use_dtype(np.float64):
        lin = layers.Linear(5, 3, rng)
        x = rng.normal(size=(4, 5))
        got = lin(Tensor(x)).numpy()
    w, b = lin.weight.numpy(), lin.bias.numpy()
    want = np.zeros((4, 3))
    for i in range(4):
        for o in range(3):
            acc = b[o]
            for j in range(5):
                acc += x[i, j] * w[o, j]
            want[i, o] = acc
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_linear_trailing_extent_checked(rng):
    lin = layers.Linear(4, 2, rng)
    with pytest.raises(ShapeError):
        lin(Tensor(np.ones((3, 5), dtype=np.float32)))


def test_linear_init_within_bound(rng):
    lin = layers.Linear(100, 50, rng)
    bound = math.sqrt(1.0 / 100)
    assert np.abs(lin.weight.numpy()).max() <= bound
    assert np.abs(lin.bias.numpy()).max() <= bound


def test_linear_batched_input(rng):
    with T.use_dtype(np.float64):
        lin = layers.Linear(6, 2, rng)
        x = rng.normal(size=(2, 3, 6))
        got = lin(Tensor(x)).numpy()
    want = x @ lin.weight.numpy().T + lin.bias.numpy()
    np.testing.assert_allclose(got, want, rtol=1e-10)


# ---------------------------------------------------------------------------
# LayerNorm
# ---------------------------------------------------------------------------


def test_layer_norm_canonical():
    ln = layers.LayerNorm(3)
    got = ln(Tensor([[1.0, 2.0, 3.0]])).numpy()[0]
    np.testing.assert_allclose(got, [-1.224745, 0.0, 1.224745], atol=2e-5)


def test_layer_norm_constant_input_gives_beta(rng):
    ln = layers.LayerNorm(4)
    ln.beta.data[...] = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32)
    out = ln(Tensor(np.full((2, 4), 7.0, dtype=np.float32))).numpy()
    np.testing.assert_allclose(out, np.tile([1.0, 2.0, 3.0, 4.0], (2, 1)), atol=1e-5)


def test_layer_norm_affine_passthrough():
    ln = layers.LayerNorm(2)
    ln.gamma.data[...] = 2.0
    ln.beta.data[...] = 1.0
    x = np.array([[-1.0, 1.0]], dtype=np.float32)  # already zero-mean unit-var
    np.testing.assert_allclose(ln(Tensor(x)).numpy(), 2.0 * x + 1.0, atol=1e-4)


def test_layer_norm_standardizes_per_sample(rng):
    ln = layers.LayerNorm(32)
    out = ln(Tensor(rng.normal(size=(8, 32)) * 5.0 + 3.0)).numpy()
    assert np.abs(out.mean(axis=-1)).max() < 1e-5
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-3


def test_layer_norm_mode_independent(rng):
    ln = layers.LayerNorm(8)
    x = Tensor(rng.normal(size=(4, 8)))
    outs = []
    for mode in ("train", "infer", "adapt"):
        ln.set_mode(mode)
        with T.no_grad():
            outs.append(ln(x).numpy())
    np.testing.assert_array_equal(outs[0], outs[1])
    np.testing.assert_array_equal(outs[0], outs[2])


def test_grad_layer_norm_affine(rng):
    with T.use_dtype(np.float64):
        ln = layers.LayerNorm(8)
        ln.gamma.data[...] = rng.normal(size=8)
        ln.beta.data[...] = rng.normal(size=8)
        w = rng.normal(size=(3, 8))
        check_grad(lambda x: T.tensor_sum(ln(x) * Tensor(w)), rng.normal(size=(3, 8)))


# ---------------------------------------------------------------------------
# BatchNorm
# ---------------------------------------------------------------------------


def test_batch_norm_train_standardizes_batch(rng):
    bn = layers.BatchNorm(6).set_mode("train")
    out = bn(Tensor(rng.normal(size=(64, 6)) * 3.0 + 2.0)).numpy()
    assert np.abs(out.mean(axis=0)).max() < 1e-5
    assert np.abs(out.var(axis=0) - 1.0).max() < 1e-3


def test_batch_norm_train_updates_running_stats(rng):
    bn = layers.BatchNorm(3, momentum=0.1).set_mode("train")
    x = rng.normal(size=(128, 3)) * 2.0 + 5.0
    with T.no_grad():
        bn(Tensor(x.astype(np.float32)))
    want_mean = 0.1 * x.astype(np.float32).mean(axis=0)
    want_var = 0.9 * 1.0 + 0.1 * x.astype(np.float32).var(axis=0)
    np.testing.assert_allclose(bn.running_mean, want_mean, rtol=1e-4)
    np.testing.assert_allclose(bn.running_var, want_var, rtol=1e-4)


def test_batch_norm_infer_uses_running_stats(rng):
    bn = layers.BatchNorm(2).set_mode("infer")
    bn.running_mean[...] = [1.0, -1.0]
    bn.running_var[...] = [4.0, 0.25]
    x = np.array([[3.0, 0.0]], dtype=np.float32)
    got = bn(Tensor(x)).numpy()[0]
    want = (x[0] - np.array([1.0, -1.0])) / np.sqrt(np.array([4.0, 0.25]) + 1e-5)
    np.testing.assert_allclose(got, want, rtol=1e-4)


def test_batch_norm_adapt_ignores_running_history(rng):
    x = Tensor(rng.normal(size=(16, 5)).astype(np.float32))
    a = layers.BatchNorm(5).set_mode("adapt")
    b = layers.BatchNorm(5).set_mode("adapt")
    b.running_mean[...] = 100.0
    b.running_var[...] = 42.0
    with T.no_grad():
        np.testing.assert_array_equal(a(x).numpy(), b(x).numpy())
    # and the histories themselves were not touched
    np.testing.assert_array_equal(b.running_mean, np.full(5, 100.0, dtype=np.float32))


def test_batch_norm_infer_depends_on_history(rng):
    x = Tensor(rng.normal(size=(8, 4)).astype(np.float32))
    a = layers.BatchNorm(4).set_mode("infer")
    b = layers.BatchNorm(4).set_mode("infer")
    b.running_mean[...] = 3.0
    with T.no_grad():
        assert not np.array_equal(a(x).numpy(), b(x).numpy())


def test_batch_norm_single_row_flagged(rng, caplog):
    bn = layers.BatchNorm(4).set_mode("adapt")
    with caplog.at_level(logging.WARNING, logger="entromix.layers"):
        with T.no_grad():
            out = bn(Tensor(rng.normal(size=(1, 4)).astype(np.float32))).numpy()
    assert np.isfinite(out).all()
    assert any("single sample row" in r.message for r in caplog.records)


def test_batch_norm_normalizes_over_all_leading_axes(rng):
    bn = layers.BatchNorm(4).set_mode("adapt")
    x = rng.normal(size=(6, 5, 4)).astype(np.float32)
    with T.no_grad():
        out = bn(Tensor(x)).numpy()
    flat = out.reshape(-1, 4)
    assert np.abs(flat.mean(axis=0)).max() < 1e-5


def test_grad_batch_norm_adapt_mode(rng):
    with T.use_dtype(np.float64):
        bn = layers.BatchNorm(5).set_mode("adapt")
        bn.gamma.data[...] = rng.normal(size=5)
        bn.beta.data[...] = rng.normal(size=5)
        w = rng.normal(size=(6, 5))
        check_grad(lambda x: T.tensor_sum(bn(x) * Tensor(w)), rng.normal(size=(6, 5)))


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------


def test_dropout_rate_zero_identity(rng):
    d = layers.Dropout(0.0, rng).set_mode("train")
    x = Tensor(rng.normal(size=(4, 4)).astype(np.float32))
    assert d(x) is x


def test_dropout_infer_identity(rng):
    d = layers.Dropout(0.9, rng).set_mode("infer")
    x = Tensor(rng.normal(size=(4, 4)).astype(np.float32))
    assert d(x) is x


def test_dropout_rejects_rate_one(rng):
    with pytest.raises(DomainError):
        layers.Dropout(1.0, rng)
    with pytest.raises(DomainError):
        layers.Dropout(-0.1, rng)


def test_dropout_kept_fraction(rng):
    d = layers.Dropout(0.3, rng).set_mode("train")
    x = Tensor(np.ones((100, 1000), dtype=np.float32))
    with T.no_grad():
        out = d(x).numpy()
    kept = (out != 0).mean()
    assert abs(kept - 0.7) < 0.01
    # inverted scaling keeps the expectation
    np.testing.assert_allclose(out[out != 0], 1.0 / 0.7, rtol=1e-5)


# ---------------------------------------------------------------------------
# AttentionBlock
# ---------------------------------------------------------------------------


def test_attention_rejects_indivisible_heads(rng):
    with pytest.raises(ConfigError):
        layers.AttentionBlock(10, 3, rng)


def test_attention_single_token(rng):
    with T.use_dtype(np.float64):
        blk = layers.AttentionBlock(8, 2, rng).set_mode("infer")
        x = rng.normal(size=(2, 1, 8))
        with T.no_grad():
            out, weights = blk(Tensor(x), return_weights=True)
    np.testing.assert_allclose(weights.numpy(), 1.0, atol=1e-12)
    # degenerate softmax: output = x + out_proj(v_proj(ln(x)))
    h = blk.norm(Tensor(x)).numpy()
    v = h @ blk.v_proj.weight.numpy().T + blk.v_proj.bias.numpy()
    want = x + (v @ blk.out_proj.weight.numpy().T + blk.out_proj.bias.numpy())
    np.testing.assert_allclose(out.numpy(), want, rtol=1e-10)


def test_attention_weight_rows_sum_to_one(rng):
    blk = layers.AttentionBlock(16, 4, rng).set_mode("infer")
    x = Tensor(rng.normal(size=(3, 7, 16)).astype(np.float32))
    with T.no_grad():
        _, weights = blk(x, return_weights=True)
    sums = weights.numpy().sum(axis=-1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-6)


def test_attention_permutation_equivariance(rng):
    with T.use_dtype(np.float64):
        blk = layers.AttentionBlock(8, 2, rng).set_mode("infer")
        x = rng.normal(size=(1, 5, 8))
        perm = rng.permutation(5)
        with T.no_grad():
            out = blk(Tensor(x)).numpy()
            out_perm = blk(Tensor(x[:, perm, :])).numpy()
    np.testing.assert_allclose(out[:, perm, :], out_perm, atol=1e-10)


def test_attention_zero_projections_identity(rng):
    blk = layers.AttentionBlock(8, 2, rng).set_mode("infer")
    _zero_params(blk)
    x = Tensor(rng.normal(size=(2, 4, 8)).astype(np.float32))
    with T.no_grad():
        np.testing.assert_allclose(blk(x).numpy(), x.numpy(), atol=1e-7)


def test_grad_attention_block(rng):
    with T.use_dtype(np.float64):
        blk = layers.AttentionBlock(6, 2, rng).set_mode("infer")
        w = rng.normal(size=(2, 3, 6))
        check_grad(
            lambda x: T.tensor_sum(blk(x) * Tensor(w)),
            rng.normal(size=(2, 3, 6)),
            rtol=1e-4,
        )


# ---------------------------------------------------------------------------
# FeedForwardBlock
# ---------------------------------------------------------------------------


def test_ffn_zero_weights_identity(rng):
    blk = layers.FeedForwardBlock(8, rng).set_mode("infer")
    _zero_params(blk)
    x = Tensor(rng.normal(size=(2, 3, 8)).astype(np.float32))
    with T.no_grad():
        np.testing.assert_allclose(blk(x).numpy(), x.numpy(), atol=1e-7)


def test_ffn_hidden_width(rng):
    blk = layers.FeedForwardBlock(8, rng, expansion=4)
    assert blk.up.weight.shape == (32, 8)
    assert blk.down.weight.shape == (8, 32)


def test_grad_ffn_block(rng):
    with T.use_dtype(np.float64):
        blk = layers.FeedForwardBlock(6, rng).set_mode("infer")
        w = rng.normal(size=(2, 3, 6))
        check_grad(
            lambda x: T.tensor_sum(blk(x) * Tensor(w)),
            rng.normal(size=(2, 3, 6)),
            rtol=1e-4,
        )


# ---------------------------------------------------------------------------
# Module plumbing
# ---------------------------------------------------------------------------


def test_parameter_enumeration_unique_and_complete(rng):
    blk = layers.AttentionBlock(8, 2, rng)
    named = list(blk.named_parameters())
    names = [n for n, _ in named]
    assert len(names) == len(set(names))
    ids = [id(p) for _, p in named]
    assert len(ids) == len(set(ids))
    # norm affine + 4 projections (weight+bias each)
    assert len(named) == 2 + 8
    assert "norm.gamma" in names and "q_proj.weight" in names


def test_buffers_are_not_parameters(rng):
    bn = layers.BatchNorm(4)
    param_names = {n for n, _ in bn.named_parameters()}
    buffer_names = {n for n, _ in bn.named_buffers()}
    assert param_names == {"gamma", "beta"}
    assert buffer_names == {"running_mean", "running_var"}


def test_set_mode_propagates(rng):
    blk = layers.AttentionBlock(8, 2, rng)
    blk.set_mode("adapt")
    assert all(m.mode == "adapt" for m in blk.modules())
    with pytest.raises(DomainError):
        blk.set_mode("jogging")


def test_norm_layers_discoverable(rng):
    blk = layers.FeedForwardBlock(8, rng)
    norms = [m for m in blk.modules() if isinstance(m, layers.NormBase)]
    assert len(norms) == 1 and norms[0].kind == "layer_norm"


def test_zero_grad_clears_all(rng):
    with T.use_dtype(np.float64):
        lin = layers.Linear(3, 2, rng)
        loss = T.tensor_sum(lin(Tensor(np.ones((2, 3)), requires_grad=True)))
        loss.backward()
    assert lin.weight.grad is not None
    lin.zero_grad()
    assert lin.weight.grad is None and lin.bias.grad is None
