#!/usr/bin/env python3
"""
Тесты временного модуля: окна, контекст, MHCA, пулинг, проверка градиентов
"""

import sys
import os
import math

import numpy as np
import pytest

# Добавляем корень проекта в путь для импорта
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import InvalidInputError
from modules.temporal import (
    ContextBuffer, FeatureTensor, MhcaParams, PoolParams, ProjParams, TemporalHead, TemporalVariant,
    attention_weights, attn_check, attn_pool, context_mean, cross_entropy, enrich_variant, grad_check, mhca,
    pipeline_gradients, pipeline_loss, pool_weights, project, relative_error, softmax, temporal_enrich,
    window_merge, window_partition,
)


def random_params(dim, heads, seed=0, zero_output=False):
    rng = np.random.default_rng(seed)
    p = MhcaParams.init(dim, heads, rng, zero_output=zero_output)
    return MhcaParams(heads=heads, w_q=p.w_q, b_q=rng.normal(size=dim), w_k=p.w_k, w_v=p.w_v,
                      b_v=rng.normal(size=dim), w_o=p.w_o, b_o=rng.normal(size=dim) if not zero_output else p.b_o)


def loop_mhca(fq, fkv, p):
    """Slot-by-slot reference implementation with plain Python loops."""
    w_count, slots, d = fq.shape
    dh = d // p.heads
    out = np.zeros_like(fq)
    for w in range(w_count):
        q = fq[w] @ p.w_q + p.b_q
        k = fkv[w] @ p.w_k
        v = fkv[w] @ p.w_v + p.b_v
        o = np.zeros((slots, d))
        for head in range(p.heads):
            cols = slice(head * dh, (head + 1) * dh)
            for i in range(slots):
                scores = [float(q[i, cols] @ k[j, cols]) / math.sqrt(dh) for j in range(slots)]
                top = max(scores)
                exps = [math.exp(s - top) for s in scores]
                total = sum(exps)
                for j in range(slots):
                    o[i, cols] += exps[j] / total * v[j, cols]
        out[w] = o @ p.w_o + p.b_o
    return out


# ----------------------------------------------------------------------------
# Window partition and context
# ----------------------------------------------------------------------------

def test_window_partition_slot_order():
    f = np.arange(16, dtype=float).reshape(1, 16, 1)
    windows = window_partition(f)
    assert windows.axes == ("windows", "slots", "channels")
    assert windows.shape == (4, 4, 1)
    assert windows.values[0, :, 0].tolist() == [0, 1, 4, 5]
    assert windows.values[1, :, 0].tolist() == [2, 3, 6, 7]
    assert windows.values[2, :, 0].tolist() == [8, 9, 12, 13]
    assert windows.values[3, :, 0].tolist() == [10, 11, 14, 15]


def test_window_merge_inverts_partition():
    f = np.random.default_rng(0).normal(size=(3, 36, 5))
    windows = window_partition(f)
    assert windows.shape == (27, 4, 5)
    assert np.array_equal(window_merge(windows, 3, 36).values, f)


def test_window_partition_rejects_bad_patch_counts():
    for patches in (8, 9, 0):
        with pytest.raises(InvalidInputError):
            window_partition(np.zeros((1, patches, 2)))
    with pytest.raises(InvalidInputError):
        window_merge(np.zeros((3, 4, 2)), 1, 16)


def test_feature_tensor_validation():
    with pytest.raises(InvalidInputError):
        FeatureTensor(("a",), np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        FeatureTensor(("a",), np.array([1.0, np.nan]))
    t = FeatureTensor(("windows", "slots", "channels"), np.zeros((2, 4, 3)))
    assert t.size("channels") == 3


def test_context_mean_keeps_last_l_frames():
    buf = ContextBuffer(2)
    for value in (1.0, 2.0, 4.0):
        buf.push(np.full((3, 4, 2), value))
    assert len(buf) == 2
    assert np.array_equal(context_mean(buf).values, np.full((3, 4, 2), 3.0))


def test_context_of_first_frame_is_the_frame_itself():
    buf = ContextBuffer(4)
    current = np.random.default_rng(1).normal(size=(2, 4, 3))
    assert np.array_equal(buf.context(current).values, current)
    with pytest.raises(InvalidInputError):
        context_mean(buf)
    buf.push(current)
    with pytest.raises(InvalidInputError):
        buf.push(np.zeros((3, 4, 3)))
    with pytest.raises(InvalidInputError):
        ContextBuffer(0)


# ----------------------------------------------------------------------------
# Cross-attention
# ----------------------------------------------------------------------------

def test_identical_context_slots_give_the_value_projection():
    p = random_params(4, 2, seed=3)
    x = np.array([0.5, -1.0, 2.0, 0.25])
    fkv = np.broadcast_to(x, (2, 4, 4)).copy()
    fq = np.random.default_rng(4).normal(size=(2, 4, 4))
    expected = (x @ p.w_v + p.b_v) @ p.w_o + p.b_o
    out = mhca(fq, fkv, p).values
    assert np.allclose(out, np.broadcast_to(expected, out.shape), rtol=0, atol=1e-12)


def test_zero_output_projection_makes_enrichment_an_identity():
    p = random_params(4, 2, seed=5, zero_output=True)
    f = np.random.default_rng(6).normal(size=(3, 4, 4))
    ctx = np.random.default_rng(7).normal(size=(3, 4, 4))
    assert np.array_equal(mhca(f, ctx, p).values, np.zeros_like(f))
    assert np.array_equal(temporal_enrich(f, ctx, p).values, f)


def test_mhca_matches_loop_reference():
    for heads, dim in ((1, 2), (2, 4), (4, 8)):
        p = random_params(dim, heads, seed=dim)
        rng = np.random.default_rng(100 + dim)
        fq = rng.normal(size=(3, 4, dim))
        fkv = rng.normal(size=(3, 4, dim))
        assert np.allclose(mhca(fq, fkv, p).values, loop_mhca(fq, fkv, p), rtol=0, atol=1e-12)


def test_windows_are_independent():
    p = random_params(4, 2, seed=8)
    rng = np.random.default_rng(9)
    fq = rng.normal(size=(5, 4, 4))
    fkv = rng.normal(size=(5, 4, 4))
    order = np.array([3, 0, 4, 1, 2])
    out = mhca(fq, fkv, p).values
    permuted = mhca(fq[order], fkv[order], p).values
    assert np.allclose(permuted, out[order], rtol=0, atol=1e-14)


def test_attention_rows_are_normalised():
    p = random_params(8, 2, seed=10)
    rng = np.random.default_rng(11)
    attn = attention_weights(rng.normal(size=(6, 4, 8)) * 10, rng.normal(size=(6, 4, 8)) * 10, p)
    assert attn.shape == (6, 2, 4, 4)
    assert np.max(np.abs(attn.sum(axis=-1) - 1.0)) <= 1e-12
    assert (attn >= 0).all()


def test_softmax_is_shift_invariant():
    x = np.array([[1.0, 2.0, 3.0], [1000.0, 1001.0, 999.0]])
    assert np.allclose(softmax(x), softmax(x - 50.0), rtol=0, atol=1e-15)
    assert np.all(np.isfinite(softmax(x)))


def test_mhca_rejects_bad_shapes():
    p = random_params(4, 2)
    with pytest.raises(InvalidInputError):
        mhca(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)), p)
    with pytest.raises(InvalidInputError):
        mhca(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), p)
    with pytest.raises(InvalidInputError):
        mhca(np.zeros((2, 4, 6)), np.zeros((2, 4, 6)), p)
    with pytest.raises(InvalidInputError):
        MhcaParams.init(6, 4, np.random.default_rng(0))


# ----------------------------------------------------------------------------
# Pooling, projection and loss
# ----------------------------------------------------------------------------

def test_zero_query_pools_to_the_slot_mean():
    windows = np.random.default_rng(12).normal(size=(3, 4, 5))
    tokens = attn_pool(windows, PoolParams(np.zeros(5)))
    assert tokens.axes == ("windows", "channels")
    assert np.allclose(tokens.values, windows.mean(axis=1), rtol=0, atol=1e-12)
    weights = pool_weights(windows, PoolParams(np.random.default_rng(13).normal(size=5)))
    assert np.max(np.abs(weights.sum(axis=-1) - 1.0)) <= 1e-12


def test_project_examples():
    tokens = np.random.default_rng(14).normal(size=(2, 3))
    assert np.array_equal(project(tokens, ProjParams(np.eye(3), np.zeros(3))).values, tokens)
    bias = np.array([1.0, -2.0])
    assert np.array_equal(project(tokens, ProjParams(np.zeros((3, 2)), bias)).values, np.tile(bias, (2, 1)))
    with pytest.raises(InvalidInputError):
        project(tokens, ProjParams(np.zeros((4, 2)), bias))


def test_cross_entropy_values():
    assert abs(cross_entropy([0.0, 0.0], 0) - math.log(2)) <= 1e-15
    assert abs(cross_entropy([1.0, 2.0, 3.0], 2) - 0.40760596444) <= 1e-10
    assert abs(cross_entropy([10.0, 0.0], 0) - 4.5398899e-5) <= 1e-12
    assert cross_entropy([1000.0, 0.0], 0) == 0.0
    with pytest.raises(InvalidInputError):
        cross_entropy([1.0, 2.0], 2)
    with pytest.raises(InvalidInputError):
        cross_entropy([1.0, float("inf")], 0)


def test_variants():
    rng = np.random.default_rng(15)
    f = rng.normal(size=(2, 4, 4))
    ctx = rng.normal(size=(2, 4, 4))
    assert np.array_equal(enrich_variant("single", f, ctx).values, f)
    assert np.array_equal(enrich_variant("add", f, ctx).values, f + ctx)
    assert enrich_variant("concat", f, ctx).shape == (4, 4, 4)
    p = random_params(4, 2, seed=16)
    assert np.array_equal(enrich_variant("cross-attention", f, ctx, p).values, temporal_enrich(f, ctx, p).values)
    with pytest.raises(InvalidInputError):
        enrich_variant("cross-attention", f, ctx)
    with pytest.raises(ValueError):
        enrich_variant("lstm", f, ctx)


def test_head_tensors_round_trip():
    head = TemporalHead.init(4, 2, 3, np.random.default_rng(17), cold_start=False)
    tensors = head.tensors()
    assert tuple(tensors) == TemporalHead.tensor_names()
    again = TemporalHead.from_tensors(2, tensors)
    for name, value in again.tensors().items():
        assert np.array_equal(value, tensors[name])
    with pytest.raises(InvalidInputError):
        TemporalHead.from_tensors(2, {k: v for k, v in tensors.items() if k != "pool.query"})


def test_cold_start_head():
    head = TemporalHead.init(4, 2, 3, np.random.default_rng(18))
    assert not head.mhca.w_o.any() and not head.pool.query.any()
    f = np.random.default_rng(19).normal(size=(2, 4, 4))
    assert np.array_equal(temporal_enrich(f, f, head.mhca).values, f)
    with pytest.raises(InvalidInputError):
        TemporalHead.init(4, 2, 1, np.random.default_rng(0))


# ----------------------------------------------------------------------------
# Gradient verification
# ----------------------------------------------------------------------------

def quadratic(tensors):
    return 0.5 * float(np.sum(tensors["x"] ** 2))


def test_grad_check_on_quadratic():
    params = {"x": np.array([1.0, -2.0, 0.5])}
    report = grad_check(quadratic, params, {"x": params["x"]})
    assert report.passed
    assert report.max_error <= 1e-8


def test_doubled_gradient_is_caught():
    params = {"x": np.array([1.0, -2.0, 0.5])}
    report = grad_check(quadratic, params, {"x": 2 * params["x"]})
    assert not report.passed
    assert abs(report.max_error - 0.5) <= 1e-6
    assert report.worst == "x"


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert relative_error(np.array([1e-9]), np.array([0.0]))[0] == pytest.approx(0.1)
    with pytest.raises(InvalidInputError):
        grad_check(quadratic, {"x": np.ones(2)}, {"x": np.ones(2)}, h=0.0)


def test_full_chain_gradients():
    rng = np.random.default_rng(20)
    head = TemporalHead.init(8, 2, 5, rng, cold_start=False)
    f = rng.normal(size=(4, 4, 8))
    ctx = rng.normal(size=(4, 4, 8))

    def loss_fn(tensors):
        return pipeline_loss(TemporalHead.from_tensors(2, tensors), f, ctx, 3)

    analytic = pipeline_gradients(head, f, ctx, 3)
    report = grad_check(loss_fn, head.tensors(), analytic)
    assert report.max_error <= 1e-4, report.errors

    doubled = {name: 2 * g for name, g in analytic.items()}
    control = grad_check(loss_fn, head.tensors(), doubled)
    assert not control.passed
    assert abs(control.max_error - 0.5) <= 0.01


@pytest.mark.parametrize("variant", [v.value for v in TemporalVariant])
def test_gradients_for_every_variant(variant):
    rng = np.random.default_rng(21)
    head = TemporalHead.init(4, 2, 3, rng, cold_start=False)
    f = rng.normal(size=(2, 4, 4))
    ctx = rng.normal(size=(2, 4, 4))

    def loss_fn(tensors):
        return pipeline_loss(TemporalHead.from_tensors(2, tensors), f, ctx, 1, variant)

    report = grad_check(loss_fn, head.tensors(), pipeline_gradients(head, f, ctx, 1, variant))
    assert report.passed, report.errors


def test_attn_check_defaults_pass():
    report = attn_check(heads=2, dim=8, windows=4, seed=0)
    assert report.passed
    assert report.grad.max_error <= 1e-4
    assert report.softmax_residual <= 1e-9
    assert report.residual_identity
    data = report.to_dict()
    assert data["passed"] is True
    assert set(data["per_param"]) == set(TemporalHead.tensor_names())
    assert data["loss"] == report.loss > 0.0


def test_attn_check_loss_depends_on_context_length():
    losses = [attn_check(heads=2, dim=8, windows=4, seed=0, context_length=l).loss for l in (1, 2, 4, 5)]
    assert all(np.isfinite(losses))
    assert len(set(losses)) == 4


def test_attn_check_rejects_indivisible_heads():
    with pytest.raises(InvalidInputError):
        attn_check(heads=4, dim=6, windows=4)
    with pytest.raises(InvalidInputError):
        attn_check(heads=2, dim=8, windows=0)
