import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ilora.core import (AdamState, ConsistencyError, DimensionError, EvaluationError, LrSchedule,
                        Param, ParameterError, Tape, Tensor, UndefinedLossError, adam_step, add,
                        attention, checkpoint, concat, cross_entropy, gelu, grad_check, layer_norm,
                        linear, lr_at, make_rng, matmul, mean_all, mul, repeat_cols, reshape, scale,
                        scatter_rows, softmax_rows, sum_all, take_rows, transpose)


def rand_param(rng, *shape, name="p"):
    return Param(rng.normal(size=shape), name=name)


def weighted(t, w):
    """Scalar with a generic upstream gradient so every output entry is checked."""
    return sum_all(mul(t, Tensor(w)))


# ---------------------------------------------------------------- forward oracles


def test_matmul_examples():
    assert np.array_equal(matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]])).value, [[3.0], [4.0]])
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).value.tolist() == [[11.0]]
    out = matmul(Tensor(np.zeros((2, 3))), Tensor(np.arange(12.0).reshape(3, 4)))
    assert np.array_equal(out.value, np.zeros((2, 4)))


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_softmax_examples():
    assert np.allclose(softmax_rows(Tensor([[0.0, 0.0]])).value, [[0.5, 0.5]], atol=1e-15)
    assert np.allclose(softmax_rows(Tensor([[math.log(2), 0.0]])).value, [[2 / 3, 1 / 3]], atol=1e-15)
    big = softmax_rows(Tensor([[1000.0, 0.0]])).value
    assert np.all(np.isfinite(big)) and np.allclose(big, [[1.0, 0.0]])


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_softmax_rejects_nonpositive_temperature(t):
    with pytest.raises(ParameterError):
        softmax_rows(Tensor([[1.0, 2.0]]), t)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)),
              elements=st.floats(-1e3, 1e3)))
def test_softmax_rows_normalized(m):
    out = softmax_rows(Tensor(m)).value
    assert np.all(np.abs(out.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(out >= 0) and np.all(out <= 1)


def test_cross_entropy_examples():
    assert cross_entropy(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert cross_entropy(Tensor([[30.0, -30.0]]), [0]).item() < 1e-20
    with pytest.raises(UndefinedLossError):
        cross_entropy(Tensor([[0.0, 0.0], [1.0, 2.0]]), [-100, -100])


def test_cross_entropy_ignores_positions():
    logits = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]])
    ref = -np.log(np.exp(logits[1, 2]) / np.exp(logits[1]).sum())
    assert cross_entropy(Tensor(logits), [-100, 2]).item() == pytest.approx(ref, rel=1e-14)


def test_gelu_matches_tanh_formula():
    x = np.linspace(-5, 5, 41)
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
    assert np.allclose(gelu(Tensor(x)).value, ref, atol=1e-14)


def test_layer_norm_forward():
    rng = make_rng(0)
    x = rng.normal(size=(3, 5))
    g, b = rng.normal(size=5), rng.normal(size=5)
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    ref = (x - mu) / np.sqrt(var + 1e-5) * g + b
    assert np.allclose(layer_norm(Tensor(x), Tensor(g), Tensor(b)).value, ref, atol=1e-13)


def test_attention_matches_reference():
    rng = make_rng(1)
    q, k, v = (rng.normal(size=(2, 2, 4, 3)) for _ in range(3))
    allowed = np.tril(np.ones((4, 4), dtype=bool))[None, None]
    s = q @ np.swapaxes(k, -1, -2) / np.sqrt(3)
    s = np.where(allowed, s, -np.inf)
    p = np.exp(s - s.max(-1, keepdims=True))
    p /= p.sum(-1, keepdims=True)
    out = attention(Tensor(q), Tensor(k), Tensor(v), allowed).value
    assert np.allclose(out, p @ v, atol=1e-13)


def test_linear_is_row_vector_product():
    rng = make_rng(2)
    x, w = rng.normal(size=(2, 3, 4)), rng.normal(size=(5, 4))
    assert np.allclose(linear(Tensor(x), Tensor(w)).value, x @ w.T, atol=1e-14)


# ---------------------------------------------------------------- backward oracles


def _ops(rng):
    a = rand_param(rng, 3, 4, name="a")
    b = rand_param(rng, 3, 4, name="b")
    m = rand_param(rng, 4, 2, name="m")
    w = rand_param(rng, 5, 4, name="w")
    row = rand_param(rng, 4, name="row")
    g, beta = rand_param(rng, 4, name="g"), rand_param(rng, 4, name="beta")
    table = rand_param(rng, 6, 4, name="table")
    up, up8, up44, up32, up35 = (rng.normal(size=s) for s in [(3, 4), (3, 8), (4, 4), (3, 2), (3, 5)])
    return {
        "add": (lambda: weighted(add(a, row), up), [a, row]),
        "mul": (lambda: weighted(mul(a, b), up), [a, b]),
        "scale": (lambda: weighted(scale(a, -1.7), up), [a]),
        "gelu": (lambda: weighted(gelu(a), up), [a]),
        "reshape": (lambda: weighted(reshape(reshape(a, (2, 6)), (3, 4)), up), [a]),
        "transpose": (lambda: weighted(transpose(transpose(a, (1, 0)), (1, 0)), up), [a]),
        "concat": (lambda: weighted(concat([a, b], 1), up8), [a, b]),
        "repeat_cols": (lambda: weighted(repeat_cols(m, 2), up44), [m]),
        "take_rows": (lambda: weighted(take_rows(table, np.array([0, 2, 2, 5])), up44), [table]),
        "scatter_rows": (lambda: weighted(scatter_rows(a, (np.array([0, 2]),),
                                                       take_rows(b, np.array([0, 1]))), up), [a, b]),
        "matmul": (lambda: weighted(matmul(a, m), up32), [a, m]),
        "linear": (lambda: weighted(linear(a, w), up35), [a, w]),
        "softmax": (lambda: weighted(softmax_rows(a, 0.7), up), [a]),
        "layer_norm": (lambda: weighted(layer_norm(a, g, beta), up), [a, g, beta]),
        "mean_all": (lambda: mean_all(mul(a, a)), [a]),
        "cross_entropy": (lambda: cross_entropy(a, [1, -100, 3]), [a]),
    }


@pytest.mark.parametrize("op", ["add", "mul", "scale", "gelu", "reshape", "transpose", "concat",
                                "repeat_cols", "take_rows", "scatter_rows", "matmul", "linear",
                                "softmax", "layer_norm", "mean_all", "cross_entropy"])
def test_backward_matches_finite_differences(op):
    f, params = _ops(make_rng(3))[op]
    assert grad_check(f, params, h=1e-5) < 1e-6


def test_attention_backward():
    rng = make_rng(4)
    q, k, v = (rand_param(rng, 1, 2, 3, 2, name=n) for n in "qkv")
    allowed = np.tril(np.ones((3, 3), dtype=bool))[None, None]
    up = rng.normal(size=(1, 2, 3, 2))
    assert grad_check(lambda: weighted(attention(q, k, v, allowed), up), [q, k, v]) < 1e-6


def test_grad_check_examples():
    rng = make_rng(5)
    p = rand_param(rng, 3, 2)
    assert grad_check(lambda: sum_all(p), [p]) < 1e-10
    logit = rand_param(rng, 1, 3)
    assert grad_check(lambda: cross_entropy(logit, [2]), [logit]) < 1e-6
    with pytest.raises(EvaluationError):
        grad_check(lambda: scale(sum_all(p), float("nan")), [p])


def test_frozen_params_collect_no_gradient():
    p = Param(np.ones((2, 2)), frozen=True)
    q = Param(np.ones((2, 2)))
    with Tape() as tape:
        tape.backward(sum_all(mul(p, q)))
    assert np.all(p.grad == 0) and np.all(q.grad == 1)


# ---------------------------------------------------------------- optimizer


def test_adam_zero_grad_is_fixed_point():
    p = Param(np.array([1.0, -2.0]))
    adam_step([p], AdamState.for_params([p]), 0.1)
    assert np.array_equal(p.value, [1.0, -2.0])


def test_adam_first_step_closed_form():
    p = Param(np.array([0.5]))
    p.grad[...] = 1.0
    adam_step([p], AdamState.for_params([p]), 0.1)
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert p.value[0] == pytest.approx(0.5 - 0.1 / (1 + 1e-8), abs=1e-15)
    assert p.grad[0] == 0.0


def test_adam_matches_reference_over_steps():
    rng = make_rng(6)
    p = Param(rng.normal(size=4))
    ref = p.value.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    state = AdamState.for_params([p], weight_decay=0.01)
    for t in range(1, 6):
        g = rng.normal(size=4)
        p.grad[...] = g
        adam_step([p], state, 0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * 0.01 * ref
        ref = ref - 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p.value, ref, atol=1e-14)


def test_adam_frozen_param_untouched():
    p = Param(np.array([1.0]))
    state = AdamState.for_params([p])
    p.frozen = True
    p.grad[...] = 5.0
    adam_step([p], state, 0.1)
    assert p.value[0] == 1.0


def test_adam_shape_drift():
    p = Param(np.zeros(3))
    state = AdamState.for_params([p])
    p.value = np.zeros(4)
    p.grad = np.ones(4)
    with pytest.raises(ConsistencyError):
        adam_step([p], state, 0.1)


# ---------------------------------------------------------------- schedule


def test_lr_schedule_examples():
    s = LrSchedule(max_lr=1e-3, warmup_steps=10, total_steps=110, floor_lr=1e-5)
    assert lr_at(s, 0) == 0.0
    assert lr_at(s, 10) == pytest.approx(1e-3, abs=1e-18)
    assert lr_at(s, 60) == pytest.approx((1e-3 + 1e-5) / 2, rel=1e-12)
    assert lr_at(s, 110) == pytest.approx(1e-5)
    assert lr_at(s, 10_000) == 1e-5


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.integers(1, 400), st.floats(1e-5, 1.0))
def test_lr_schedule_continuity(warmup, extra, max_lr):
    # the bound only holds when the decay span is at least as long as the warmup
    extra = max(extra, warmup)
    s = LrSchedule(max_lr, warmup, warmup + extra, 0.0)
    bound = max_lr * (1 / warmup + math.pi / (warmup + extra))
    lrs = [lr_at(s, k) for k in range(0, warmup + extra + 3)]
    assert max(abs(a - b) for a, b in zip(lrs, lrs[1:])) <= bound + 1e-15


# ---------------------------------------------------------------- rng and checkpoints


def test_rng_streams():
    a = make_rng(7, 1).normal(size=5)
    assert np.array_equal(a, make_rng(7, 1).normal(size=5))
    assert not np.array_equal(a, make_rng(7, 2).normal(size=5))
    assert not np.array_equal(a, make_rng(8, 1).normal(size=5))


def test_checkpoint_layout_matches_format():
    data = checkpoint.dumps({"w": np.array([[1.0, 2.0]]), "é": np.array([3.0])})
    expected = b"ILORA-CKPT" + struct.pack("<IQ", 1, 2)
    expected += struct.pack("<Q", 1) + b"w" + struct.pack("<QQ", 1, 2) + struct.pack("<2d", 1.0, 2.0)
    expected += struct.pack("<Q", 2) + "é".encode() + struct.pack("<QQ", 1, 1) + struct.pack("<d", 3.0)
    assert data == expected


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8),
                       arrays(np.float64, st.tuples(st.integers(0, 4), st.integers(0, 4)),
                              elements=st.floats(allow_nan=False)), max_size=4))
def test_checkpoint_round_trip_is_bit_exact(tensors):
    back = checkpoint.loads(checkpoint.dumps(tensors))
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOPE")
    data = checkpoint.dumps({"x": np.ones((2, 2))})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(data[:-3])
    path = checkpoint.save(tmp_path / "sub" / "a.ckpt", {"x": np.ones(3)})
    assert checkpoint.load(path)["x"].shape == (1, 3)
