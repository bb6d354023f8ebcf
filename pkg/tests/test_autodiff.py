import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from naolab import autodiff as ad
from naolab.errors import DimensionError, NumericError, StateError

finite = st.floats(-1, 1, allow_nan=False, allow_infinity=False)


def _fd_check(build, shapes, seed=0, step=1e-6, tol=1e-5):
    rng = np.random.default_rng(seed)
    leaves = [ad.leaf(rng.uniform(-1, 1, s)) for s in shapes]
    root = build(*leaves)
    ad.forward_eval(root)
    grads = ad.backward(root)
    for lf in leaves:
        g = grads[lf]
        for idx in np.ndindex(lf.shape):
            orig = lf.value[idx]
            lf.value[idx] = orig + step
            up = ad.forward_eval(root)[0]
            lf.value[idx] = orig - step
            dn = ad.forward_eval(root)[0]
            lf.value[idx] = orig
            fd = (up - dn) / (2 * step)
            assert abs(g[idx] - fd) <= tol * max(abs(fd), abs(g[idx]), 1e-3)
    return grads


def test_matmul_hand_values():
    a = ad.constant([[1.0, 2.0], [3.0, 4.0]])
    b = ad.constant([[1.0], [1.0]])
    assert np.array_equal(ad.forward_eval(ad.matmul(a, b)), [[3.0], [7.0]])


@given(arrays(np.float64, (3, 4), elements=finite))
def test_identity_matmul_is_exact(A):
    out = ad.forward_eval(ad.matmul(ad.constant(np.eye(3)), ad.constant(A)))
    assert np.array_equal(out, A)
    out = ad.forward_eval(ad.matmul(ad.constant(A), ad.constant(np.eye(4))))
    assert np.array_equal(out, A)


def test_softmax_of_zero_row_is_uniform():
    out = ad.forward_eval(ad.row_softmax(ad.constant(np.zeros((2, 5)))))
    assert np.allclose(out, 0.2, rtol=0, atol=1e-15)


@given(arrays(np.float64, (4, 6), elements=st.floats(-30, 30)))
def test_softmax_rows_are_distributions(x):
    out = ad.forward_eval(ad.row_softmax(ad.constant(x)))
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_gradient_of_sum_is_ones():
    x = ad.leaf(np.arange(4.0))
    root = ad.sum(x)
    ad.forward_eval(root)
    assert np.array_equal(ad.backward(root)[x], np.ones(4))


def test_gradient_of_sum_of_squares():
    x = ad.leaf([1.0, 2.0, 3.0])
    root = ad.sum(ad.mul(x, x))
    ad.forward_eval(root)
    assert np.allclose(ad.backward(root)[x], [2.0, 4.0, 6.0])


@pytest.mark.parametrize("build,shapes", [
    (lambda a, b: ad.sum(ad.add(a, b)), [(3, 2), (2,)]),
    (lambda a, b: ad.sum(ad.mul(ad.sub(a, b), a)), [(2, 3), (2, 3)]),
    (lambda a, b: ad.sum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), [(2, 3, 4), (4, 2)]),
    (lambda a: ad.sum(ad.mul(ad.row_softmax(a), ad.constant(np.arange(12.0).reshape(3, 4)))), [(3, 4)]),
    (lambda a: ad.sum(ad.mul(ad.leaky_relu(a), ad.leaky_relu(a))), [(5,)]),
    (lambda a: ad.sum(ad.mul(ad.transpose(a), ad.constant(np.arange(6.0).reshape(3, 2)))), [(2, 3)]),
    (lambda a: ad.sum(ad.mul(ad.sum(a, axis=1, keepdims=True), ad.sum(a, axis=1, keepdims=True))), [(2, 3, 2)]),
    (lambda a: ad.sum(ad.mul(ad.sum(a, axis=0), ad.constant([1.0, -2.0]))), [(3, 2)]),
    (lambda a, b: ad.sum(ad.mul(ad.concat([a, b], axis=0), ad.concat([a, b], axis=0))), [(2, 2), (1, 2)]),
    (lambda a: ad.sum(ad.mul(ad.take(a, 1, 1, 3), ad.take(a, 1, 0, 2))), [(2, 4)]),
    (lambda a: ad.sum(ad.mul(ad.reshape(a, (3, 2)), ad.constant(np.arange(6.0).reshape(3, 2)))), [(2, 3)]),
    (lambda a: ad.sum(ad.scale(ad.mul(a, a), -2.5)), [(4,)]),
])
def test_primitive_gradients_match_finite_differences(build, shapes):
    _fd_check(build, shapes)


def test_gradient_accumulates_over_fan_out():
    x = ad.leaf([0.5, -1.0])
    y = ad.mul(x, x)
    root = ad.sum(ad.add(y, ad.mul(y, x)))
    ad.forward_eval(root)
    g = ad.backward(root)[x]
    assert np.allclose(g, 2 * x.value + 3 * x.value ** 2)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        ad.add(ad.constant(np.zeros(3)), ad.constant(np.zeros(4)))


def test_non_finite_result_raises():
    x = ad.leaf([1e308])
    root = ad.sum(ad.scale(x, 10.0))
    with pytest.raises(NumericError, match="scale"):
        ad.forward_eval(root)
    with pytest.raises(NumericError):
        ad.leaf([np.nan])


def test_backward_before_forward_raises():
    x = ad.leaf([1.0])
    with pytest.raises(StateError):
        ad.backward(ad.sum(ad.mul(x, x)))


def test_repeated_forward_is_pure():
    rng = np.random.default_rng(1)
    a = ad.leaf(rng.standard_normal((3, 3)))
    root = ad.sum(ad.matmul(a, ad.row_softmax(a)))
    assert ad.forward_eval(root)[0] == ad.forward_eval(root)[0]


def test_constants_receive_no_gradient():
    x = ad.leaf([1.0, 2.0])
    c = ad.constant([3.0, 4.0])
    root = ad.sum(ad.mul(x, c))
    ad.forward_eval(root)
    grads = ad.backward(root)
    assert set(grads) == {x}


def test_adam_zero_gradient_leaves_parameters():
    p = {"w": np.array([1.0, -2.0])}
    st_ = ad.AdamState(lr=0.1)
    for _ in range(3):
        p, st_ = ad.adam_step(p, {"w": np.zeros(2)}, st_)
    assert np.array_equal(p["w"], [1.0, -2.0])
    assert st_.step == 3


def test_adam_first_step_hand_value():
    p, st_ = ad.adam_step({"w": np.array([0.0])}, {"w": np.array([1.0])}, ad.AdamState(lr=0.1))
    assert p["w"][0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)
    assert st_.m["w"].shape == (1,)


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, ad.AdamState())


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(7)
        p, s = {"w": rng.standard_normal(5)}, ad.AdamState(lr=0.01)
        for _ in range(20):
            p, s = ad.adam_step(p, {"w": np.sin(p["w"])}, s)
        return p["w"]
    assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    params = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([np.pi])}
    path = tmp_path / "x.ckpt"
    ad.save_checkpoint(path, params)
    back = ad.load_checkpoint(path)
    assert set(back) == set(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        ad.load_checkpoint(p)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_batched_matmul_gradient_shapes(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a = ad.leaf(rng.standard_normal((2, m, k)))
    b = ad.leaf(rng.standard_normal((k, n)))
    root = ad.sum(ad.matmul(a, b))
    ad.forward_eval(root)
    g = ad.backward(root)
    assert g[a].shape == a.shape and g[b].shape == b.shape
    assert np.allclose(g[b], a.value.sum(axis=(0, 1))[:, None] * np.ones((1, n)))
