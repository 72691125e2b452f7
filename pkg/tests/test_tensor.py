import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iccl_lab import tensor as T
from iccl_lab.tensor import ShapeError, Tensor

from fd import numeric_grad, rel_err

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_relu_sign_boundaries():
    assert T.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_l2_normalize_345():
    np.testing.assert_allclose(T.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8], rtol=0, atol=1e-15)


def test_softmax_symmetric():
    assert T.softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]


def test_sum_grad_is_ones():
    w = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    T.sum(w).backward()
    assert w.grad.tolist() == [1.0, 1.0, 1.0]


def test_half_square_norm_grad_is_w():
    w = Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True)
    T.scale(T.sum(T.mul(w, w)), 0.5).backward()
    np.testing.assert_array_equal(w.grad, w.data)


def test_backward_twice_rejected():
    w = Tensor(np.ones(3), requires_grad=True)
    loss = T.sum(w)
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_non_scalar_backward_rejected():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        T.mul(w, 2.0).backward()


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ShapeError, match=r"\(3,\).*\(4,\)"):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_shared_leaf_accumulates():
    w = Tensor(np.array([2.0]), requires_grad=True)
    T.sum(T.add(T.mul(w, 3.0), T.mul(w, w))).backward()
    assert w.grad.tolist() == [3.0 + 4.0]


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite))
def test_softmax_sums_to_one_and_positive(x):
    p = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(p > 0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 6), elements=finite))
def test_l2_normalize_unit_norm(x):
    norms = np.linalg.norm(x, axis=-1)
    out = T.l2_normalize(Tensor(x)).data
    ok = norms >= 1e-12
    np.testing.assert_allclose(np.linalg.norm(out[ok], axis=-1), 1.0, atol=1e-9)


def test_l2_normalize_tiny_norm_boundary():
    v = np.array([[1e-12, 0.0], [0.0, 0.0]])
    out = T.l2_normalize(Tensor(v)).data
    assert abs(np.linalg.norm(out[0]) - 1.0) < 1e-9
    assert np.all(np.isfinite(out))


def _check(build, shapes, rng, positive=False):
    xs = [rng.standard_normal(s) for s in shapes]
    if positive:
        xs = [np.abs(x) + 0.5 for x in xs]
    ts = [Tensor(x, requires_grad=True) for x in xs]
    w = rng.standard_normal(build(*ts).shape)
    T.sum(T.mul(build(*ts), w)).backward()
    analytic = np.concatenate([t.grad.ravel() for t in ts])

    def f():
        return float(np.sum(build(*[Tensor(x) for x in xs]).data * w))

    numeric = numeric_grad(f, xs)
    assert rel_err(analytic, numeric) <= 1e-4


OPS = {
    "matmul": (lambda a, b: T.matmul(a, b), [(3, 4), (4, 2)], False),
    "linear": (lambda x, w, b: T.linear(x, w, b), [(5, 3), (2, 3), (2,)], False),
    "relu": (lambda a: T.relu(a), [(4, 5)], False),
    "l2_normalize": (lambda a: T.l2_normalize(a), [(4, 3)], False),
    "softmax": (lambda a: T.softmax(a), [(3, 4)], False),
    "log_softmax": (lambda a: T.log_softmax(a), [(3, 4)], False),
    "logsumexp": (lambda a: T.logsumexp(a), [(3, 4)], False),
    "log": (lambda a: T.log(a), [(3, 3)], True),
    "exp": (lambda a: T.exp(a), [(3, 3)], False),
    "mul_broadcast": (lambda a, b: T.mul(a, b), [(3, 4), (4,)], False),
    "sub": (lambda a, b: T.sub(a, b), [(3, 4), (3, 4)], False),
    "mean_axis": (lambda a: T.mean(a, axis=0), [(5, 2)], False),
    "dot": (lambda a, b: T.dot(a, b), [(3, 4), (3, 4)], False),
    "pick": (lambda a: T.pick(a, [0, 2, 1]), [(3, 4)], False),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name, rng):
    build, shapes, positive = OPS[name]
    for _ in range(10):
        _check(build, shapes, rng, positive)


def test_finite_outputs_on_large_logits():
    x = Tensor(np.array([[1e4, -1e4, 0.0]]), requires_grad=True)
    out = T.sum(T.log_softmax(x))
    out.backward()
    assert np.all(np.isfinite(out.data)) and np.all(np.isfinite(x.grad))
