"""Autodiff core: forward oracles, gradient checks, error contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sst import tensor as T
from sst.tensor import (
    DomainError,
    NumericsError,
    ShapeMismatchError,
    Tensor,
    grad_check,
)

RNG_SEED = 42


class TestForwardOracles:
    def test_matmul_small(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        np.testing.assert_array_equal((a @ b).data, [[17.0], [39.0]])

    def test_matmul_batched_broadcast(self):
        rng = np.random.default_rng(RNG_SEED)
        a = rng.normal(size=(3, 2, 4, 5))
        b = rng.normal(size=(2, 5, 6))
        out = T.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, np.matmul(a, b), rtol=1e-12)

    def test_softmax_frozen(self):
        out = T.softmax(Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(
            out.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-8
        )

    def test_softmax_shift_invariance(self):
        x = np.array([1.0, 2.0, 3.0])
        a = T.softmax(Tensor(x)).data
        b = T.softmax(Tensor(x + 1000.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(RNG_SEED)
        out = T.softmax(Tensor(rng.normal(size=(4, 7))), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-12)

    def test_sigmoid_extremes_stay_finite(self):
        out = T.sigmoid(Tensor([-800.0, 0.0, 800.0]))
        np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0], atol=1e-12)

    def test_reductions_match_numpy(self):
        rng = np.random.default_rng(RNG_SEED)
        x = rng.normal(size=(3, 4, 5))
        np.testing.assert_allclose(T.reduce_sum(Tensor(x), axis=1).data, x.sum(axis=1))
        np.testing.assert_allclose(
            T.reduce_mean(Tensor(x), axis=-1, keepdims=True).data,
            x.mean(axis=-1, keepdims=True),
        )
        np.testing.assert_allclose(T.reduce_max(Tensor(x)).data, x.max())

    def test_elementwise_chain(self):
        x = Tensor([0.5, 1.5])
        out = T.exp(T.log(x)) - x
        np.testing.assert_allclose(out.data, [0.0, 0.0], atol=1e-12)


class TestGradients:
    def test_sin_gradient_is_cos(self):
        x = Tensor(np.array(1.0), requires_grad=True)
        T.sin(x).backward()
        np.testing.assert_allclose(x.grad, np.cos(1.0), atol=1e-12)

    def test_square_sum_gradient(self):
        """d/dx sum(x*x) = 2x, exactly."""
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, -4.0, 6.0])

    def test_backward_twice_doubles_grads(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(x.grad, 2.0 * first)

    def test_shared_subexpression_accumulates(self):
        # y = x + x uses x twice; grad must be 2, not 1
        x = Tensor(np.array(3.0), requires_grad=True)
        (x + x).sum().backward()
        np.testing.assert_allclose(x.grad, 2.0)

    def test_broadcast_add_unbroadcasts_grad(self):
        x = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones((4,)), requires_grad=True)
        (x + b).sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))
        np.testing.assert_array_equal(b.grad, 3.0 * np.ones(4))

    def test_forward_is_pure(self):
        """Running the same graph twice yields bit-identical outputs."""
        rng = np.random.default_rng(RNG_SEED)
        x = Tensor(rng.normal(size=(4, 4)))
        w = Tensor(rng.normal(size=(4, 4)))

        def run():
            return T.softmax(x @ w, axis=-1).sum().item()

        assert run() == run()

    def test_no_grad_tensors_stay_clean(self):
        x = Tensor([1.0, 2.0])
        y = Tensor([3.0, 4.0], requires_grad=True)
        (x * y).sum().backward()
        assert x.grad is None
        np.testing.assert_array_equal(y.grad, [1.0, 2.0])


def _unit_interval(shape, rng):
    return rng.uniform(0.05, 0.95, size=shape)


def _positive(shape, rng):
    return rng.uniform(0.5, 2.0, size=shape)


def _anywhere(shape, rng):
    return rng.normal(size=shape)


# (name, scalar-valued fn of one tensor, domain-safe input maker)
GRAD_CASES = [
    ("matmul", lambda x: T.matmul(x, T.transpose(x)).sum(), _anywhere),
    ("add", lambda x: (x + 2.0 * x).sum(), _anywhere),
    ("sub", lambda x: (x - 0.5 * x).sum(), _anywhere),
    ("mul", lambda x: (x * x).sum(), _anywhere),
    ("div", lambda x: (1.0 / x).sum(), _positive),
    ("neg", lambda x: (-x).sum(), _anywhere),
    ("scale", lambda x: T.scale(x, 3.25).sum(), _anywhere),
    ("exp", lambda x: T.exp(x).sum(), _anywhere),
    ("log", lambda x: T.log(x).sum(), _positive),
    ("sin", lambda x: T.sin(x).sum(), _anywhere),
    ("cos", lambda x: T.cos(x).sum(), _anywhere),
    ("sqrt", lambda x: T.sqrt(x).sum(), _positive),
    ("sigmoid", lambda x: T.sigmoid(x).sum(), _anywhere),
    ("relu", lambda x: T.relu(x).mean(), _positive),
    ("clip", lambda x: T.clip(x, 0.2, 0.8).sum(), _unit_interval),
    ("softmax", lambda x: (T.softmax(x, axis=-1) * T.softmax(x, axis=-1)).sum(), _anywhere),
    ("sum", lambda x: x.sum(axis=0).sum(), _anywhere),
    ("mean", lambda x: x.mean(axis=1, keepdims=True).sum(), _anywhere),
    ("max", lambda x: x.max(axis=-1).sum(), _anywhere),
    ("reshape", lambda x: (x.reshape(12) * x.reshape(12)).sum(), _anywhere),
    ("transpose", lambda x: T.matmul(T.transpose(x), x).sum(), _anywhere),
    ("getitem", lambda x: (x[1:, :2] * x[1:, :2]).sum(), _anywhere),
]


class TestGradCheck:
    @pytest.mark.parametrize("name,fn,maker", GRAD_CASES, ids=[c[0] for c in GRAD_CASES])
    def test_registered_op(self, name, fn, maker):
        rng = np.random.default_rng(RNG_SEED)
        x = Tensor(maker((3, 4), rng))
        assert grad_check(fn, x) < 1e-6

    def test_every_op_has_a_grad_case(self):
        covered = {c[0] for c in GRAD_CASES}
        assert covered == set(T.OPS)

    def test_composite_expression(self):
        rng = np.random.default_rng(RNG_SEED)
        w = Tensor(rng.normal(size=(4, 4)))

        def f(x):
            h = T.sigmoid(x @ w)
            return T.log(h.sum(axis=-1)).mean()

        assert grad_check(f, Tensor(rng.normal(size=(5, 4)))) < 1e-6


class TestErrorContracts:
    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_div_by_zero(self):
        with pytest.raises(DomainError, match="div"):
            Tensor([1.0]) / Tensor([0.0])

    def test_log_of_nonpositive(self):
        with pytest.raises(DomainError, match="log"):
            T.log(Tensor([1.0, 0.0]))

    def test_sqrt_of_negative(self):
        with pytest.raises(DomainError, match="sqrt"):
            T.sqrt(Tensor([-1.0]))

    def test_overflow_names_op(self):
        with pytest.raises(NumericsError, match="exp"):
            T.exp(Tensor([1000.0]))

    def test_nan_input_rejected_at_construction(self):
        with pytest.raises(NumericsError):
            Tensor([np.nan])

    def test_backward_rejects_non_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeMismatchError):
            (x * x).backward()

    def test_empty_reduction_rejected(self):
        with pytest.raises(DomainError):
            Tensor(np.ones((0, 3))).sum(axis=0)


class TestHypothesisProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=6),
           st.integers(min_value=0, max_value=2**31 - 1))
    def test_softmax_is_a_distribution(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        out = T.softmax(Tensor(rng.normal(scale=3.0, size=(rows, cols)))).data
        assert np.all(out >= 0.0)
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(rows), atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_random_affine_chain_grad(self, seed):
        rng = np.random.default_rng(seed)
        w = Tensor(rng.normal(size=(3, 3)))
        b = Tensor(rng.normal(size=(3,)))

        def f(x):
            return T.sigmoid(x @ w + b).sum()

        assert grad_check(f, Tensor(rng.normal(size=(2, 3)))) < 1e-5
