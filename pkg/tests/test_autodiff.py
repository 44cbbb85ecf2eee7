from __future__ import annotations

import numpy as np
import pytest

from rsvp import autodiff as ad
from rsvp.autodiff import Tensor

from . import op_builders
from .oracles import finite_difference_grads, max_rel_error


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _check_grads(build, arrays, tol=1e-5, h=1e-5):
    """build() -> scalar Tensor from the given arrays; compares backward
    gradients against central finite differences."""
    loss = build()
    loss.backward()
    analytic = [t.grad for t in arrays]
    numeric = finite_difference_grads(lambda: build().item(), [t.data for t in arrays], h=h)
    for a, n in zip(analytic, numeric):
        assert a is not None
        assert max_rel_error(a, n) <= tol


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = ad.matmul(eye, m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_shape_mismatch_names_both_shapes(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((4, 2)))
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 2\)"):
            ad.matmul(a, b)

    def test_gradients_match_finite_differences(self, rng):
        ad.set_default_dtype("float64")
        a = _leaf(rng, (3, 4))
        b = _leaf(rng, (4, 2))
        _check_grads(lambda: ad.tsum(ad.matmul(a, b)), [a, b])

    def test_batched_gradients(self, rng):
        ad.set_default_dtype("float64")
        a = _leaf(rng, (2, 3, 3, 4))
        b = _leaf(rng, (2, 3, 4, 2))
        _check_grads(lambda: ad.tsum(ad.matmul(a, b)), [a, b])


class TestSoftmax:
    def test_uniform_on_zeros(self):
        out = ad.softmax(Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, np.full(3, 1 / 3), atol=1e-7)

    def test_large_logits_do_not_overflow(self):
        out = ad.softmax(Tensor(np.array([1000.0, 0.0])))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)

    def test_matches_extended_precision(self, rng):
        import mpmath

        from .oracles import mp_softmax

        ad.set_default_dtype("float64")
        x = rng.normal(size=5)
        out = ad.softmax(Tensor(x)).data
        expected = mp_softmax(x)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_slices_sum_to_one(self, rng):
        x = Tensor(rng.normal(size=(4, 7)) * 10)
        out = ad.softmax(x, axis=1).data
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)

    def test_empty_axis_rejected(self):
        with pytest.raises(ValueError, match="empty axis"):
            ad.softmax(Tensor(np.zeros((2, 0))), axis=1)


class TestCosineSimilarity:
    def test_orthogonal(self):
        out = ad.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0]))
        assert abs(out.item()) < 1e-7

    def test_positive_scaling_invariance(self):
        out = ad.cosine_similarity(Tensor([2.0, 2.0]), Tensor([1.0, 1.0]))
        assert abs(out.item() - 1.0) < 1e-6

    def test_scale_invariance_random(self, rng):
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        base = ad.cosine_similarity(Tensor(a), Tensor(b)).item()
        for c in (0.01, 3.0, 250.0):
            scaled = ad.cosine_similarity(Tensor(c * a), Tensor(b)).item()
            assert abs(scaled - base) < 1e-6

    def test_matches_direct_formula(self, rng):
        ad.set_default_dtype("float64")
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        expected = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert abs(ad.cosine_similarity(Tensor(a), Tensor(b)).item() - expected) < 1e-6

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ad.cosine_similarity(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_self_similarity_is_one(self, rng):
        v = rng.normal(size=5)
        assert abs(ad.cosine_similarity(Tensor(v), Tensor(v)).item() - 1.0) < 1e-6


class TestDropout:
    def test_p_zero_is_identity(self, rng):
        x = Tensor(rng.normal(size=(10,)))
        out = ad.dropout(x, 0.0, np.random.default_rng(0), training=True)
        np.testing.assert_array_equal(out.data, x.data)

    def test_eval_mode_is_identity(self, rng):
        x = Tensor(rng.normal(size=(10,)))
        out = ad.dropout(x, 0.9, np.random.default_rng(0), training=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_zeroed_fraction_near_p(self):
        x = Tensor(np.ones(10_000))
        out = ad.dropout(x, 0.5, np.random.default_rng(7), training=True)
        frac = float(np.mean(out.data == 0.0))
        assert abs(frac - 0.5) < 0.02

    def test_survivors_scaled(self):
        x = Tensor(np.ones(1000))
        out = ad.dropout(x, 0.25, np.random.default_rng(3), training=True)
        survivors = out.data[out.data != 0]
        np.testing.assert_allclose(survivors, 1.0 / 0.75, rtol=1e-6)

    def test_distinct_substreams_give_distinct_views(self):
        x = Tensor(np.ones(100))
        gen = np.random.default_rng(5)
        a = ad.dropout(x, 0.3, gen, training=True)
        b = ad.dropout(x, 0.3, gen, training=True)
        assert not np.array_equal(a.data, b.data)

    def test_invalid_p(self):
        x = Tensor(np.ones(3))
        for p in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                ad.dropout(x, p, np.random.default_rng(0))


class TestBackward:
    def test_sum_of_leaf_gives_ones(self):
        w = Tensor(np.arange(4.0), requires_grad=True)
        ad.backward(ad.tsum(w))
        np.testing.assert_array_equal(w.grad, np.ones(4))

    def test_accumulation_doubles_without_zeroing(self):
        w = Tensor(np.arange(4.0), requires_grad=True)
        ad.tsum(w).backward()
        first = w.grad.copy()
        ad.tsum(w).backward()
        np.testing.assert_array_equal(w.grad, 2 * first)

    def test_non_scalar_loss_rejected(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(w + w)

    def test_loss_without_grad_dependencies_rejected(self):
        with pytest.raises(ValueError):
            ad.backward(Tensor(np.array(1.0)))

    def test_shared_leaf_used_twice(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        loss = ad.tsum(ad.mul(w, w))
        loss.backward()
        np.testing.assert_allclose(w.grad, [4.0])


@pytest.mark.parametrize("name", op_builders.DIFFERENTIABLE_OPS)
def test_finite_difference_across_ops(name, rng):
    """Randomized gradient check for every differentiable operation."""
    ad.set_default_dtype("float64")
    for trial in range(10):
        r = np.random.default_rng(abs(hash((name, trial))) % (2**32))
        build, leaves = op_builders.make_builder(name, r, trial)
        _check_grads(build, leaves)


def test_precision_context_switches_dtype():
    assert Tensor(np.zeros(2)).dtype == np.float32
    with ad.precision("float64"):
        assert Tensor(np.zeros(2)).dtype == np.float64
    assert Tensor(np.zeros(2)).dtype == np.float32


def test_determinism_same_inputs_same_bits(rng):
    x = rng.normal(size=(4, 4))
    a = ad.softmax(Tensor(x), axis=1).data
    b = ad.softmax(Tensor(x), axis=1).data
    assert np.array_equal(a, b)


def test_values_stay_finite_through_deep_graph(rng):
    x = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
    y = x
    for _ in range(20):
        y = ad.tanh(ad.matmul(y, x))
    loss = ad.tsum(y)
    loss.backward()
    assert np.all(np.isfinite(loss.data))
    assert np.all(np.isfinite(x.grad))
