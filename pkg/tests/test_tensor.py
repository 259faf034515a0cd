"""Tensor kernel: forward values against hand oracles, gradients against
finite differences, optimizer arithmetic, and serialization round-trips."""

import numpy as np
import pytest

import pcseg.tensor as T
from pcseg.gradcheck import OP_CHECKS, check_op
from pcseg.geometry import EmptyMaskError
from pcseg.tensor import AdamW, Parameter, Tensor, finite_difference_check


class TestForwardOracles:
    def test_matmul_identity(self):
        a = Tensor(np.random.default_rng(0).standard_normal((4, 4)))
        out = T.matmul(Tensor(np.eye(4)), a)
        np.testing.assert_allclose(out.data, a.data)

    def test_matmul_zero(self):
        a = Tensor(np.random.default_rng(1).standard_normal((3, 4)))
        out = T.matmul(a, Tensor(np.zeros((4, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 2)))

    def test_matmul_triple_loop(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        want = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    want[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, want, atol=1e-12)

    def test_concat_axis1_shape(self):
        a = Tensor(np.zeros((4, 1, 8)))
        b = Tensor(np.zeros((4, 1, 8)))
        assert T.concat([a, b], axis=1).shape == (4, 2, 8)

    def test_concat_with_empty(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        empty = Tensor(np.zeros((0, 3)))
        np.testing.assert_array_equal(T.concat([a, empty], axis=0).data, a.data)

    def test_split_concat_round_trip(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((5, 6)))
        left = T.narrow(x, 1, 0, 2)
        right = T.narrow(x, 1, 2, 4)
        np.testing.assert_array_equal(T.concat([left, right], axis=1).data, x.data)

    def test_transpose_involution(self):
        x = Tensor(np.random.default_rng(4).standard_normal((2, 5, 8)))
        np.testing.assert_array_equal(
            T.transpose_first_two(T.transpose_first_two(x)).data, x.data
        )

    def test_transpose_shape_and_indices(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 5, 8))
        out = T.transpose_first_two(Tensor(x)).data
        assert out.shape == (5, 2, 8)
        for i in range(2):
            for j in range(5):
                for k in range(8):
                    assert out[j, i, k] == x[i, j, k]

    def test_elu_plus_one_values(self):
        x = Tensor(np.array([0.0, 2.5, -20.0]))
        out = T.elu_plus_one(x).data
        assert out[0] == 1.0
        assert out[1] == 3.5
        np.testing.assert_allclose(out[2], np.exp(-20.0), rtol=1e-12)

    def test_elu_plus_one_positive_is_shift(self):
        x = np.random.default_rng(6).uniform(0.01, 5, size=10)
        np.testing.assert_array_equal(T.elu_plus_one(Tensor(x)).data, x + 1.0)

    def test_layer_norm_constant_row(self):
        gain, bias = Tensor(np.ones(4)), Tensor(np.zeros(4))
        out = T.layer_norm(Tensor(np.full((3, 4), 7.0)), gain, bias)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_layer_norm_standardizes(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((6, 32)) * 3 + 1
        out = T.layer_norm(Tensor(x), Tensor(np.ones(32)), Tensor(np.zeros(32))).data
        assert np.abs(out.mean(axis=1)).max() < 1e-10
        assert np.abs(out.var(axis=1) - 1).max() < 1e-8

    def test_mlp_zero_weights_broadcast_bias(self):
        rng = np.random.default_rng(8)
        params = type("P", (), {})()
        params.w1 = Tensor(np.zeros((4, 5)))
        params.b1 = Tensor(rng.standard_normal(5))
        params.w2 = Tensor(np.zeros((5, 3)))
        params.b2 = Tensor(rng.standard_normal(3))
        out = T.mlp_forward(Tensor(rng.standard_normal((6, 4))), params).data
        np.testing.assert_allclose(out, np.broadcast_to(params.b2.data, (6, 3)))

    def test_mlp_identity_configuration_passes_through(self):
        # offset keeps every pre-activation positive, where elu is exact identity
        rng = np.random.default_rng(9)
        x = rng.uniform(-1, 1, size=(5, 4))
        params = type("P", (), {})()
        params.w1 = Tensor(np.eye(4))
        params.b1 = Tensor(np.full(4, 10.0))
        params.w2 = Tensor(np.eye(4))
        params.b2 = Tensor(np.full(4, -10.0))
        np.testing.assert_allclose(T.mlp_forward(Tensor(x), params).data, x, atol=1e-12)

    def test_cosine_self_is_one(self):
        rng = np.random.default_rng(10)
        a = rng.standard_normal((1, 6))
        out = T.cosine_rows(Tensor(a), Tensor(a.copy())).data
        np.testing.assert_allclose(out, 1.0, atol=1e-12)

    def test_cosine_orthogonal_is_zero(self):
        a = Tensor(np.array([[1.0, 0.0]]))
        b = Tensor(np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(T.cosine_rows(a, b).data, 0.0, atol=1e-15)

    def test_cosine_matches_scalar_formula(self):
        rng = np.random.default_rng(11)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4))
        got = T.cosine_rows(Tensor(a), Tensor(b)).data
        for i in range(3):
            for j in range(2):
                want = a[i] @ b[j] / (np.linalg.norm(a[i]) * np.linalg.norm(b[j]))
                np.testing.assert_allclose(got[i, j], want, atol=1e-12)

    def test_cosine_bounded(self):
        rng = np.random.default_rng(12)
        out = T.cosine_rows(
            Tensor(rng.standard_normal((20, 8)) * 10), Tensor(rng.standard_normal((15, 8)) * 0.1)
        ).data
        assert out.min() >= -1.0 - 1e-12 and out.max() <= 1.0 + 1e-12

    def test_cosine_zero_vector_guard(self):
        a = Tensor(np.zeros((1, 4)))
        b = Tensor(np.random.default_rng(13).standard_normal((3, 4)))
        np.testing.assert_array_equal(T.cosine_rows(a, b).data, np.zeros((1, 3)))

    def test_max_pool_single_column(self):
        x = np.random.default_rng(14).standard_normal((5, 1))
        np.testing.assert_array_equal(T.max_pool_rows(Tensor(x)).data, x[:, 0])

    def test_max_pool_uniform_row(self):
        np.testing.assert_array_equal(
            T.max_pool_rows(Tensor(np.full((3, 4), 2.5))).data, np.full(3, 2.5)
        )

    def test_max_pool_matches_scan(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((7, 9))
        want = np.array([max(row) for row in x])
        np.testing.assert_array_equal(T.max_pool_rows(Tensor(x)).data, want)

    def test_masked_mean_full_mask(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((6, 4))
        out = T.masked_mean_rows(Tensor(x), np.ones(6, dtype=bool)).data
        np.testing.assert_allclose(out, x.mean(axis=0, keepdims=True))

    def test_masked_mean_single_row(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((6, 4))
        mask = np.zeros(6, dtype=bool)
        mask[3] = True
        np.testing.assert_array_equal(T.masked_mean_rows(Tensor(x), mask).data, x[3:4])

    def test_masked_mean_sum_count_oracle(self):
        rng = np.random.default_rng(18)
        x = rng.standard_normal((10, 5))
        mask = rng.random(10) < 0.5
        mask[0] = True
        want = x[mask].sum(axis=0) / mask.sum()
        np.testing.assert_allclose(T.masked_mean_rows(Tensor(x), mask).data[0], want)

    def test_masked_mean_empty_raises(self):
        with pytest.raises(EmptyMaskError):
            T.masked_mean_rows(Tensor(np.zeros((3, 2))), np.zeros(3, dtype=bool))

    def test_cross_entropy_uniform_logits(self):
        out = T.cross_entropy(Tensor(np.zeros((5, 2))), np.array([0, 1, 0, 1, 1]))
        np.testing.assert_allclose(float(out.data), np.log(2.0), rtol=1e-12)

    def test_cross_entropy_confident_correct(self):
        logits = np.full((4, 3), -50.0)
        targets = np.array([0, 1, 2, 1])
        logits[np.arange(4), targets] = 50.0
        assert float(T.cross_entropy(Tensor(logits), targets).data) < 1e-12

    def test_cross_entropy_nonnegative(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            logits = Tensor(rng.standard_normal((6, 4)) * 3)
            targets = rng.integers(0, 4, size=6)
            assert float(T.cross_entropy(logits, targets).data) >= 0.0


class TestGradients:
    @pytest.mark.parametrize("name,builder", OP_CHECKS, ids=[n for n, _ in OP_CHECKS])
    def test_op_passes_finite_differences(self, name, builder):
        assert check_op(builder, seed=123, trials=10) < 1e-4

    def test_linear_op_error_tiny(self):
        rng = np.random.default_rng(20)
        err = finite_difference_check(
            lambda a, b: T.matmul(a, b),
            [Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal((3, 5)))],
            rng=rng,
        )
        assert err < 1e-8

    def test_corrupted_gradient_detected(self):
        rng = np.random.default_rng(21)
        broken = lambda t: Tensor(t.data * 2.0, (t,), lambda g: (g * 2.2,))
        err = finite_difference_check(broken, [Tensor(rng.standard_normal((4, 4)))], rng=rng)
        assert err > 1e-2

    def test_varied_shapes(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            n, m, d = (int(rng.integers(1, 7)) for _ in range(3))
            err = finite_difference_check(
                T.cosine_rows,
                [Tensor(rng.standard_normal((n, d + 1))), Tensor(rng.standard_normal((m, d + 1)))],
                rng=rng,
            )
            assert err < 1e-4

    def test_fanout_accumulation(self):
        # x used twice: gradient must sum both paths (d/dx of x*x + x = 2x + 1)
        x = Tensor(np.array([3.0]))
        out = T.add(T.mul(x, x), x)
        out.backward(np.ones(1))
        np.testing.assert_allclose(x.grad, np.array([7.0]))


class TestAdamW:
    def test_zero_grad_zero_decay_is_noop(self):
        p = Parameter(np.array([1.0, -2.0]), "p")
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_matches_hand_computation(self):
        # quadratic f(w) = w^2 / 2 at w = 3: gradient 3
        w = Parameter(np.array([3.0]), "w")
        opt = AdamW([w], lr=0.01, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8)
        w.grad = np.array([3.0])
        opt.step()
        mhat = 3.0  # (1-b1)*g / (1-b1)
        vhat = 9.0  # (1-b2)*g^2 / (1-b2)
        want = 3.0 - 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
        np.testing.assert_allclose(w.data, [want], rtol=1e-12)

    def test_decay_only_shrinks(self):
        p = Parameter(np.array([2.0]), "p")
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        p.grad = np.zeros(1)
        opt.step()
        np.testing.assert_allclose(p.data, [2.0 * (1 - 0.1 * 0.5)], rtol=1e-12)

    def test_adamw_step_function(self):
        w = Parameter(np.array([1.0]), "w")
        w.grad = np.array([2.0])
        T.adamw_step([w], lr=0.05, weight_decay=0.0, betas=(0.9, 0.999), step_count=1)
        np.testing.assert_allclose(w.data, [1.0 - 0.05 * 2.0 / (2.0 + 1e-8)], rtol=1e-10)


class TestSerialization:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(23)
        arrays = [
            ("a", rng.standard_normal((3, 4))),
            ("b.w1", rng.standard_normal(7) * 1e-17),
            ("c", np.array(3.5)),
        ]
        text = T.format_records(arrays)
        back = T.parse_records(text)
        assert set(back) == {"a", "b.w1", "c"}
        for name, arr in arrays:
            assert back[name].shape == np.asarray(arr).shape
            np.testing.assert_array_equal(back[name], arr)

    def test_seventeen_digits_restore_bits(self):
        rng = np.random.default_rng(24)
        values = rng.standard_normal(1000) * 10.0 ** rng.integers(-30, 30, size=1000)
        back = T.parse_records(T.format_records([("x", values)]))["x"]
        assert (back == values).all()
