"""Tensor, tape, optimizer and seed-stream behavior."""

import numpy as np
import pytest

from twincast import autodiff as ad
from twincast.errors import TrainingError, ValidationError


def fd_check(params, loss_fn, step=1e-6, rtol=5e-5, atol=1e-7):
    """Central finite differences through the ops themselves."""
    with ad.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    for p in params:
        analytic = p.grad_array().ravel().copy()
        flat = p.data.ravel()
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * step)
        np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


class TestTensorBasics:
    def test_scalar_becomes_1x1(self):
        assert ad.constant(3.0).shape == (1, 1)

    def test_1d_becomes_row(self):
        t = ad.constant(np.arange(4.0))
        assert t.shape == (1, 4)

    def test_3d_rejected(self):
        with pytest.raises(ValidationError):
            ad.constant(np.zeros((2, 2, 2)))

    def test_item_requires_scalar(self):
        with pytest.raises(ValidationError):
            ad.constant(np.zeros((1, 2))).item()

    def test_item_value(self):
        assert ad.constant(2.5).item() == 2.5

    def test_grad_array_defaults_to_zeros(self):
        p = ad.parameter(np.ones((2, 3)))
        assert p.grad is None
        np.testing.assert_array_equal(p.grad_array(), np.zeros((2, 3)))

    def test_parameter_vs_constant_trainability(self):
        assert ad.parameter(1.0).requires_grad
        assert not ad.constant(1.0).requires_grad

    def test_operator_sugar_matches_functions(self):
        """Infix operators are thin wrappers over the op functions."""
        rng = np.random.default_rng(0)
        a = ad.constant(rng.normal(size=(3, 4)))
        b = ad.constant(rng.uniform(0.5, 2.0, (3, 4)))
        np.testing.assert_array_equal((a + b).data, ad.add(a, b).data)
        np.testing.assert_array_equal((a - b).data, ad.sub(a, b).data)
        np.testing.assert_array_equal((a * b).data, ad.mul(a, b).data)
        np.testing.assert_array_equal((a / b).data, ad.div(a, b).data)
        np.testing.assert_array_equal((-a).data, -a.data)
        np.testing.assert_array_equal((2.0 + a).data, 2.0 + a.data)
        c = ad.constant(rng.normal(size=(4, 2)))
        np.testing.assert_array_equal((a @ c).data, a.data @ c.data)
        np.testing.assert_array_equal(a.sum(axis=1).data, a.data.sum(axis=1, keepdims=True))
        assert a.mean().item() == a.data.mean()


class TestOpGradients:
    """Every primitive against central finite differences."""

    def setup_method(self):
        self.rng = np.random.default_rng(7)

    def _weighted_sum(self, t, c):
        return ad.reduce_sum(ad.mul(t, ad.constant(c)))

    def test_add_broadcast(self):
        a = ad.parameter(self.rng.normal(size=(3, 4)))
        b = ad.parameter(self.rng.normal(size=(1, 4)))
        c = self.rng.normal(size=(3, 4))
        fd_check([a, b], lambda: self._weighted_sum(ad.add(a, b), c))

    def test_sub_broadcast(self):
        a = ad.parameter(self.rng.normal(size=(3, 4)))
        b = ad.parameter(self.rng.normal(size=(3, 1)))
        c = self.rng.normal(size=(3, 4))
        fd_check([a, b], lambda: self._weighted_sum(ad.sub(a, b), c))

    def test_mul(self):
        a = ad.parameter(self.rng.normal(size=(3, 4)))
        b = ad.parameter(self.rng.normal(size=(3, 4)))
        fd_check([a, b], lambda: ad.reduce_sum(ad.mul(a, b)))

    def test_div(self):
        a = ad.parameter(self.rng.normal(size=(3, 4)))
        b = ad.parameter(self.rng.uniform(0.5, 2.0, (3, 4)))
        fd_check([a, b], lambda: ad.reduce_sum(ad.div(a, b)))

    def test_div_broadcast_denominator(self):
        a = ad.parameter(self.rng.normal(size=(3, 4)))
        b = ad.parameter(self.rng.uniform(0.5, 2.0, (3, 1)))
        c = self.rng.normal(size=(3, 4))
        fd_check([a, b], lambda: self._weighted_sum(ad.div(a, b), c))

    def test_matmul(self):
        a = ad.parameter(self.rng.normal(size=(3, 4)))
        b = ad.parameter(self.rng.normal(size=(4, 2)))
        c = self.rng.normal(size=(3, 2))
        fd_check([a, b], lambda: self._weighted_sum(ad.matmul(a, b), c))

    def test_affine(self):
        x = ad.parameter(self.rng.normal(size=(5, 3)))
        w = ad.parameter(self.rng.normal(size=(2, 3)))
        b = ad.parameter(self.rng.normal(size=(1, 2)))
        c = self.rng.normal(size=(5, 2))
        fd_check([x, w, b], lambda: self._weighted_sum(ad.affine(x, w, b), c))

    def test_tanh(self):
        x = ad.parameter(self.rng.normal(size=(3, 4)))
        c = self.rng.normal(size=(3, 4))
        fd_check([x], lambda: self._weighted_sum(ad.tanh(x), c))

    def test_sigmoid(self):
        x = ad.parameter(self.rng.normal(size=(3, 4)))
        c = self.rng.normal(size=(3, 4))
        fd_check([x], lambda: self._weighted_sum(ad.sigmoid(x), c))

    def test_exp(self):
        x = ad.parameter(self.rng.uniform(-1.0, 1.0, (3, 4)))
        c = self.rng.normal(size=(3, 4))
        fd_check([x], lambda: self._weighted_sum(ad.exp(x), c))

    def test_sqrt(self):
        x = ad.parameter(self.rng.uniform(0.5, 2.0, (3, 4)))
        c = self.rng.normal(size=(3, 4))
        fd_check([x], lambda: self._weighted_sum(ad.sqrt(x), c))

    @pytest.mark.parametrize("axis", [None, 0, 1])
    def test_reduce_sum(self, axis):
        x = ad.parameter(self.rng.normal(size=(3, 4)))
        shape = {None: (1, 1), 0: (1, 4), 1: (3, 1)}[axis]
        c = self.rng.normal(size=shape)
        fd_check([x], lambda: self._weighted_sum(ad.reduce_sum(x, axis=axis), c))

    @pytest.mark.parametrize("axis", [None, 0, 1])
    def test_reduce_mean(self, axis):
        x = ad.parameter(self.rng.normal(size=(3, 4)))
        shape = {None: (1, 1), 0: (1, 4), 1: (3, 1)}[axis]
        c = self.rng.normal(size=shape)
        fd_check([x], lambda: self._weighted_sum(ad.reduce_mean(x, axis=axis), c))

    def test_concat_cols(self):
        a = ad.parameter(self.rng.normal(size=(3, 2)))
        b = ad.parameter(self.rng.normal(size=(3, 3)))
        c = self.rng.normal(size=(3, 5))
        fd_check([a, b], lambda: self._weighted_sum(ad.concat_cols([a, b]), c))

    def test_split_cols(self):
        x = ad.parameter(self.rng.normal(size=(3, 5)))
        c0 = self.rng.normal(size=(3, 2))
        c1 = self.rng.normal(size=(3, 3))

        def loss():
            left, right = ad.split_cols(x, [2, 3])
            return ad.add(self._weighted_sum(left, c0), self._weighted_sum(right, c1))

        fd_check([x], loss)

    def test_mse(self):
        pred = ad.parameter(self.rng.normal(size=(4, 3)))
        target = ad.constant(self.rng.normal(size=(4, 3)))
        fd_check([pred], lambda: ad.mse(pred, target))

    def test_l2_norm_sq(self):
        a = ad.parameter(self.rng.normal(size=(2, 3)))
        b = ad.parameter(self.rng.normal(size=(1, 4)))
        fd_check([a, b], lambda: ad.l2_norm_sq([a, b]))

    def test_reuse_accumulates(self):
        """A tensor feeding two ops receives the sum of both gradients."""
        x = ad.parameter(np.array([[1.0, 2.0]]))
        with ad.Tape() as tape:
            loss = ad.reduce_sum(ad.add(x, x))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.full((1, 2), 2.0))


class TestOpValues:
    def test_fnn_sigmoid_identity(self):
        """sigmoid is computed through tanh, and both agree with the textbook form."""
        x = np.linspace(-6.0, 6.0, 13).reshape(1, -1)
        got = ad.sigmoid(ad.constant(x)).data
        np.testing.assert_array_equal(got, 0.5 * (1.0 + np.tanh(0.5 * x)))
        np.testing.assert_allclose(got, 1.0 / (1.0 + np.exp(-x)), rtol=1e-14)

    def test_sigmoid_symmetry(self):
        x = np.random.default_rng(1).normal(size=(1, 50))
        s_pos = ad.sigmoid(ad.constant(x)).data
        s_neg = ad.sigmoid(ad.constant(-x)).data
        np.testing.assert_allclose(s_pos + s_neg, 1.0, atol=1e-15)

    def test_split_concat_round_trip(self):
        x = np.random.default_rng(2).normal(size=(4, 9))
        parts = ad.split_cols(ad.constant(x), [2, 3, 4])
        back = ad.concat_cols(parts)
        np.testing.assert_array_equal(back.data, x)

    def test_mse_value(self):
        pred = ad.constant(np.array([[1.0, 2.0], [3.0, 4.0]]))
        target = ad.constant(np.array([[1.0, 0.0], [3.0, 2.0]]))
        assert ad.mse(pred, target).item() == 2.0

    def test_l2_value(self):
        a = ad.constant(np.array([[1.0, 2.0]]))
        b = ad.constant(np.array([[3.0]]))
        assert ad.l2_norm_sq([a, b]).item() == 14.0


class TestOpValidation:
    def test_matmul_mismatch(self):
        with pytest.raises(ValidationError):
            ad.matmul(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((2, 3))))

    def test_affine_input_mismatch(self):
        with pytest.raises(ValidationError):
            ad.affine(
                ad.constant(np.zeros((2, 3))),
                ad.constant(np.zeros((4, 2))),
                ad.constant(np.zeros((1, 4))),
            )

    def test_affine_bias_shape(self):
        with pytest.raises(ValidationError):
            ad.affine(
                ad.constant(np.zeros((2, 3))),
                ad.constant(np.zeros((4, 3))),
                ad.constant(np.zeros((1, 3))),
            )

    def test_concat_empty(self):
        with pytest.raises(ValidationError):
            ad.concat_cols([])

    def test_concat_row_mismatch(self):
        with pytest.raises(ValidationError):
            ad.concat_cols([ad.constant(np.zeros((2, 1))), ad.constant(np.zeros((3, 1)))])

    def test_split_widths_must_cover(self):
        with pytest.raises(ValidationError):
            ad.split_cols(ad.constant(np.zeros((2, 5))), [2, 2])

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValidationError):
            ad.mse(ad.constant(np.zeros((2, 2))), ad.constant(np.zeros((2, 3))))

    def test_l2_empty(self):
        with pytest.raises(ValidationError):
            ad.l2_norm_sq([])

    def test_reduce_axis_out_of_range(self):
        with pytest.raises(ValidationError):
            ad.reduce_sum(ad.constant(np.zeros((2, 2))), axis=2)


class TestTape:
    def test_constant_ops_not_recorded(self):
        with ad.Tape() as tape:
            ad.add(ad.constant(1.0), ad.constant(2.0))
        assert len(tape) == 0

    def test_parameter_ops_recorded(self):
        p = ad.parameter(1.0)
        with ad.Tape() as tape:
            ad.add(p, ad.constant(2.0))
        assert len(tape) == 1

    def test_untaped_forward_records_nothing(self):
        """Outside a tape the same ops run but leave no backward state."""
        p = ad.parameter(np.ones((2, 2)))
        out = ad.tanh(ad.mul(p, p))
        assert out.grad is None
        with ad.Tape() as tape:
            pass
        assert len(tape) == 0

    def test_backward_requires_scalar(self):
        p = ad.parameter(np.ones((1, 3)))
        with ad.Tape() as tape:
            out = ad.mul(p, p)
        with pytest.raises(ValidationError):
            tape.backward(out)

    def test_backward_rejects_foreign_loss(self):
        p = ad.parameter(1.0)
        with ad.Tape() as tape_a:
            loss = ad.reduce_sum(ad.mul(p, p))
        with ad.Tape() as tape_b:
            pass
        with pytest.raises(ValidationError):
            tape_b.backward(loss)
        tape_a.backward(loss)  # the producing tape still works

    def test_nested_tapes_record_independently(self):
        p = ad.parameter(1.0)
        with ad.Tape() as outer:
            ad.mul(p, p)
            with ad.Tape() as inner:
                ad.mul(p, p)
        assert len(inner) == 1
        assert len(outer) == 1


class TestAdam:
    def test_first_step_magnitude(self):
        """With g=1 the bias-corrected first step is exactly lr/(1+eps)."""
        p = ad.parameter(np.array([[1.0]]))
        opt = ad.Adam([p], lr=0.005)
        p.grad = np.ones((1, 1))
        opt.step()
        expected = 1.0 - 0.005 * 1.0 / (np.sqrt(1.0) + 1e-8)
        assert p.data[0, 0] == expected

    def test_constant_gradient_step_does_not_grow(self):
        p = ad.parameter(np.array([[0.0]]))
        opt = ad.Adam([p], lr=0.01)
        p.grad = np.ones((1, 1))
        opt.step()
        first = abs(p.data[0, 0])
        before = p.data[0, 0]
        p.grad = np.ones((1, 1))
        opt.step()
        second = abs(p.data[0, 0] - before)
        assert second <= first + 1e-15

    def test_zero_gradient_leaves_params(self):
        p = ad.parameter(np.array([[2.0, -1.0]]))
        opt = ad.Adam([p], lr=0.1)
        p.grad = np.zeros((1, 2))
        opt.step()
        np.testing.assert_array_equal(p.data, np.array([[2.0, -1.0]]))
        assert opt.t == 1

    def test_zero_grad_clears(self):
        p = ad.parameter(1.0)
        p.grad = np.ones((1, 1))
        ad.Adam([p], lr=0.1).zero_grad()
        assert p.grad is None

    def test_missing_grad_treated_as_zero(self):
        p = ad.parameter(np.array([[5.0]]))
        opt = ad.Adam([p], lr=0.1)
        opt.step()
        assert p.data[0, 0] == 5.0

    def test_non_finite_gradient_raises(self):
        p = ad.parameter(1.0)
        opt = ad.Adam([p], lr=0.1)
        p.grad = np.array([[np.inf]])
        with pytest.raises(TrainingError) as exc:
            opt.step()
        assert exc.value.step == 1

    def test_requires_trainable_params(self):
        with pytest.raises(ValidationError):
            ad.Adam([ad.constant(1.0)], lr=0.1)

    def test_descends_a_quadratic(self):
        p = ad.parameter(np.array([[3.0]]))
        opt = ad.Adam([p], lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            with ad.Tape() as tape:
                loss = ad.mul(p, p)
            tape.backward(loss)
            opt.step()
        assert abs(p.data[0, 0]) < 0.05

    def test_deterministic_given_same_start(self):
        def run():
            p = ad.parameter(np.array([[1.0, -2.0]]))
            opt = ad.Adam([p], lr=0.01)
            for _ in range(50):
                opt.zero_grad()
                with ad.Tape() as tape:
                    loss = ad.reduce_sum(ad.mul(p, p))
                tape.backward(loss)
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestRng:
    def test_same_path_same_draws(self):
        a = ad.Rng(123).derive(1, 2).uniform(0.0, 1.0, 8)
        b = ad.Rng(123).derive(1, 2).uniform(0.0, 1.0, 8)
        np.testing.assert_array_equal(a, b)

    def test_different_paths_differ(self):
        a = ad.Rng(123).derive(1).normal(0.0, 1.0, 8)
        b = ad.Rng(123).derive(2).normal(0.0, 1.0, 8)
        assert not np.array_equal(a, b)

    def test_derive_is_compositional(self):
        """derive(1, 2) and derive(1).derive(2) name the same stream."""
        a = ad.Rng(9).derive(1, 2).uniform(0.0, 1.0, 4)
        b = ad.Rng(9).derive(1).derive(2).uniform(0.0, 1.0, 4)
        np.testing.assert_array_equal(a, b)

    def test_child_does_not_disturb_parent(self):
        root = ad.Rng(5)
        _ = root.derive(3).normal(0.0, 1.0, 100)
        after_child = root.uniform(0.0, 1.0, 4)
        np.testing.assert_array_equal(after_child, ad.Rng(5).uniform(0.0, 1.0, 4))

    def test_derive_needs_a_path(self):
        with pytest.raises(ValidationError):
            ad.Rng(0).derive()

    def test_integers_range(self):
        vals = ad.Rng(1).integers(0, 10, size=100)
        assert vals.min() >= 0
        assert vals.max() < 10

    def test_derive_seed_stable(self):
        assert ad.derive_seed(0, 1) == ad.derive_seed(0, 1)
        assert ad.derive_seed(0, 1) != ad.derive_seed(0, 2)
        assert isinstance(ad.derive_seed(42, 7, 7), int)
