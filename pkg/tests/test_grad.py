import numpy as np
import pytest

from maresu.attention import AttentionDims, channel_attention, linear_attention_vectorized, softmax_attention
from maresu.errors import ParameterError, ShapeError, StateError
from maresu.grad import (
    GRADCHECK_OPS,
    GradReport,
    Tape,
    build_gradcheck_tape,
    finite_diff,
    gradcheck,
    gradcheck_inputs,
    lam_descent,
    relative_error,
    tape_eval,
    tape_grad,
)
from maresu.numerics import Rng, row_softmax, seeded_fill


def sum_tape(build):
    t = Tape()
    t.sum(build(t))
    return t


class TestForward:
    def test_sum(self):
        t = sum_tape(lambda t: t.input("X"))
        assert tape_eval(t, {"X": [[1.0, 2.0], [3.0, 4.0]]}) == 10.0

    def test_sum_softmax_is_row_count(self, rng):
        t = sum_tape(lambda t: t.row_softmax(t.input("X")))
        x = rng.normal(scale=30, size=(7, 4))
        assert tape_eval(t, {"X": x}) == pytest.approx(7.0, abs=1e-12)

    @pytest.mark.parametrize(
        "composite,direct",
        [
            ("linear_attention", linear_attention_vectorized),
            ("softmax_attention", softmax_attention),
        ],
    )
    def test_composites_match_forward(self, composite, direct):
        r = Rng(3)
        q, k, v = seeded_fill(r, 10, 4), seeded_fill(r, 10, 4), seeded_fill(r, 10, 3)
        t = sum_tape(lambda t: getattr(t, composite)(t.input("Q"), t.input("K"), t.input("V")))
        assert tape_eval(t, {"Q": q, "K": k, "V": v}) == pytest.approx(direct(q, k, v).sum(), abs=1e-12)

    def test_channel_matches_forward(self, rng):
        x = rng.normal(size=(9, 3))
        t = sum_tape(lambda t: t.channel_attention(t.input("X")))
        assert tape_eval(t, {"X": x}) == pytest.approx(channel_attention(x).sum(), abs=1e-12)

    def test_shape_error_names_node(self):
        t = Tape()
        t.sum(t.matmul(t.input("A"), t.input("B"), label="bad_product"))
        with pytest.raises(ShapeError, match="bad_product"):
            tape_eval(t, {"A": np.ones((2, 3)), "B": np.ones((2, 3))})

    def test_final_node_must_be_scalar(self):
        t = Tape()
        t.row_softmax(t.input("X"))
        with pytest.raises(ShapeError):
            tape_eval(t, {"X": np.ones((2, 2))})

    def test_missing_input(self):
        t = sum_tape(lambda t: t.input("X"))
        with pytest.raises(ParameterError):
            tape_eval(t, {})

    def test_foreign_node_rejected(self):
        other = Tape()
        x = other.input("X")
        with pytest.raises(ParameterError):
            Tape().sum(x)

    def test_topological_order(self):
        tape, _ = build_gradcheck_tape("attention_block")
        for node in tape.nodes:
            assert all(i < node.index for i in node.inputs)


class TestBackward:
    def test_before_forward(self):
        t = sum_tape(lambda t: t.input("X"))
        with pytest.raises(StateError):
            tape_grad(t)

    def test_sum_gradient_is_ones(self, rng):
        t = sum_tape(lambda t: t.input("X"))
        tape_eval(t, {"X": rng.normal(size=(3, 5))})
        np.testing.assert_array_equal(tape_grad(t)["X"], np.ones((3, 5)))

    def test_matmul_sum_adjoint(self, rng):
        a = rng.normal(size=(4, 3))
        v = rng.normal(size=(3, 2))
        t = sum_tape(lambda t: t.matmul(t.input("A"), t.input("V")))
        tape_eval(t, {"A": a, "V": v})
        expected = np.repeat(a.T @ np.ones((4, 1)), 2, axis=1)
        np.testing.assert_allclose(tape_grad(t)["V"], expected, atol=1e-14)

    def test_adjoint_shapes_match_values(self):
        tape, names = build_gradcheck_tape("attention_block")
        inputs = gradcheck_inputs("attention_block", AttentionDims(n=6, c=3, d_k=2, d_v=3), seed=1)
        tape_eval(tape, inputs)
        grads = tape_grad(tape)
        for name in names:
            assert grads[name].shape == np.shape(inputs[name])

    def test_unused_input_gets_zero_gradient(self):
        t = Tape()
        t.input("unused")
        t.sum(t.input("X"))
        tape_eval(t, {"X": np.ones((2, 2)), "unused": np.ones((3, 1))})
        np.testing.assert_array_equal(tape_grad(t)["unused"], np.zeros((3, 1)))

    def test_lam_sum_against_finite_diff(self):
        r = Rng(9)
        inputs = {"Q": seeded_fill(r, 8, 4), "K": seeded_fill(r, 8, 4), "V": seeded_fill(r, 8, 4)}
        t = sum_tape(lambda t: t.linear_attention(t.input("Q"), t.input("K"), t.input("V")))
        tape_eval(t, inputs)
        grads = tape_grad(t)
        for name in ("Q", "K"):
            numeric = finite_diff(lambda x: tape_eval(t, {**inputs, name: x}), inputs[name])
            assert relative_error(grads[name], numeric) <= 1e-5
        # d sum / dV_j = sum_i w_ij, a column of weight sums
        numeric = finite_diff(lambda x: tape_eval(t, {**inputs, "V": x}), inputs["V"])
        assert np.abs(grads["V"] - numeric).max() <= 1e-8

    def test_clamp_blocks_gradient(self):
        t = sum_tape(lambda t: t.clamp_min(t.input("X"), 0.5))
        tape_eval(t, {"X": [[0.1, 0.9]]})
        np.testing.assert_array_equal(tape_grad(t)["X"], [[0.0, 1.0]])


class TestFiniteDiff:
    def test_square(self):
        g = finite_diff(lambda x: float((x**2).sum()), [[1.0, 2.0]])
        np.testing.assert_allclose(g, [[2.0, 4.0]], atol=1e-7)

    def test_sum(self, rng):
        g = finite_diff(lambda x: float(x.sum()), rng.normal(size=(3, 3)))
        np.testing.assert_allclose(g, 1.0, atol=1e-10)

    def test_constant_function(self, rng):
        g = finite_diff(lambda x: float(row_softmax(x).sum()), rng.normal(size=(3, 4)))
        np.testing.assert_allclose(g, 0.0, atol=1e-7)

    def test_explicit_step(self):
        g = finite_diff(lambda x: float((x**3).sum()), [[1.0]], h=1e-3)
        assert g[0, 0] == pytest.approx(3.0 + 1e-6, abs=1e-12)

    def test_bad_step(self):
        with pytest.raises(ParameterError):
            finite_diff(lambda x: 0.0, [[1.0]], h=0.0)


class TestRelativeError:
    def test_formula(self):
        assert relative_error(np.array([2.0]), np.array([1.0])) == 0.5
        assert relative_error(np.array([0.0]), np.array([1e-12])) == pytest.approx(1e-4)

    def test_report(self):
        r = GradReport("x", {"a": 1e-7, "b": 2e-5}, threshold=1e-5)
        assert r.max_error == 2e-5 and not r.passed
        assert "FAIL" in str(r)


class TestGradcheck:
    @pytest.mark.parametrize("op", GRADCHECK_OPS)
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_ops_pass(self, op, seed):
        report = gradcheck(op, AttentionDims(n=8, c=4, d_k=4, d_v=4), seed=seed)
        assert report.passed, str(report)

    @pytest.mark.parametrize(
        "op,dims",
        [
            ("attention_block", AttentionDims(n=6, c=5, d_k=2, d_v=5)),
            ("linear_attention", AttentionDims(n=5, c=1, d_k=3, d_v=7)),
            ("softmax_attention", AttentionDims(n=9, c=1, d_k=2, d_v=3)),
        ],
    )
    @pytest.mark.parametrize("seed", range(4))
    def test_rectangular_dims(self, op, dims, seed):
        # Entries of size ~1e-5 sit at the step's cancellation noise
        # (~1e-9 absolute), so small entries get an absolute bound instead.
        tape, names = build_gradcheck_tape(op)
        inputs = gradcheck_inputs(op, dims, seed)
        tape_eval(tape, inputs)
        grads = tape_grad(tape)
        for name in names:
            numeric = finite_diff(lambda x: tape_eval(tape, {**inputs, name: x}), inputs[name])
            a = grads[name]
            big = np.abs(a) >= 1e-3
            if big.any():
                assert relative_error(a[big], numeric[big]) <= 1e-5, name
            assert np.abs(a - numeric)[~big].max(initial=0.0) <= 1e-8, name

    def test_unknown_op(self):
        with pytest.raises(ParameterError):
            gradcheck("conv", AttentionDims(n=2, c=2, d_k=2, d_v=2))

    def test_zero_gamma_block(self):
        tape = Tape()
        names = ["X", "W_q", "W_k", "W_v", "gamma_p", "gamma_c"]
        nodes = {n: tape.input(n) for n in names}
        tape.sum(tape.attention_block(*(nodes[n] for n in names)))
        inputs = gradcheck_inputs("attention_block", AttentionDims(n=7, c=3, d_k=2, d_v=3), seed=5, gammas=(0.0, 0.0))
        inputs.pop("probe")
        loss = tape_eval(tape, inputs)
        grads = tape_grad(tape)
        x = inputs["X"]
        assert loss == pytest.approx(x.sum(), abs=1e-12)
        np.testing.assert_array_equal(grads["X"], np.ones_like(x))
        q, k, v = x @ inputs["W_q"], x @ inputs["W_k"], x @ inputs["W_v"]
        assert grads["gamma_p"][0, 0] == pytest.approx(linear_attention_vectorized(q, k, v).sum(), abs=1e-12)
        assert grads["gamma_c"][0, 0] == pytest.approx(channel_attention(x).sum(), abs=1e-12)


class TestDescent:
    @pytest.mark.parametrize("seed", range(5))
    def test_strictly_decreasing(self, seed):
        losses = lam_descent(AttentionDims(n=16, c=4, d_k=4, d_v=4), seed=seed)
        assert len(losses) == 51
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_bad_args(self):
        with pytest.raises(ParameterError):
            lam_descent(AttentionDims(n=2, c=2, d_k=2, d_v=2), steps=0)
