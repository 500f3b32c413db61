"""Tensor engine: forward semantics, gradients vs finite differences, checkpoints."""

import numpy as np
import pytest

from fdcheck import check_grads, gradcore_op_cases
from sfmc import gradcore as gc
from sfmc.errors import (
    BackwardOnDetached,
    ConfigError,
    NonFiniteGradient,
    ShapeMismatch,
)


class TestForwardSemantics:
    def test_softmax_equal_logits_is_uniform(self):
        p = gc.softmax(gc.constant(np.full(32, 1.7)), axis=0)
        np.testing.assert_allclose(p.values, np.full(32, 1.0 / 32.0), atol=1e-15)

    def test_conv2d_identity_kernel_preserves_input(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 5, 6))
        w = np.zeros((2, 2, 3, 3))
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        y = gc.conv2d(gc.constant(x), gc.constant(w), padding=1)
        np.testing.assert_array_equal(y.values, x)

    def test_conv3d_matches_naive_loop_bitwise(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.standard_normal((4, 2, 3, 3, 3))
        b = rng.standard_normal(4)
        pad = 1
        got = gc.conv3d(gc.constant(x), gc.constant(w), gc.constant(b), padding=pad)

        cin, d, h, wd = x.shape
        cout, _, kd, kh, kw = w.shape
        xp = np.zeros((cin, d + 2 * pad, h + 2 * pad, wd + 2 * pad))
        xp[:, pad:-pad, pad:-pad, pad:-pad] = x
        expect = np.zeros((cout, d, h, wd))
        for co in range(cout):
            for z in range(d):
                for y in range(h):
                    for xx in range(wd):
                        acc = 0.0
                        for ci in range(cin):
                            for kz in range(kd):
                                for ky in range(kh):
                                    for kx in range(kw):
                                        acc += w[co, ci, kz, ky, kx] * xp[
                                            ci, z + kz, y + ky, xx + kx
                                        ]
                        expect[co, z, y, xx] = acc + b[co]
        np.testing.assert_array_equal(got.values, expect)

    def test_forward_is_bit_identical_across_runs(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 4, 6))
        w = rng.standard_normal((2, 3, 3, 3))

        def run():
            y = gc.conv2d(gc.constant(x), gc.constant(w), padding=1)
            return gc.sum(gc.softmax(y, axis=0), axis=(1, 2)).values

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeMismatch) as e:
            gc.add(gc.constant(np.zeros((2, 3))), gc.constant(np.zeros((4, 5))))
        assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)

    def test_bilinear_sample_is_linear_in_field(self):
        rng = np.random.default_rng(3)
        f1 = rng.standard_normal((4, 5))
        f2 = rng.standard_normal((4, 5))
        coords = np.stack(
            [rng.uniform(-1, 5.5, size=20), rng.uniform(-1, 4.5, size=20)], axis=-1
        )
        a, b = 2.3, -0.7
        mixed = gc.bilinear_sample(gc.constant(a * f1 + b * f2), gc.constant(coords))
        parts = a * gc.bilinear_sample(gc.constant(f1), gc.constant(coords)).values + (
            b * gc.bilinear_sample(gc.constant(f2), gc.constant(coords)).values
        )
        np.testing.assert_allclose(mixed.values, parts, atol=1e-12)


class TestBackward:
    def test_sum_of_squares_gradient(self):
        x = gc.parameter(np.array([3.0]))
        loss = gc.sum(x * x)
        loss.backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_softmax_log_sum_pipeline_fd(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((5, 3))

        def build(t):
            return gc.sum(gc.log(gc.softmax(t, axis=0)) * rng_weights)

        rng_weights = rng.uniform(0.5, 1.5, (5, 3))
        check_grads(build, [logits], h=1e-6, tol=1e-6)

    def test_abs_subgradient_zero_at_zero(self):
        x = gc.parameter(np.array([0.0, -2.0, 2.0]))
        gc.sum(gc.absolute(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])

    def test_shared_subexpression_accumulates(self):
        # duplicated-subgraph oracle: y used twice vs. two independent copies
        rng = np.random.default_rng(5)
        v = rng.standard_normal(4)

        x = gc.parameter(v.copy())
        y = x * x
        loss = gc.sum(y * 2.0) + gc.sum(gc.exp(y))
        loss.backward()

        x1 = gc.parameter(v.copy())
        x2 = gc.parameter(v.copy())
        loss2 = gc.sum(x1 * x1 * 2.0) + gc.sum(gc.exp(x2 * x2))
        loss2.backward()
        np.testing.assert_allclose(x.grad, x1.grad + x2.grad, rtol=1e-14)

    def test_backward_on_detached_raises(self):
        with pytest.raises(BackwardOnDetached):
            gc.backward(gc.constant(1.0))

    def test_backward_needs_scalar(self):
        x = gc.parameter(np.ones(3))
        with pytest.raises(ShapeMismatch):
            (x * 2.0).backward()


@pytest.mark.parametrize("seed", range(10))
def test_every_op_matches_finite_differences(seed):
    rng = np.random.default_rng(1000 + seed)
    for name, build, arrays in gradcore_op_cases(rng):
        try:
            check_grads(build, arrays, h=1e-6, tol=1e-5)
        except AssertionError as e:
            raise AssertionError(f"op '{name}' (seed {seed}): {e}") from e


class TestRmsProp:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = gc.parameter(np.array([1.0, -2.0]))
        params = {"w": p}
        state = {}
        gc.rmsprop_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(p.values, [1.0, -2.0])

    def test_single_scalar_step_value(self):
        p = gc.parameter(np.array(0.0))
        state = {}
        gc.rmsprop_step({"w": p}, {"w": np.array(1.0)}, state, lr=0.01)
        expected = -0.01 * 1.0 / (np.sqrt(0.1) + 1e-8)
        np.testing.assert_allclose(p.values, expected, rtol=1e-12)

    def test_descends_quadratic(self):
        p = gc.parameter(np.array(1.0))
        state = {}
        history = [float(p.values) ** 2]
        for _ in range(100):
            gc.rmsprop_step({"w": p}, {"w": 2.0 * p.values}, state, lr=0.01)
            history.append(float(p.values) ** 2)
        assert history[-1] < history[0]
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_non_finite_gradient_names_parameter(self):
        p = gc.parameter(np.array([1.0]))
        with pytest.raises(NonFiniteGradient) as e:
            gc.rmsprop_step({"w_bad": p}, {"w_bad": np.array([np.nan])}, {}, lr=0.1)
        assert "w_bad" in str(e.value)


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(6)
        arrays = {
            "enc.w": rng.standard_normal((2, 3, 3, 3)),
            "enc.b": rng.standard_normal(2),
            "meta.step": np.array(7.0),
        }
        path = tmp_path / "ck.sfmc"
        gc.save_checkpoint(path, arrays)
        loaded = gc.load_checkpoint(path)
        assert set(loaded) == set(arrays)
        for k in arrays:
            np.testing.assert_array_equal(loaded[k], arrays[k])
        # canonical bytes: saving the same content twice is identical
        path2 = tmp_path / "ck2.sfmc"
        gc.save_checkpoint(path2, dict(reversed(list(arrays.items()))))
        assert path.read_bytes() == path2.read_bytes()

    def test_magic_validated(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ConfigError):
            gc.load_checkpoint(p)

    def test_load_into_validates_names_and_shapes(self, tmp_path):
        path = tmp_path / "ck.sfmc"
        gc.save_checkpoint(path, {"a": np.zeros(3)})
        with pytest.raises(ConfigError):
            gc.load_into(path, {"b": gc.parameter(np.zeros(3))})
        with pytest.raises(ShapeMismatch):
            gc.load_into(path, {"a": gc.parameter(np.zeros(4))})
        params = {"a": gc.parameter(np.ones(3))}
        gc.load_into(path, params)
        np.testing.assert_array_equal(params["a"].values, np.zeros(3))
