import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from expredit.interp import interpolate_aus, pseudo_targets, residual, stage_targets
from expredit.networks import AuInterpolator

finite_floats = st.floats(-10, 10, allow_nan=False)


class TestPseudoTargets:
    def test_three_stage_linear(self):
        out = pseudo_targets([0, 0], [1, 1], 3)
        np.testing.assert_allclose(out[0], [1 / 3, 1 / 3])
        np.testing.assert_allclose(out[1], [2 / 3, 2 / 3])
        np.testing.assert_array_equal(out[2], [1, 1])

    def test_single_stage(self):
        out = pseudo_targets([0.2, 0.4], [0.9, 0.1], 1)
        assert len(out) == 1
        np.testing.assert_array_equal(out[0], [0.9, 0.1])

    def test_zero_gap(self):
        y = np.array([0.3, 0.7])
        for t in pseudo_targets(y, y, 4):
            np.testing.assert_allclose(t, y)

    def test_last_element_exact(self):
        y_x = np.array([0.1, 0.2, 0.3])
        y_z = np.array([0.77, 0.13, 0.99])
        assert np.array_equal(pseudo_targets(y_x, y_z, 7)[-1], y_z)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pseudo_targets([0, 0], [1], 3)

    @given(
        st.lists(finite_floats, min_size=1, max_size=6),
        st.floats(0.1, 5, allow_nan=False),
        st.integers(1, 6),
    )
    @settings(max_examples=50, deadline=None)
    def test_scaling_equivariance(self, vals, scale, n):
        y_x = np.array(vals)
        y_z = y_x[::-1].copy()
        base = pseudo_targets(y_x, y_z, n)
        scaled = pseudo_targets(scale * y_x, scale * y_z, n)
        for a, b in zip(base, scaled):
            np.testing.assert_allclose(scale * a, b, atol=1e-9)


class TestResidual:
    def test_zero(self):
        np.testing.assert_array_equal(residual([1, 2], [1, 2]), [0, 0])

    def test_subtraction(self):
        np.testing.assert_allclose(residual([1, 2], [0.5, 1]), [0.5, 1])

    def test_endpoint_algebra(self):
        y_x = np.array([0.1, 0.9])
        y_z = np.array([0.8, 0.3])
        last = pseudo_targets(y_x, y_z, 5)[-1]
        np.testing.assert_allclose(residual(last, y_x), y_z - y_x)


@pytest.fixture(scope="module")
def interpolator():
    torch.manual_seed(0)
    return AuInterpolator(3).eval()


class TestStageTargets:

    def test_single_stage_skips_interpolator(self):
        # interpolator=None must be enough when n=1
        out = stage_targets([0, 0, 0], [1, 1, 1], 1, None)
        assert len(out) == 1
        np.testing.assert_array_equal(out[0], [1, 1, 1])

    def test_final_element_is_true_target(self, interpolator):
        y_z = np.array([0.9, 0.1, 0.5])
        out = stage_targets(np.zeros(3), y_z, 3, interpolator)
        assert len(out) == 3
        assert np.array_equal(out[-1], y_z)

    def test_all_lengths_match(self, interpolator):
        out = stage_targets(np.zeros(3), np.ones(3), 4, interpolator)
        assert all(t.shape == (3,) for t in out)

    def test_intermediates_come_from_interpolator(self, interpolator):
        y_x, y_z = np.zeros(3), np.ones(3)
        out = stage_targets(y_x, y_z, 3, interpolator)
        expected = interpolate_aus(y_x, residual(pseudo_targets(y_x, y_z, 3)[0], y_x), interpolator)
        np.testing.assert_allclose(out[0], expected)

    def test_without_interpolator_falls_back_to_linear(self):
        out = stage_targets([0.0], [1.0], 4, None)
        np.testing.assert_allclose(np.concatenate(out), [0.25, 0.5, 0.75, 1.0])
