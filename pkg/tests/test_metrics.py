import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import record_path
from densewalk.geometry import GeometryError
from densewalk.metrics import (delta, delta_prime, discrepancy_report, max_residual,
                               step_vectors)


def paths(max_dim=3, max_len=9):
    return st.integers(1, max_dim).flatmap(
        lambda d: st.lists(
            st.lists(st.floats(-10, 10, allow_nan=False), min_size=d, max_size=d),
            min_size=2, max_size=max_len,
        )
    )


def delta_by_scan(P):
    # reverse pair order on purpose
    S = np.diff(np.asarray(P, float), axis=0)
    best = 0.0
    for j in range(len(S) - 1, -1, -1):
        for i in range(j - 1, -1, -1):
            best = max(best, float(np.sqrt(((S[i] - S[j]) ** 2).sum())))
    return best


class TestStepVectors:
    def test_single_step(self):
        np.testing.assert_array_equal(step_vectors([[0.0, 0.0], [3.0, 1.0]]), [[3.0, 1.0]])

    def test_1d(self):
        np.testing.assert_array_equal(step_vectors([0.0, 0.5, 2.0]).ravel(), [0.5, 1.5])

    def test_constant(self):
        np.testing.assert_array_equal(step_vectors([0.0, 0.0, 0.0]).ravel(), [0.0, 0.0])

    def test_too_short(self):
        with pytest.raises(ValueError):
            step_vectors([[1.0, 2.0]])

    def test_non_finite(self):
        with pytest.raises(GeometryError):
            step_vectors([0.0, float("inf")])


class TestDelta:
    def test_equal_steps(self):
        assert delta([0.0, 1.0, 2.0])[0] == 0.0

    def test_two_steps(self):
        value, pair = delta([0.0, 0.5, 2.0])
        assert value == pytest.approx(1.0)
        assert pair == (0, 1)

    def test_single_step(self):
        assert delta([[0.0], [5.0]]) == (0.0, None)


class TestDeltaPrime:
    def test_two_reals(self):
        value, shift = delta_prime([0.0, 0.5, 2.0])
        assert value == pytest.approx(1.0)
        assert shift[0] == pytest.approx(1.0)

    def test_equal_steps(self):
        value, shift = delta_prime([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
        assert value == 0.0
        np.testing.assert_array_equal(shift, [1.0, 2.0])

    def test_triangle(self):
        # steps (1,0), (-1,0), (0,1)
        value, shift = delta_prime([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        assert value == pytest.approx(2.0)
        np.testing.assert_allclose(shift, [0.0, 0.0], atol=1e-12)

    def test_report(self):
        rep = discrepancy_report([0.0, 0.5, 2.0])
        assert rep.delta <= rep.delta_prime + 1e-12
        assert rep.pair == (0, 1)


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(paths())
    def test_delta_le_delta_prime(self, P):
        record_path(P)
        assert delta(P)[0] <= delta_prime(P)[0] + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(paths(), st.data())
    def test_minimality_certificate(self, P, data):
        d = len(P[0])
        s = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=d, max_size=d)))
        dp, centre = delta_prime(P)
        assert dp <= 2.0 * max_residual(P, s) + 1e-12
        assert dp == pytest.approx(2.0 * max_residual(P, centre), abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(paths(), st.data())
    def test_translation_invariance(self, P, data):
        P = np.array(P)
        d = P.shape[1]
        off = np.array(data.draw(st.lists(st.integers(-8, 8), min_size=d, max_size=d)), float)
        assert delta(P + off)[0] == pytest.approx(delta(P)[0], abs=1e-9)
        assert delta_prime(P + off)[0] == pytest.approx(delta_prime(P)[0], abs=1e-9)
        # adding a constant to every step: p_i -> p_i + i * off
        ramp = P + np.arange(len(P))[:, None] * off
        assert delta_prime(ramp)[0] == pytest.approx(delta_prime(P)[0], abs=1e-8)
        assert delta(ramp)[0] == pytest.approx(delta(P)[0], abs=1e-8)

    @settings(max_examples=300, deadline=None)
    @given(paths())
    def test_scan_matches(self, P):
        assert delta(P)[0] == pytest.approx(delta_by_scan(P), abs=1e-12)

    def test_exhaustive_small_paths(self):
        # every 1-d lattice path with n = 4 and steps in {-1, 0, 1, 2}
        for steps in itertools.product([-1, 0, 1, 2], repeat=4):
            P = np.concatenate([[0], np.cumsum(steps)]).astype(float)
            record_path(P)
            assert delta(P)[0] == max(steps) - min(steps)
            assert delta_prime(P)[0] == pytest.approx(max(steps) - min(steps))
