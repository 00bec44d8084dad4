import math

import numpy as np
import pytest

from deskmanip.core import (Pose2, RngStream, from_root_frame, pose_delta,
                            rotate, to_root_frame, wrap_angle)


def wrap_oracle(a: float) -> float:
    """atan2 of the unit phasor lands in [-pi, pi]; nudge -pi to +pi."""
    w = math.atan2(math.sin(a), math.cos(a))
    return math.pi if w == -math.pi else w


class TestWrapAngle:
    @pytest.mark.parametrize("a,expected", [
        (0.0, 0.0),
        (math.pi, math.pi),
        (-math.pi, math.pi),
        (2 * math.pi, 0.0),
        (3 * math.pi, math.pi),
        (-3.5 * math.pi, 0.5 * math.pi),
        (0.25, 0.25),
    ])
    def test_spot_values(self, a, expected):
        assert wrap_angle(a) == pytest.approx(expected, abs=1e-12)

    def test_range_and_congruence(self):
        rng = np.random.default_rng(0)
        for a in rng.uniform(-50, 50, size=2000):
            w = wrap_angle(float(a))
            assert -math.pi < w <= math.pi
            # same angle modulo a full turn
            assert abs(math.remainder(w - a, 2 * math.pi)) < 1e-9

    def test_matches_atan2_oracle(self):
        rng = np.random.default_rng(1)
        for a in rng.uniform(-20, 20, size=2000):
            assert wrap_angle(float(a)) == pytest.approx(wrap_oracle(float(a)), abs=1e-9)


class TestFrames:
    def test_to_from_root_inverse(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            root = Pose2(*rng.uniform(-3, 3, size=2), rng.uniform(-math.pi, math.pi))
            p = tuple(rng.uniform(-3, 3, size=2))
            q = from_root_frame(to_root_frame(p, root), root)
            assert np.allclose(q, p, atol=1e-12)

    def test_identity_root(self):
        assert to_root_frame((1.5, -0.5), Pose2(0, 0, 0)) == pytest.approx((1.5, -0.5))

    def test_rotate_composition(self):
        v = (0.3, -0.7)
        once = rotate(rotate(v, 0.4), 0.9)
        both = rotate(v, 1.3)
        assert np.allclose(once, both, atol=1e-12)
        assert np.allclose(rotate(v, 2 * math.pi), v, atol=1e-12)

    def test_pose_delta_reconstructs_target(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            cur = Pose2(*rng.uniform(-2, 2, size=2), rng.uniform(-math.pi, math.pi))
            tgt = Pose2(*rng.uniform(-2, 2, size=2), rng.uniform(-math.pi, math.pi))
            dx, dy, dth = pose_delta(tgt, cur)
            back = from_root_frame((dx, dy), cur)
            assert np.allclose(back, (tgt.x, tgt.y), atol=1e-12)
            assert wrap_angle(cur.theta + dth) == pytest.approx(wrap_angle(tgt.theta), abs=1e-12)

    def test_pose_delta_heading_wraps(self):
        d = pose_delta(Pose2(0, 0, 3.1), Pose2(0, 0, -3.1))
        assert abs(d[2]) < 0.1  # antipodal headings are neighbours, not a full turn apart


class TestRngStream:
    def test_same_key_same_sequence(self):
        a = RngStream(7, 3).uniform(size=100)
        b = RngStream(7, 3).uniform(size=100)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(7, 3).uniform(size=100)
        b = RngStream(7, 4).uniform(size=100)
        c = RngStream(8, 3).uniform(size=100)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_split_is_deterministic_and_independent(self):
        parent = RngStream(11, 0)
        before = RngStream(11, 0).uniform(size=10)
        c1 = parent.split(5).uniform(size=10)
        c2 = RngStream(11, 0).split(5).uniform(size=10)
        assert np.array_equal(c1, c2)
        # splitting must not consume parent draws
        assert np.array_equal(parent.uniform(size=10), before)

    def test_split_children_differ(self):
        parent = RngStream(11, 0)
        assert not np.array_equal(parent.split(1).uniform(size=20),
                                  parent.split(2).uniform(size=20))


def test_pose2_as_array():
    assert np.array_equal(Pose2(1.0, 2.0, 0.5).as_array(), [1.0, 2.0, 0.5])
