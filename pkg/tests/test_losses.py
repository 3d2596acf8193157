import numpy as np
import pytest

from lowrank_lab.errors import InvalidInput
from lowrank_lab.losses import (
    FullObservationLoss,
    LinearLoss,
    SensingLoss,
    build_counterexample_loss,
    completion_measurement,
    symmetrize_loss,
)
from lowrank_lab.symmat import symmetrize


def fd_gradient(spec, w, h=1e-5):
    d = spec.dim
    g = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d))
            e[i, j] = h
            g[i, j] = (spec.value(w + e) - spec.value(w - e)) / (2 * h)
    return g


def random_specs(seed, d=4):
    rng = np.random.default_rng(seed)
    ms = [completion_measurement(d, rng.integers(d), rng.integers(d), rng.standard_normal())
          for _ in range(6)]
    return [
        SensingLoss(ms),
        FullObservationLoss(symmetrize(rng.standard_normal((d, d)))),
        LinearLoss(q=symmetrize(rng.standard_normal((d, d))), offset=rng.standard_normal()),
    ]


class TestValue:
    def test_empty_sensing_is_zero(self):
        spec = SensingLoss([], dim=3)
        assert spec.value(np.eye(3)) == 0.0
        assert np.array_equal(spec.gradient(np.eye(3)), np.zeros((3, 3)))

    def test_full_observation_at_target(self):
        t = np.diag([2.0, 1.0])
        assert FullObservationLoss(t).value(t) == 0.0

    def test_linear_trace(self):
        spec = LinearLoss(q=np.diag([2.0, 1.0]), offset=5.0)
        assert spec.value(np.eye(2)) == pytest.approx(2.0)

    def test_dim_mismatch(self):
        spec = LinearLoss(q=np.eye(2))
        with pytest.raises(InvalidInput):
            spec.value(np.eye(3))


class TestGradient:
    def test_single_measurement_at_zero(self):
        m = completion_measurement(3, 0, 0, 1.0)
        spec = SensingLoss([m])
        want = np.zeros((3, 3))
        want[0, 0] = -1.0
        assert np.allclose(spec.gradient(np.zeros((3, 3))), want)

    def test_counterexample_gradient_pattern(self):
        big_r = 100.0
        spec = build_counterexample_loss(big_r)
        neg_grad = -spec.gradient(np.zeros((4, 4)))
        want = np.zeros((4, 4))
        want[0, 2] = want[2, 0] = 1.0
        want[0, 3] = want[3, 0] = big_r
        want[1, 2] = want[2, 1] = big_r
        assert np.array_equal(neg_grad, want)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        for spec in random_specs(seed):
            w = symmetrize(rng.standard_normal((spec.dim, spec.dim)))
            g, fd = spec.gradient(w), fd_gradient(spec, w)
            scale = max(1.0, np.linalg.norm(fd))
            assert np.linalg.norm(g - fd) <= 1e-6 * scale

    @pytest.mark.parametrize("seed", range(4))
    def test_bitwise_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        for spec in random_specs(seed):
            w = symmetrize(rng.standard_normal((spec.dim, spec.dim)))
            g = spec.gradient(w)
            assert np.array_equal(g, g.T)

    @pytest.mark.parametrize("seed", range(4))
    def test_convex_along_segments(self, seed):
        rng = np.random.default_rng(200 + seed)
        for spec in random_specs(seed):
            a = symmetrize(rng.standard_normal((spec.dim, spec.dim)))
            b = symmetrize(rng.standard_normal((spec.dim, spec.dim)))
            mid = spec.value((a + b) / 2)
            assert mid <= (spec.value(a) + spec.value(b)) / 2 + 1e-12


class TestSymmetrizeLoss:
    def test_identity_on_all_kinds(self):
        for spec in random_specs(0):
            assert symmetrize_loss(spec) is spec


class TestCounterexampleLoss:
    def test_feasible_points(self):
        big_r = 100.0
        spec = build_counterexample_loss(big_r)
        v = np.array([1.0, big_r, 1.0, big_r])
        m_rank = np.outer(v, v)
        m_norm = np.array([
            [big_r, 1, 1, big_r],
            [1, big_r, big_r, 1],
            [1, big_r, big_r, 1],
            [big_r, 1, 1, big_r],
        ])
        assert spec.value(m_rank) == 0.0
        assert spec.value(m_norm) == 0.0

    def test_value_at_zero(self):
        big_r = 100.0
        spec = build_counterexample_loss(big_r)
        assert spec.value(np.zeros((4, 4))) == pytest.approx((2 + 4 * big_r**2) / 2)

    def test_rejects_small_r(self):
        with pytest.raises(InvalidInput):
            build_counterexample_loss(1.0)
