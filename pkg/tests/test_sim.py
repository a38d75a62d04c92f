"""Vehicle scenario, ground-truth simulation, baseline filter and metrics."""

import numpy as np
import pytest

from egp_alkf.errors import DimensionMismatch
from egp_alkf.sim import (
    VehicleScenario,
    build_model,
    default_kernel,
    mse,
    run_alkf,
    run_baseline_kf,
    simulate,
)


def zero_control(t):
    return np.zeros_like(t)


class TestScenario:
    def test_model_matrices(self):
        m = build_model(VehicleScenario(h=0.02)).at(0)
        np.testing.assert_allclose(m.A, [[1, 0.02], [0, 1]])
        np.testing.assert_allclose(m.B, [[0.0002], [0.02]], rtol=1e-14)
        np.testing.assert_array_equal(m.G, m.B)
        np.testing.assert_array_equal(m.H, [[1.0, 0.0]])
        np.testing.assert_allclose(m.Q, np.diag([0.0, 1e-4]))
        np.testing.assert_allclose(m.R, [[1e-6]])
        assert np.linalg.matrix_rank(m.G) == 1

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            VehicleScenario(h=0.0)
        with pytest.raises(ValueError):
            VehicleScenario(h=0.1, duration=0.05)

    def test_steps(self):
        assert VehicleScenario().steps == 100


class TestSimulate:
    def test_constant_velocity(self):
        sc = VehicleScenario(q_vel_std=0.0, r_std=0.0, drag_coeff=0.0, control=zero_control,
                             pin_initial=True, x0=(0.0, 1.0))
        tr = simulate(sc)
        k = np.arange(sc.steps + 1)
        np.testing.assert_allclose(tr.states[:, 0], k * sc.h, rtol=1e-13, atol=0)
        np.testing.assert_array_equal(tr.states[:, 1], 1.0)

    def test_drag_reduces_increments(self):
        kw = dict(q_vel_std=0.0, r_std=0.0, pin_initial=True, x0=(0.0, 0.1), control=zero_control)
        free = simulate(VehicleScenario(drag_coeff=0.0, **kw))
        drag = simulate(VehicleScenario(drag_coeff=100.0, **kw))
        dv = np.diff(drag.states[:, 1])
        assert np.all(drag.states[:-1, 1] > 0)
        assert np.all(dv < np.diff(free.states[:, 1]))

    def test_energy_sanity(self):
        sc = VehicleScenario(q_vel_std=0.0, control=zero_control, pin_initial=True, x0=(0.0, -0.8))
        v = simulate(sc).states[:, 1]
        assert np.all(np.diff(np.abs(v)) <= 1e-15)

    def test_seed_determinism(self):
        a, b = simulate(VehicleScenario(seed=4)), simulate(VehicleScenario(seed=4))
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.measurements, b.measurements)
        assert not np.array_equal(a.states, simulate(VehicleScenario(seed=5)).states)

    def test_shapes(self):
        tr = simulate(VehicleScenario(duration=0.2))
        assert tr.states.shape == (11, 2)
        assert tr.measurements.shape == (11, 1)
        assert tr.controls.shape == (10, 1)
        np.testing.assert_allclose(tr.disturbances, -100 * np.abs(tr.states[:, 1]) * tr.states[:, 1])

    def test_measurement_noise_level(self):
        stds = []
        for seed in range(10):
            tr = simulate(VehicleScenario(seed=seed))
            stds.append(np.std(tr.measurements[:, 0] - tr.states[:, 0]))
        assert 0.0005 <= np.mean(stds) <= 0.002

    def test_noise_statistics(self):
        """Empirical process and measurement noise match Q and R within 30%."""
        w, v = [], []
        for seed in range(50):
            sc = VehicleScenario(seed=seed)
            tr = simulate(sc)
            m = build_model(sc).at(0)
            pred = (tr.states[:-1] @ m.A.T + tr.controls @ m.B.T
                    + tr.disturbances[:-1, None] * m.G[:, 0])
            w.append(tr.states[1:] - pred)
            v.append(tr.measurements[:, 0] - tr.states[:, 0])
        w, v = np.concatenate(w), np.concatenate(v)
        assert np.var(w[:, 1]) == pytest.approx(1e-4, rel=0.3)
        np.testing.assert_allclose(w[:, 0], 0.0, atol=1e-15)
        assert np.var(v) == pytest.approx(1e-6, rel=0.3)


class TestMetrics:
    def test_zero(self):
        x = np.random.default_rng(0).standard_normal((5, 2))
        np.testing.assert_array_equal(mse(x, x), [0.0, 0.0])

    def test_offset(self):
        x = np.zeros((7, 2))
        y = x.copy()
        y[:, 1] += 0.3
        np.testing.assert_allclose(mse(y, x), [0.0, 0.09])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mse(np.zeros((3, 2)), np.zeros((4, 2)))


def run_both(sc):
    tr = simulate(sc)
    model = build_model(sc)
    kf = run_baseline_kf(tr, model, sc.x0, sc.P0)
    al = run_alkf(tr, model, sc.x0, sc.P0, default_kernel())
    return tr, kf, al


@pytest.fixture(scope="module")
def ten_seed_runs():
    return [run_both(VehicleScenario(seed=s)) for s in range(10)]


class TestComparison:
    @pytest.mark.slow
    def test_zero_disturbance_baseline_wins(self):
        kf_e, al_e = [], []
        for seed in range(5):
            tr, kf, al = run_both(VehicleScenario(seed=seed, drag_coeff=0.0))
            kf_e.append(mse(kf.means[1:], tr.states[1:]))
            al_e.append(mse(al.trace.means[1:], tr.states[1:]))
        # the correct model wins up to statistical noise
        assert np.mean(kf_e, axis=0)[0] <= 1.1 * np.mean(al_e, axis=0)[0]

    @pytest.mark.slow
    def test_baseline_velocity_bias(self, ten_seed_runs):
        """Over the final half, the KF's velocity bias exceeds 3x the ALKF's (10-seed mean).

        Bias is the magnitude of the time-averaged signed error of one run.
        """
        kf_b, al_b = [], []
        for tr, kf, al in ten_seed_runs:
            half = len(tr.t) // 2
            kf_b.append(abs(np.mean(kf.means[half:, 1] - tr.states[half:, 1])))
            al_b.append(abs(np.mean(al.trace.means[half:, 1] - tr.states[half:, 1])))
        assert np.mean(kf_b) > 3 * np.mean(al_b)

    def test_baseline_is_plain_kf(self):
        sc = VehicleScenario(seed=0, duration=0.1)
        tr = simulate(sc)
        m = build_model(sc).at(0)
        kf = run_baseline_kf(tr, build_model(sc), sc.x0, sc.P0)
        x, P = np.asarray(sc.x0, float), sc.P0
        for k in range(sc.steps):
            x = m.A @ x + m.B @ tr.controls[k]
            P = m.A @ P @ m.A.T + m.Q
            S = P[0, 0] + m.R[0, 0]
            Kg = P[:, 0] / S
            x = x + Kg * (tr.measurements[k + 1, 0] - x[0])
            P = P - np.outer(Kg, P[0])
        np.testing.assert_allclose(kf.means[-1], x, rtol=1e-12)
        np.testing.assert_allclose(kf.covs[-1], P, rtol=1e-10)

    def test_identical_seed_identical_trace(self):
        sc = VehicleScenario(seed=8, duration=0.3)
        a, b = run_both(sc), run_both(sc)
        np.testing.assert_array_equal(a[2].trace.means, b[2].trace.means)
        np.testing.assert_array_equal(a[2].trace.covs, b[2].trace.covs)
