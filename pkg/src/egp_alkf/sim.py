"""1-D vehicle with quadratic drag: ground truth, baseline KF, ALKF pipeline, metrics.

Continuous model  p' = v,  v' = u + Delta(v),  Delta(v) = -c |v| v,
discretized with step h as A = [[1, h], [0, 1]], B = G = [h^2/2, h]^T,
H = [1, 0]. The discrete system is the plant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .filter import AdaptiveLearningKalmanFilter, SystemModel
from .gaussian_core import GaussianDensity, sample
from .kernel import MeanFunction, SquaredExponential, ZeroMean
from .errors import DimensionMismatch


def sine_control(t):
    return np.sin(2.0 * np.pi * t)


@dataclass(frozen=True)
class VehicleScenario:
    h: float = 0.02
    duration: float = 2.0
    drag_coeff: float = 100.0
    q_vel_std: float = 0.01
    r_std: float = 0.001
    x0: tuple = (0.0, 0.0)
    p0_std: float = 0.2
    seed: int = 0
    pin_initial: bool = False
    control: Callable = field(default=sine_control, compare=False)

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"time step must be positive, got {self.h}")
        if not self.duration >= self.h:
            raise ValueError("duration must cover at least one step")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.h))

    @property
    def Q(self) -> np.ndarray:
        return np.diag([0.0, self.q_vel_std**2])

    @property
    def R(self) -> np.ndarray:
        return np.array([[self.r_std**2]])

    @property
    def P0(self) -> np.ndarray:
        return self.p0_std**2 * np.eye(2)

    def drag(self, v):
        return -self.drag_coeff * np.abs(v) * v


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray         # (K+1,)
    states: np.ndarray    # (K+1, 2)
    disturbances: np.ndarray  # g(x_k), (K+1,)
    measurements: np.ndarray  # z_k, (K+1, 1); z_0 is generated but unused by the filters
    controls: np.ndarray  # u_k, (K, 1)


def build_model(scenario: VehicleScenario, R=None) -> SystemModel:
    h = scenario.h
    A = np.array([[1.0, h], [0.0, 1.0]])
    B = np.array([[h * h / 2.0], [h]])
    H = np.array([[1.0, 0.0]])
    # the filter needs R > 0 even when the simulated sensor is noise-free
    if R is None:
        R = scenario.R if scenario.r_std > 0 else np.array([[1e-12]])
    R = np.atleast_2d(np.asarray(R, dtype=float))
    return SystemModel(A=A, B=B, G=B.copy(), H=H, Q=scenario.Q, R=R)


def simulate(scenario: VehicleScenario) -> Trajectory:
    rng = np.random.default_rng(scenario.seed)
    mats = build_model(scenario).at(0)
    K = scenario.steps
    x0 = np.asarray(scenario.x0, dtype=float)
    x = x0.copy() if scenario.pin_initial else sample(GaussianDensity(x0, scenario.P0), rng)
    t = np.arange(K + 1) * scenario.h
    states = np.empty((K + 1, 2))
    z = np.empty((K + 1, 1))
    u = np.asarray(scenario.control(t[:-1]), dtype=float).reshape(K, 1)
    w_dist = GaussianDensity(np.zeros(2), scenario.Q)
    v_dist = GaussianDensity(np.zeros(1), scenario.R)  # zero when r_std = 0
    for k in range(K + 1):
        states[k] = x
        z[k] = mats.H @ x + sample(v_dist, rng)
        if k == K:
            break
        g = scenario.drag(x[1])
        x = mats.A @ x + mats.B @ u[k] + mats.G[:, 0] * g + sample(w_dist, rng)
    return Trajectory(t, states, scenario.drag(states[:, 1]), z, u)


@dataclass(frozen=True)
class EstimateTrace:
    means: np.ndarray  # (K+1, n)
    covs: np.ndarray   # (K+1, n, n)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.einsum("kii->ki", self.covs), 0.0))


def run_baseline_kf(traj: Trajectory, model: SystemModel, x0, P0) -> EstimateTrace:
    """Plain Kalman filter that assumes no disturbance."""
    x = np.asarray(x0, dtype=float).copy()
    P = np.asarray(P0, dtype=float).copy()
    means, covs = [x.copy()], [P.copy()]
    for k in range(len(traj.controls)):
        m = model.at(k)
        x = m.A @ x + m.B @ traj.controls[k]
        P = m.A @ P @ m.A.T + m.Q
        m1 = model.at(k + 1)
        S = m1.H @ P @ m1.H.T + m1.R
        Kg = np.linalg.solve(S, m1.H @ P).T
        x = x + Kg @ (traj.measurements[k + 1] - m1.H @ x)
        P = P - Kg @ S @ Kg.T
        P = 0.5 * (P + P.T)
        means.append(x.copy())
        covs.append(P.copy())
    return EstimateTrace(np.array(means), np.array(covs))


@dataclass(frozen=True)
class AlkfRun:
    trace: EstimateTrace
    snapshots: dict  # time -> (v_grid, mean, var)
    filter: AdaptiveLearningKalmanFilter


def default_kernel(length_scale=0.04, sigma_f=1.0, sigma_n=0.1) -> SquaredExponential:
    return SquaredExponential.isotropic(length_scale, 2, sigma_f, sigma_n)


def run_alkf(traj: Trajectory, model: SystemModel, x0, P0, kernel: SquaredExponential,
             mean: MeanFunction = ZeroMean(), snapshot_times=(), v_grid=None,
             snapshot_position: float = 0.0, max_history: int | None = None,
             on_step=None) -> AlkfRun:
    """Run the ALKF over a trajectory; optionally record learned-disturbance snapshots.

    Snapshots regress the learned disturbance on ``v_grid`` at position
    ``snapshot_position`` with exact inputs, right after the step whose time
    matches each entry of ``snapshot_times``.
    """
    alkf = AdaptiveLearningKalmanFilter(model, kernel, x0, P0, mean, max_history)
    h = traj.t[1] - traj.t[0] if len(traj.t) > 1 else 1.0
    want = {int(round(t / h)): t for t in snapshot_times}
    snaps = {}

    def snap(k):
        if v_grid is None or k not in want:
            return
        pts = np.column_stack([np.full(len(v_grid), snapshot_position), v_grid])
        outs = alkf.disturbance_many(pts)
        snaps[want[k]] = (np.asarray(v_grid), np.array([o.mean for o in outs]),
                          np.array([o.variance for o in outs]))

    snap(0)
    for k in range(len(traj.controls)):
        alkf.step(traj.controls[k], traj.measurements[k + 1])
        if on_step is not None:
            on_step(alkf)
        snap(k + 1)
    st = alkf.state
    return AlkfRun(EstimateTrace(st.means.copy(), st.covs.copy()), snaps, alkf)


def mse(estimates, truth) -> np.ndarray:
    """Time-averaged squared error per component."""
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape:
        raise DimensionMismatch(f"estimates {e.shape} vs truth {t.shape}")
    return np.mean((e - t) ** 2, axis=0)
