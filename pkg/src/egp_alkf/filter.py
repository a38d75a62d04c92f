"""Adaptive learning Kalman filter.

Each step runs

1. EGP regression of the disturbance at the current estimate,
2. EKF-style prediction on the state marginal and a linear correction,
3. learning: fixed-interval backward smoothing over the whole history,
   extraction of disturbance samples g_j from consecutive smoothed states,
   and a rebuilt EGP training set with the full smoothed cross-covariances.

Linear system::

    x_{k+1} = A_k x_k + B_k u_k + G_k g(x_k) + w_k,   w_k ~ N(0, Q_k)
    z_k     = H_k x_k + v_k,                          v_k ~ N(0, R_k)

The disturbance is scalar (G_k is n x 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .egp import CLAMP_TOL, RegressionInput, RegressionOutput, TrainingSet, regress, regress_many
from .errors import (
    DimensionMismatch,
    NegativeVariance,
    RankDeficientG,
    SingularBlock,
    SingularInnovation,
    SingularPrediction,
)
from .gaussian_core import GaussianDensity, condition, join, symmetrize
from .kernel import MeanFunction, SquaredExponential, ZeroMean

MatrixProvider = np.ndarray | Callable[[int], np.ndarray]


class StepMatrices(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray


def _as_provider(m):
    if callable(m):
        return m
    arr = np.atleast_2d(np.asarray(m, dtype=float))
    arr.setflags(write=False)
    return lambda k, _a=arr: _a


@dataclass(frozen=True)
class SystemModel:
    """Step-indexed system matrices; each field is a constant array or ``k -> array``.

    ``G`` must have full column rank at every step, or be identically zero
    to switch the disturbance channel off.
    """

    A: MatrixProvider
    B: MatrixProvider
    G: MatrixProvider
    H: MatrixProvider
    Q: MatrixProvider
    R: MatrixProvider

    def __post_init__(self):
        for name in ("A", "B", "G", "H", "Q", "R"):
            object.__setattr__(self, "_" + name, _as_provider(getattr(self, name)))
        const = None
        if not any(callable(getattr(self, f)) for f in StepMatrices._fields):
            const = self._build(0)
        object.__setattr__(self, "_const", const)
        self.at(0)

    @property
    def n(self) -> int:
        return self.at(0).A.shape[0]

    def at(self, k: int) -> StepMatrices:
        if self._const is not None:
            return self._const
        return self._build(k)

    def _build(self, k: int) -> StepMatrices:
        mats = StepMatrices(*(np.atleast_2d(np.asarray(getattr(self, "_" + f)(k), dtype=float))
                              for f in StepMatrices._fields))
        A, B, G, H, Q, R = mats
        n = A.shape[0]
        if (A.shape != (n, n) or B.shape[0] != n or G.shape != (n, 1) or H.shape[1] != n
                or Q.shape != (n, n) or R.shape != (H.shape[0],) * 2):
            raise DimensionMismatch(
                f"step {k}: A{A.shape} B{B.shape} G{G.shape} H{H.shape} Q{Q.shape} R{R.shape}"
            )
        if np.any(G) and np.linalg.matrix_rank(G) < G.shape[1]:
            raise RankDeficientG(f"G at step {k} lacks full column rank")
        if np.min(np.linalg.eigvalsh(symmetrize(Q))) < -1e-12:
            raise ValueError(f"Q at step {k} is not PSD")
        if np.min(np.linalg.eigvalsh(symmetrize(R))) <= 0:
            raise ValueError(f"R at step {k} is not PD")
        return mats


@dataclass(frozen=True)
class FilterState:
    """Filtered estimate at step ``k`` plus the history the smoother needs.

    ``means``/``covs`` hold x_j|Z_j for j = 0..k, ``controls`` u_j for
    j = 0..k-1. ``forward`` caches the (x'_{j+1}, A'_j, P'_{j+1}) used at
    prediction time; smoothing recomputes them and keeps these for diagnostics.
    """

    k: int
    means: np.ndarray
    covs: np.ndarray
    controls: np.ndarray
    forward: tuple = ()

    @property
    def x(self) -> np.ndarray:
        return self.means[-1]

    @property
    def P(self) -> np.ndarray:
        return self.covs[-1]

    @classmethod
    def initial(cls, x0, P0, m: int = 1) -> "FilterState":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        P0 = symmetrize(np.atleast_2d(np.asarray(P0, dtype=float)))
        return cls(0, x0[None], P0[None], np.zeros((0, m)))


class Prediction(NamedTuple):
    x: np.ndarray
    P: np.ndarray
    S: np.ndarray
    regression: RegressionOutput
    A_lin: np.ndarray
    u: np.ndarray
    k: int


@dataclass(frozen=True)
class SmoothedHistory:
    """Smoothed moments for j = 0..K (offset by ``start`` when windowed).

    ``cross[j, l]`` = cov(x_j, x_l | Z_K); ``adjacent[j]`` = cross[j, j+1].
    """

    start: int
    means: np.ndarray
    covs: np.ndarray
    cross: np.ndarray
    gains: np.ndarray
    A_lin: np.ndarray
    x_pred: np.ndarray
    P_pred: np.ndarray

    @property
    def adjacent(self) -> np.ndarray:
        K = len(self.means)
        return self.cross[np.arange(K - 1), np.arange(1, K)]


class DisturbanceSample(NamedTuple):
    g: float
    var: float


@dataclass(frozen=True)
class Diagnostics:
    k: int
    mu: float
    sigma2: float
    innovation: np.ndarray
    innovation_cov: np.ndarray
    n_train: int


def _linearized_prediction(mats: StepMatrices, x, P, u, reg: RegressionOutput, psd_floor=True):
    """(x'_{j+1}, A'_j, P'_{j+1}) for one transition."""
    A, B, G = mats.A, mats.B, mats.G
    D = np.atleast_2d(reg.mean_grad)
    x_next = A @ x + B @ u + G[:, 0] * reg.mean
    APD = A @ P @ D.T @ G.T
    # var(g) may not drop below the linearized share D P D^T, else the
    # joint of (x_j, x_{j+1}) is indefinite and smoothing breaks down
    var_g = max(reg.variance, (D @ P @ D.T).item()) if psd_floor else reg.variance
    P_next = A @ P @ A.T + APD + APD.T + var_g * (G @ G.T) + mats.Q
    return x_next, A + G @ D, symmetrize(P_next)


def predict(state: FilterState, model: SystemModel, u_k, egp_ctx, kernel: SquaredExponential,
            mean: MeanFunction = ZeroMean()) -> Prediction:
    train, query = egp_ctx
    u = np.atleast_1d(np.asarray(u_k, dtype=float))
    mats = model.at(state.k)
    if u.shape != (mats.B.shape[1],):
        raise DimensionMismatch(f"control of length {u.size}, B has {mats.B.shape[1]} columns")
    reg = regress(kernel, mean, train, query)
    x_pred, A_lin, P_pred = _linearized_prediction(mats, state.x, state.P, u, reg)
    nxt = model.at(state.k + 1)
    S = symmetrize(nxt.H @ P_pred @ nxt.H.T + nxt.R)
    return Prediction(x_pred, P_pred, S, reg, A_lin, u, state.k)


def correct(state: FilterState, pred: Prediction, z, model: SystemModel) -> FilterState:
    """Condition the prediction on z_{k+1}; appends to the history."""
    mats = model.at(pred.k + 1)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    joint = join(GaussianDensity(pred.x, pred.P), mats.H, np.zeros(mats.H.shape[0]), mats.R)
    try:
        post = condition(joint, z)
    except SingularBlock as exc:
        raise SingularInnovation(str(exc)) from exc
    return FilterState(
        k=pred.k + 1,
        means=np.concatenate([state.means, post.mean[None]]),
        covs=np.concatenate([state.covs, post.cov[None]]),
        controls=np.concatenate([state.controls.reshape(-1, pred.u.size), pred.u[None]]),
        forward=state.forward + ((pred.x, pred.A_lin, pred.P),),
    )


def _query_for_state(j: int, state_means, state_covs, train: TrainingSet, query: RegressionInput,
                     train_start: int) -> RegressionInput:
    """Regression input at filtered state j, correlated with the training set.

    The cross blocks are the previous pass's smoothed cov(x_i, x_j); the
    newest state's blocks come from the current regression input.
    """
    N = len(train)
    if j - train_start < N:
        cross = train.cross_cov[:, j - train_start]
    else:
        cross = query.cross_to_training
    return RegressionInput(state_means[j], state_covs[j], cross)


def smooth(state: FilterState, model: SystemModel, egp_ctx, kernel: SquaredExponential,
           mean: MeanFunction = ZeroMean(), start: int = 0, train_start: int = 0) -> SmoothedHistory:
    """Backward recursion over states ``start``..k, re-linearized with the current EGP.

    ``train_start`` is the state index of the first training record.
    """
    train, query = egp_ctx
    K = state.k
    if K - start < 1:
        sl = slice(start, K + 1)
        return SmoothedHistory(start, state.means[sl].copy(), state.covs[sl].copy(),
                               state.covs[sl][:, None].copy(), np.zeros((0,) + state.P.shape),
                               np.zeros((0,) + state.P.shape), np.zeros((0, state.x.size)),
                               np.zeros((0,) + state.P.shape))
    js = range(start, K)
    queries = [_query_for_state(j, state.means, state.covs, train, query, train_start) for j in js]
    regs = regress_many(kernel, mean, train, queries)

    n = state.x.size
    L = K - start + 1
    A_lin = np.empty((L - 1, n, n))
    x_pred = np.empty((L - 1, n))
    P_pred = np.empty((L - 1, n, n))
    for i, (j, reg) in enumerate(zip(js, regs)):
        x_pred[i], A_lin[i], P_pred[i] = _linearized_prediction(
            model.at(j), state.means[j], state.covs[j], state.controls[j], reg
        )

    xs = np.empty((L, n))
    Ps = np.empty((L, n, n))
    gains = np.empty((L - 1, n, n))
    cross = np.empty((L, L, n, n))
    xs[-1] = state.means[K]
    Ps[-1] = state.covs[K]
    cross[-1, -1] = Ps[-1]
    for i in range(L - 2, -1, -1):
        j = start + i
        Pj = state.covs[j]
        try:
            # K' = P_j A'^T P'^-1, via P' K'^T = A' P_j
            gain = np.linalg.solve(P_pred[i], A_lin[i] @ Pj).T
        except np.linalg.LinAlgError as exc:
            raise SingularPrediction(f"step {j}: {exc}") from exc
        gains[i] = gain
        xs[i] = state.means[j] + gain @ (xs[i + 1] - x_pred[i])
        Ps[i] = symmetrize((np.eye(n) - gain @ A_lin[i]) @ Pj + gain @ Ps[i + 1] @ gain.T)
        cross[i, i] = Ps[i]
        # gain chaining: cov(x_j, x_l) = K'_j cov(x_{j+1}, x_l) for l > j
        cross[i, i + 1:] = np.einsum("ab,lbc->lac", gain, cross[i + 1, i + 1:])
        cross[i + 1:, i] = np.swapaxes(cross[i, i + 1:], -1, -2)
    return SmoothedHistory(start, xs, Ps, cross, gains, A_lin, x_pred, P_pred)


def pseudo_inverse(G) -> np.ndarray:
    """Left pseudo-inverse (G^T G)^-1 G^T; zero for a zero G."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if not np.any(G):
        return np.zeros(G.T.shape)
    if G.shape[1] > 1 and np.linalg.matrix_rank(G) < G.shape[1]:
        raise RankDeficientG("G lacks full column rank")
    return np.linalg.solve(G.T @ G, G.T)


def extract_disturbance(sm: SmoothedHistory, model: SystemModel, controls) -> list[DisturbanceSample]:
    """Disturbance samples g_j|Z from consecutive smoothed states, j = start..K-1."""
    controls = np.asarray(controls, dtype=float)
    out = []
    adj = sm.adjacent
    for i in range(len(sm.means) - 1):
        j = sm.start + i
        mats = model.at(j)
        A = mats.A
        Gp = pseudo_inverse(mats.G)
        g = Gp @ (sm.means[i + 1] - A @ sm.means[i] - mats.B @ controls[j])
        C = adj[i]
        V = sm.covs[i + 1] - A @ C - C.T @ A.T + A @ sm.covs[i] @ A.T + mats.Q
        var = float(symmetrize(Gp @ V @ Gp.T)[0, 0])
        if var < 0:
            if var < -CLAMP_TOL:
                raise NegativeVariance(f"disturbance variance {var:.3e} at step {j}")
            var = 0.0
        out.append(DisturbanceSample(float(g[0]), var))
    return out


def build_training_set(sm: SmoothedHistory, disturbances, current_state: FilterState):
    """Training records for every smoothed transition plus the next regression input."""
    L = len(sm.means)
    if len(disturbances) != L - 1:
        raise DimensionMismatch(f"{len(disturbances)} disturbance samples for {L} smoothed states")
    g = np.array([d.g for d in disturbances])
    var = np.array([d.var for d in disturbances])
    train = TrainingSet(sm.means[:-1], g, var, sm.cross[:-1, :-1])
    query = RegressionInput(current_state.x, current_state.P, sm.cross[:-1, -1])
    return train, query


def step(state: FilterState, egp_ctx, u_k, z_next, model: SystemModel, kernel: SquaredExponential,
         mean: MeanFunction = ZeroMean(), max_history: int | None = None, train_start: int = 0):
    """One full predict / correct / learn cycle.

    Returns (new_state, (train, query), train_start, diagnostics, smoothed).
    """
    pred = predict(state, model, u_k, egp_ctx, kernel, mean)
    new = correct(state, pred, z_next, model)
    start = 0 if max_history is None else max(0, new.k - max_history)
    sm = smooth(new, model, egp_ctx, kernel, mean, start=start, train_start=train_start)
    dist = extract_disturbance(sm, model, new.controls)
    ctx = build_training_set(sm, dist, new)
    H = model.at(new.k).H
    diag = Diagnostics(
        k=new.k,
        mu=pred.regression.mean,
        sigma2=pred.regression.variance,
        innovation=np.atleast_1d(z_next) - H @ pred.x,
        innovation_cov=pred.S,
        n_train=len(ctx[0]),
    )
    return new, ctx, start, diag, sm


class AdaptiveLearningKalmanFilter:
    """Single-owner wrapper that carries the state and training set between steps."""

    def __init__(self, model: SystemModel, kernel: SquaredExponential, x0, P0,
                 mean: MeanFunction = ZeroMean(), max_history: int | None = None):
        self.model = model
        self.kernel = kernel
        self.mean = mean
        self.max_history = max_history
        m = model.at(0).B.shape[1]
        self.state = FilterState.initial(x0, P0, m)
        n = self.state.x.size
        self.train = TrainingSet.empty(n)
        self.query = RegressionInput(self.state.x, self.state.P, np.zeros((0, n, n)))
        self.train_start = 0
        self.diagnostics: list[Diagnostics] = []
        self.smoothed: SmoothedHistory | None = None  # latest learning pass

    def step(self, u_k, z_next) -> Diagnostics:
        self.state, (self.train, self.query), self.train_start, diag, self.smoothed = step(
            self.state, (self.train, self.query), u_k, z_next, self.model, self.kernel,
            self.mean, self.max_history, self.train_start,
        )
        self.diagnostics.append(diag)
        return diag

    def disturbance(self, x, P=None) -> RegressionOutput:
        """Learned disturbance at a (possibly uncertain) state, uncorrelated with the data."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        P = np.zeros((x.size, x.size)) if P is None else P
        return regress(self.kernel, self.mean, self.train,
                       RegressionInput.uncorrelated(x, P, len(self.train)))

    def disturbance_many(self, xs) -> list[RegressionOutput]:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n = xs.shape[1]
        N = len(self.train)
        queries = [RegressionInput.uncorrelated(x, np.zeros((n, n)), N) for x in xs]
        return regress_many(self.kernel, self.mean, self.train, queries)
