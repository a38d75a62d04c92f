"""Extended Gaussian process: GP regression when the inputs are themselves
uncertain, jointly Gaussian estimates.

The perturbed mean and kernel are second-order moment expansions of the
GP under input noise:

    m~(x_i)      = m(xb_i) + 1/2 tr(P_i D2m(xb_i))
    K~(x_i, x_j) = K(xb_i, xb_j) + 1/2 tr(D2K(xb_i, xb_j) PP_ij)
                   + Dm(xb_i)^T P_ij Dm(xb_j)
                   - 1/4 tr(D2m(xb_i) P_i) tr(D2m(xb_j) P_j)

with PP_ij = [[P_i, P_ij], [P_ji, P_j]]. K~ need not be positive definite,
so the joint (training + query) covariance is repaired by a spectrum flip
before conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EigenFailure, NegativeVariance, SingularGram
from .gaussian_core import GaussianDensity, sample, symmetrize
from .kernel import MeanFunction, SquaredExponential, ZeroMean

CLAMP_TOL = 1e-10


@dataclass(frozen=True)
class TrainingSet:
    """Uncertain training records.

    ``x`` (N, n) input means, ``g`` (N,) outputs, ``var_g`` (N,) output
    noise variances, ``cross_cov`` (N, N, n, n) with ``cross_cov[i, j]`` =
    cov(x_i, x_j); the diagonal blocks are the input covariances P_i.
    """

    x: np.ndarray
    g: np.ndarray
    var_g: np.ndarray
    cross_cov: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        N, n = x.shape
        g = np.asarray(self.g, dtype=float).reshape(N)
        var_g = np.asarray(self.var_g, dtype=float).reshape(N)
        C = np.asarray(self.cross_cov, dtype=float)
        if C.shape != (N, N, n, n):
            raise DimensionMismatch(f"cross_cov shape {C.shape}, expected {(N, N, n, n)}")
        if np.any(var_g < 0):
            raise ValueError("output variances must be nonnegative")
        # block symmetry P_ij = P_ji^T
        Ct = np.swapaxes(np.swapaxes(C, 0, 1), 2, 3)
        scale = max(1.0, float(np.max(np.abs(C)))) if C.size else 1.0
        if not np.allclose(C, Ct, rtol=0, atol=1e-9 * scale):
            raise ValueError("cross_cov is not block-symmetric")
        C = 0.5 * (C + Ct)
        if N:
            diag = C[np.arange(N), np.arange(N)]
            if np.min(np.linalg.eigvalsh(diag)) < -CLAMP_TOL * scale:
                raise ValueError("input covariance block is not PSD")
        for arr in (x, g, var_g, C):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "var_g", var_g)
        object.__setattr__(self, "cross_cov", C)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def input_cov(self) -> np.ndarray:
        """Diagonal blocks P_i, shape (N, n, n)."""
        N = len(self)
        return self.cross_cov[np.arange(N), np.arange(N)]

    @classmethod
    def empty(cls, dim: int) -> "TrainingSet":
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros(0), np.zeros((0, 0, dim, dim)))

    @classmethod
    def independent(cls, x, g, var_g=0.0, input_cov=None) -> "TrainingSet":
        """Records with uncorrelated inputs; ``input_cov`` (N, n, n) or None for exact inputs."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        N, n = x.shape
        C = np.zeros((N, N, n, n))
        if input_cov is not None:
            C[np.arange(N), np.arange(N)] = np.broadcast_to(input_cov, (N, n, n))
        return cls(x, g, np.broadcast_to(np.asarray(var_g, dtype=float), (N,)), C)


@dataclass(frozen=True)
class RegressionInput:
    """Query mean/covariance and cov(x_i, x_*) for every training record."""

    x: np.ndarray
    P: np.ndarray
    cross_to_training: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        n = x.size
        P = symmetrize(np.asarray(self.P, dtype=float).reshape(n, n))
        cross = np.asarray(self.cross_to_training, dtype=float).reshape(-1, n, n)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "cross_to_training", cross)

    @classmethod
    def uncorrelated(cls, x, P, n_train: int) -> "RegressionInput":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x, P, np.zeros((n_train, x.size, x.size)))


@dataclass(frozen=True)
class RegressionOutput:
    mean: float
    variance: float
    mean_grad: np.ndarray


# -- moment expansions ------------------------------------------------------


def perturbed_mean(mean: MeanFunction, x_i, P_i) -> float:
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    P_i = np.atleast_2d(np.asarray(P_i, dtype=float))
    if P_i.shape != (x_i.size, x_i.size):
        raise DimensionMismatch(f"P_i shape {P_i.shape} vs input length {x_i.size}")
    return float(mean.value(x_i)) + 0.5 * float(np.trace(P_i @ mean.hess(x_i)))


def perturbed_kernel(spec: SquaredExponential, mean: MeanFunction, x_i, x_j,
                     P_i, P_j, P_ij, same_index: bool = False) -> float:
    """Second-order covariance of g(x_i), g(x_j) for jointly Gaussian inputs.

    Pair-wise reference route through the kernel's Hessian blocks; the
    Gram-matrix code uses the vectorized equivalent.
    """
    x_i, x_j = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x_i, x_j))
    n = x_i.size
    P_i, P_j, P_ij = (np.asarray(p, dtype=float).reshape(n, n) for p in (P_i, P_j, P_ij))
    if x_j.size != n:
        raise DimensionMismatch("x_i and x_j differ in length")
    k = spec.k_eval(x_i, x_j, same_index)
    d11 = spec.k_hess(x_i, x_j, "D1D1")
    d22 = spec.k_hess(x_i, x_j, "D2D2")
    d12 = spec.k_hess(x_i, x_j, "D1D2")
    # 1/2 tr(D2K PP_ij); the off-diagonal blocks contribute D1D2 P_ij^T twice
    second = 0.5 * (np.trace(d11 @ P_i) + 2.0 * np.trace(d12 @ P_ij.T) + np.trace(d22 @ P_j))
    gi, gj = mean.grad(x_i), mean.grad(x_j)
    ti = np.trace(mean.hess(x_i) @ P_i)
    tj = np.trace(mean.hess(x_j) @ P_j)
    return float(k + second + gi @ P_ij @ gj - 0.25 * ti * tj)


def _perturbed_block(spec, mean, x1, P1, x2, P2, cross):
    """Vectorized K~ between two sets of uncertain inputs.

    ``cross[a, b]`` = cov(x1_a, x2_b), shape (N1, N2, n, n). No sigma_n term.
    """
    d = x1[:, None, :] - x2[None, :, :]
    M = P1[:, None] + P2[None, :] - cross - np.swapaxes(cross, -1, -2)
    K = spec.expected_value(d, M)
    g1, g2 = mean.grad(x1), mean.grad(x2)
    if np.any(g1) or np.any(g2):
        K = K + np.einsum("ai,abij,bj->ab", g1, cross, g2)
    t1 = np.einsum("aij,aji->a", mean.hess(x1), P1)
    t2 = np.einsum("aij,aji->a", mean.hess(x2), P2)
    if np.any(t1) or np.any(t2):
        K = K - 0.25 * np.outer(t1, t2)
    return K


def _perturbed_means(mean, x, P):
    return np.asarray(mean.value(x), dtype=float).reshape(len(x)) + 0.5 * np.einsum(
        "aij,aji->a", P, mean.hess(x)
    )


def training_block(spec, mean, train: TrainingSet) -> np.ndarray:
    """K~_xx + Sigma_g, with sigma_n^2 on the index diagonal."""
    N = len(train)
    Pd = train.input_cov
    K = _perturbed_block(spec, mean, train.x, Pd, train.x, Pd, train.cross_cov)
    K[np.arange(N), np.arange(N)] += spec.sigma_n**2 + train.var_g
    return symmetrize(K)


def _query_parts(spec, mean, train: TrainingSet, queries):
    """Unflipped last rows (k_x*, K~_**) for a batch of queries, plus their
    gradients w.r.t. each query mean.

    Returns row (B, N), kss (B,), drow (B, N, n), dkss (B, n).
    """
    N, n = train.x.shape
    for q in queries:
        if q.x.size != n or q.cross_to_training.shape[0] != N:
            raise DimensionMismatch(
                f"query dim {q.x.size} / {q.cross_to_training.shape[0]} cross blocks "
                f"vs training set N={N}, n={n}"
            )
    xq = np.stack([q.x for q in queries])
    Pq = np.stack([q.P for q in queries])
    # cov(x_*, x_i) = P_{i*}^T
    cross = np.swapaxes(np.stack([q.cross_to_training for q in queries]), -1, -2)
    Pi = train.input_cov
    d = xq[:, None] - train.x[None]
    M = Pq[:, None] + Pi[None] - cross - np.swapaxes(cross, -1, -2)
    row = spec.expected_value(d, M)
    drow = spec.expected_value_grad(d, M)
    kss = np.full(len(queries), spec.sigma_f**2)
    dkss = np.zeros((len(queries), n))

    gq, hq = mean.grad(xq), mean.hess(xq)
    tq = np.einsum("bij,bji->b", hq, Pq)
    if np.any(gq) or np.any(hq):
        gi = mean.grad(train.x)
        ti = np.einsum("aij,aji->a", mean.hess(train.x), Pi)
        row = row + np.einsum("bi,baij,aj->ba", gq, cross, gi) - 0.25 * np.outer(tq, ti)
        kss = kss + np.einsum("bi,bij,bj->b", gq, Pq, gq) - 0.25 * tq**2
        # registered means have zero third derivatives
        drow = drow + np.einsum("bij,bajk,ak->bai", hq, cross, gi)
        dkss = 2.0 * np.einsum("bij,bjk,bk->bi", hq, Pq, gq)
    return row, kss, drow, dkss


def _abs_divided_differences(w: np.ndarray) -> np.ndarray:
    """Daleckii-Krein kernel for f(l) = |l|: (|a| - |b|) / (a - b).

    Equal to sign(a) whenever a and b share a sign, which also covers ties.
    """
    a = w[..., :, None]
    b = w[..., None, :]
    diff = a - b
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (np.abs(a) - np.abs(b)) / diff
    G = np.where(a * b > 0, np.sign(a), ratio)
    return np.where(np.isfinite(G), G, 1.0)


def build_joint_covariance(spec, mean, train: TrainingSet, query: RegressionInput) -> np.ndarray:
    """Spectrum-flipped joint covariance of (g_1..g_N, g_*)."""
    Sigma, *_ = _joint_and_grads([query], spec, mean, train)
    w, V = _eigh_stack(Sigma)
    return symmetrize((V * np.abs(w)[..., None, :]) @ np.swapaxes(V, -1, -2))[0]


def _joint_and_grads(queries, spec, mean, train):
    N = len(train)
    B = len(queries)
    row, kss, drow, dkss = _query_parts(spec, mean, train, queries)
    Sigma = np.empty((B, N + 1, N + 1))
    Sigma[:, :N, :N] = training_block(spec, mean, train)
    Sigma[:, N, :N] = row
    Sigma[:, :N, N] = row
    Sigma[:, N, N] = kss
    dlast = np.empty((B, train.dim, N + 1))
    dlast[:, :, :N] = np.swapaxes(drow, 1, 2)
    # e w^T + w e^T counts the corner twice
    dlast[:, :, N] = 0.5 * dkss
    return Sigma, dlast


def _eigh_stack(S):
    if not np.all(np.isfinite(S)):
        raise EigenFailure("joint covariance has non-finite entries")
    try:
        return np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc


def _flipped_solve(Sigma, dlast, resid, N):
    """Posterior pieces from spectrum-flipped joints, differentiated through the flip.

    Returns (mu - m_*, variance, d(mu - m_*), flipped K~_**).
    """
    B = len(Sigma)
    w, V = _eigh_stack(Sigma)
    Sf = symmetrize((V * np.abs(w)[..., None, :]) @ np.swapaxes(V, -1, -2))
    Kxx = Sf[:, :N, :N]
    kxs = Sf[:, :N, N]
    try:
        rhs = np.stack([np.broadcast_to(resid, kxs.shape), kxs], axis=-1)
        sol = np.linalg.solve(Kxx, rhs) if N else np.zeros((B, 0, 2))
    except np.linalg.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    alpha, beta = sol[..., 0], sol[..., 1]
    mu = np.einsum("bi,bi->b", kxs, alpha)
    var = Sf[:, N, N] - np.einsum("bi,bi->b", kxs, beta)

    # mu - m_* = y^T Sf z with z = [alpha; 0], y = [-beta; 1]; differentiate
    # Sf = V |L| V^T along dSigma = e w^T + w e^T at fixed resid (Daleckii-Krein)
    y = np.concatenate([-beta, np.ones((B, 1))], axis=1)
    z = np.concatenate([alpha, np.zeros((B, 1))], axis=1)
    yh = np.einsum("bji,bj->bi", V, y)
    zh = np.einsum("bji,bj->bi", V, z)
    a = V[:, N, :]
    bh = np.einsum("bji,bdj->bdi", V, dlast)
    Gam = _abs_divided_differences(w)
    t1 = np.einsum("bij,bdj->bdi", Gam, bh * zh[:, None, :])
    t1 = np.einsum("bdi,bi->bd", t1, yh * a)
    t2 = np.einsum("bij,bj->bi", Gam, a * zh)
    t2 = np.einsum("bdi,bi->bd", bh, yh * t2)
    return mu, var, t1 + t2, Sf[:, N, N]


def regress_many(spec: SquaredExponential, mean: MeanFunction, train: TrainingSet,
                 queries: Sequence[RegressionInput]) -> list[RegressionOutput]:
    """Regress several queries against one training set in a single batch.

    Joints that are already positive definite skip the eigendecomposition:
    the flip is the identity there.
    """
    queries = list(queries)
    if not queries:
        return []
    N = len(train)
    B = len(queries)
    Sigma, dlast = _joint_and_grads(queries, spec, mean, train)

    xq = np.stack([q.x for q in queries])
    Pq = np.stack([q.P for q in queries])
    m_star = _perturbed_means(mean, xq, Pq)
    dm_star = np.atleast_2d(mean.grad(xq))
    resid = train.g - _perturbed_means(mean, train.x, train.input_cov)

    mu = np.empty(B)
    var = np.empty(B)
    dmu = np.empty((B, train.dim))
    kss = Sigma[:, N, N].copy()
    fast = np.zeros(B, dtype=bool)
    rows = Sigma[:, N, :N]
    try:
        Kxx = Sigma[0, :N, :N]
        if N:
            np.linalg.cholesky(Kxx)
            sol = np.linalg.solve(Kxx, np.column_stack([resid, rows.T]))
        else:
            sol = np.zeros((0, B + 1))
    except np.linalg.LinAlgError:
        pass
    else:
        alpha = sol[:, 0]
        schur = kss - np.einsum("bi,ib->b", rows, sol[:, 1:])
        fast = schur > 0
        mu[fast] = rows[fast] @ alpha
        var[fast] = schur[fast]
        dmu[fast] = dlast[fast, :, :N] @ alpha
    slow = ~fast
    if np.any(slow):
        mu[slow], var[slow], dmu[slow], kss[slow] = _flipped_solve(Sigma[slow], dlast[slow], resid, N)
    mu += m_star
    dmu += dm_star

    out = []
    for b in range(B):
        v = float(var[b])
        if v < 0:
            if v < -CLAMP_TOL * max(1.0, abs(float(kss[b]))):
                raise NegativeVariance(f"posterior variance {v:.3e} below clamp window")
            v = 0.0
        out.append(RegressionOutput(float(mu[b]), v, dmu[b].copy()))
    return out


def _flipped_regress_many(spec, mean, train, queries):
    """Reference route that always goes through the eigendecomposition."""
    N = len(train)
    Sigma, dlast = _joint_and_grads(list(queries), spec, mean, train)
    xq = np.stack([q.x for q in queries])
    Pq = np.stack([q.P for q in queries])
    resid = train.g - _perturbed_means(mean, train.x, train.input_cov)
    mu, var, dmu, _ = _flipped_solve(Sigma, dlast, resid, N)
    return mu + _perturbed_means(mean, xq, Pq), var, dmu + np.atleast_2d(mean.grad(xq))


def regress(spec: SquaredExponential, mean: MeanFunction, train: TrainingSet,
            query: RegressionInput) -> RegressionOutput:
    return regress_many(spec, mean, train, [query])[0]


def standard_regress(spec: SquaredExponential, mean: MeanFunction, exact_points, outputs,
                     sigma_g, x_star) -> tuple[float, float]:
    """Exact-input GP posterior at ``x_star``."""
    X = np.atleast_2d(np.asarray(exact_points, dtype=float))
    N = X.shape[0]
    y = np.asarray(outputs, dtype=float).reshape(N)
    xs = np.atleast_1d(np.asarray(x_star, dtype=float))
    var_g = np.broadcast_to(np.asarray(sigma_g, dtype=float) ** 2, (N,))
    K = spec.value(X[:, None] - X[None]) + np.diag(spec.sigma_n**2 + var_g)
    ks = spec.value(X - xs)
    kss = float(spec.value(np.zeros_like(xs)))
    m_s = float(mean.value(xs))
    if N == 0:
        return m_s, kss
    try:
        sol = np.linalg.solve(K, np.stack([y - mean.value(X), ks], axis=1))
    except np.linalg.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    mu = m_s + ks @ sol[:, 0]
    var = float(kss - ks @ sol[:, 1])
    if var < 0:
        if var < -CLAMP_TOL * max(1.0, kss):
            raise NegativeVariance(f"posterior variance {var:.3e} below clamp window")
        var = 0.0
    return float(mu), var


@dataclass(frozen=True)
class MomentEstimate:
    means: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray


def moment_oracle(spec: SquaredExponential, mean: MeanFunction, inputs: GaussianDensity,
                  n_samples: int, rng: np.random.Generator, method: str = "draw",
                  chunk: int = 200_000) -> MomentEstimate:
    """Monte-Carlo moments of g(x_1..x_N) with stacked inputs ~ ``inputs``.

    ``method="draw"`` samples the inputs, then GP values from the exact prior
    at those inputs. ``method="conditional"`` averages the conditional
    moments m(x) and K(x, x') over the input samples instead, which has far
    lower variance for the same integral.
    """
    if n_samples < 10_000:
        raise ValueError("moment_oracle needs at least 1e4 samples")
    n = spec.dim
    N = inputs.dim // n
    if N * n != inputs.dim:
        raise DimensionMismatch(f"input dimension {inputs.dim} is not a multiple of {n}")
    eye = np.eye(N)
    s1 = np.zeros(N)
    s2 = np.zeros((N, N))
    s4 = np.zeros((N, N))  # sums of squared per-sample contributions for SE
    s1sq = np.zeros(N)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        xs = sample(inputs, rng, size=m).reshape(m, N, n)
        mx = np.asarray(mean.value(xs.reshape(m * N, n))).reshape(m, N)
        K = spec.value(xs[:, :, None, :] - xs[:, None, :, :]) + spec.sigma_n**2 * eye
        if method == "draw":
            Lc = np.linalg.cholesky(K + 1e-10 * eye)
            gv = mx + np.einsum("bij,bj->bi", Lc, rng.standard_normal((m, N)))
            s1 += gv.sum(0)
            s1sq += (gv**2).sum(0)
            prod = gv[:, :, None] * gv[:, None, :]
        elif method == "conditional":
            s1 += mx.sum(0)
            s1sq += (mx**2).sum(0)
            # E[g_i g_j | x] = K_ij + m_i m_j
            prod = K + mx[:, :, None] * mx[:, None, :]
        else:
            raise ValueError(f"unknown method {method!r}")
        s2 += prod.sum(0)
        s4 += (prod**2).sum(0)
        done += m
    S = float(n_samples)
    mu = s1 / S
    mean_se = np.sqrt(np.maximum(s1sq / S - mu**2, 0.0) / S)
    e_prod = s2 / S
    cov = e_prod - np.outer(mu, mu)
    cov_se = np.sqrt(np.maximum(s4 / S - e_prod**2, 0.0) / S)
    return MomentEstimate(mu, symmetrize(cov), mean_se, cov_se)


__all__ = [
    "TrainingSet", "RegressionInput", "RegressionOutput", "MomentEstimate",
    "perturbed_mean", "perturbed_kernel", "build_joint_covariance", "training_block",
    "regress", "regress_many", "standard_regress", "moment_oracle", "ZeroMean",
]
