"""Multivariate Gaussian algebra on immutable (mean, covariance) values.

Conditioning and joining follow the usual partitioned-Gaussian identities::

    [x; y] ~ N([a; b], [[A, C], [C^T, B]])
    x | y  ~ N(a + C B^-1 (y - b), A - C B^-1 C^T)

    x ~ N(a, A),  y | x ~ N(H x + c, B)
    => [x; y] ~ N([a; H a + c], [[A, A H^T], [H A, H A H^T + B]])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DimensionMismatch, EigenFailure, SingularBlock

MAX_CONDITION = 1e12


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return (M + M^T) / 2; works on stacks of matrices too."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


@dataclass(frozen=True)
class GaussianDensity:
    """Mean vector and symmetric covariance of a multivariate normal."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1:
            raise DimensionMismatch(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"cov shape {cov.shape} does not match mean length {mean.size}"
            )
        cov = symmetrize(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class PartitionedGaussian:
    """Joint Gaussian over stacked (x, y); ``split`` is where the x-block ends."""

    joint: GaussianDensity
    split: int

    def __post_init__(self):
        if not 0 < self.split < self.joint.dim:
            raise DimensionMismatch(
                f"split {self.split} outside (0, {self.joint.dim})"
            )

    @property
    def a(self) -> np.ndarray:
        return self.joint.mean[: self.split]

    @property
    def b(self) -> np.ndarray:
        return self.joint.mean[self.split :]

    @property
    def A(self) -> np.ndarray:
        return self.joint.cov[: self.split, : self.split]

    @property
    def B(self) -> np.ndarray:
        return self.joint.cov[self.split :, self.split :]

    @property
    def C(self) -> np.ndarray:
        return self.joint.cov[: self.split, self.split :]


def condition(joint: PartitionedGaussian, observed_y) -> GaussianDensity:
    """Distribution of x given an observed value of y."""
    y = np.atleast_1d(np.asarray(observed_y, dtype=float))
    if y.shape != joint.b.shape:
        raise DimensionMismatch(
            f"observed_y has length {y.size}, y-block has {joint.b.size}"
        )
    B = joint.B
    try:
        cond = np.linalg.cond(B)
    except np.linalg.LinAlgError as exc:
        raise SingularBlock(str(exc)) from exc
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularBlock(f"y-block condition number {cond:.3g} too large")
    try:
        # B^-1 C^T, then transpose to get C B^-1
        gain = np.linalg.solve(B, joint.C.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularBlock(str(exc)) from exc
    mean = joint.a + gain @ (y - joint.b)
    cov = joint.A - gain @ joint.C.T
    return GaussianDensity(mean, cov)


def join(prior_x: GaussianDensity, H, c, noise_B) -> PartitionedGaussian:
    """Joint of x ~ prior_x and y = H x + c + noise, noise ~ N(0, noise_B)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    B = np.atleast_2d(np.asarray(noise_B, dtype=float))
    m = H.shape[0]
    if H.shape[1] != prior_x.dim or c.shape != (m,) or B.shape != (m, m):
        raise DimensionMismatch(
            f"H {H.shape}, c {c.shape}, B {B.shape} do not conform to n={prior_x.dim}"
        )
    a, A = prior_x.mean, prior_x.cov
    HA = H @ A
    mean = np.concatenate([a, H @ a + c])
    cov = np.block([[A, HA.T], [HA, HA @ H.T + B]])
    return PartitionedGaussian(GaussianDensity(mean, cov), prior_x.dim)


def marginal(joint: PartitionedGaussian, block: Literal["x", "y"]) -> GaussianDensity:
    if block == "x":
        return GaussianDensity(joint.a, joint.A)
    if block == "y":
        return GaussianDensity(joint.b, joint.B)
    raise ValueError(f"block must be 'x' or 'y', got {block!r}")


def _eigh(m: np.ndarray):
    try:
        return np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc


def spectrum_flip(m) -> np.ndarray:
    """Replace the eigenvalues of a symmetric matrix by their magnitudes.

    Accepts a single matrix or a stack of shape (..., n, n).
    """
    m = symmetrize(m)
    if not np.all(np.isfinite(m)):
        raise EigenFailure("matrix has non-finite entries")
    w, v = _eigh(m)
    out = (v * np.abs(w)[..., None, :]) @ np.swapaxes(v, -1, -2)
    return symmetrize(out)


def sqrtm_psd(cov) -> np.ndarray:
    """Symmetric square root S with S S^T = cov; negative eigenvalues are zeroed."""
    w, v = _eigh(symmetrize(cov))
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample(g: GaussianDensity, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw from ``g``; returns shape (n,) or (size, n)."""
    if not np.any(g.cov):
        return g.mean.copy() if size is None else np.tile(g.mean, (size, 1))
    S = sqrtm_psd(g.cov)
    if size is None:
        return g.mean + S @ rng.standard_normal(g.dim)
    eps = rng.standard_normal((size, g.dim))
    return g.mean + eps @ S.T
