"""Squared-exponential kernel and mean functions with analytic derivatives.

The kernel is

    K(x_i, x_j) = sf^2 exp(-1/2 (x_i - x_j)^T L^-1 (x_i - x_j)) + [i == j] sn^2

where the noise term keys on the *data index*, not on point coincidence.
All derivative methods act on the smooth part only.

Besides the per-pair ``k_eval``/``k_grad``/``k_hess`` contract, the kernel
exposes vectorized helpers over arrays of differences which the EGP code
uses to assemble whole Gram matrices at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class SquaredExponential:
    """SE kernel with length-scale matrix ``L`` (squared input units)."""

    length_scale_matrix: np.ndarray
    sigma_f: float = 1.0
    sigma_n: float = 0.0

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.length_scale_matrix, dtype=float))
        if L.shape[0] != L.shape[1]:
            raise DimensionMismatch(f"L must be square, got {L.shape}")
        if not np.allclose(L, L.T, rtol=1e-10, atol=1e-12 * np.abs(L).max()):
            raise ValueError("length-scale matrix must be symmetric")
        try:
            np.linalg.cholesky(L)
        except np.linalg.LinAlgError as exc:
            raise ValueError("length-scale matrix must be positive definite") from exc
        if not self.sigma_f > 0:
            raise ValueError(f"sigma_f must be positive, got {self.sigma_f}")
        if not self.sigma_n >= 0:
            raise ValueError(f"sigma_n must be nonnegative, got {self.sigma_n}")
        L = 0.5 * (L + L.T)
        L.setflags(write=False)
        object.__setattr__(self, "length_scale_matrix", L)

    @classmethod
    def isotropic(cls, length_scale, dim: int, sigma_f=1.0, sigma_n=0.0):
        """Build from per-dimension length scales; a scalar applies to all dims."""
        ls = np.broadcast_to(np.asarray(length_scale, dtype=float), (dim,))
        return cls(np.diag(ls**2), sigma_f, sigma_n)

    @property
    def dim(self) -> int:
        return self.length_scale_matrix.shape[0]

    @cached_property
    def precision(self) -> np.ndarray:
        """L^-1."""
        P = np.linalg.inv(self.length_scale_matrix)
        return 0.5 * (P + P.T)

    def _check(self, *xs):
        out = []
        for x in xs:
            x = np.atleast_1d(np.asarray(x, dtype=float))
            if x.shape[-1] != self.dim:
                raise DimensionMismatch(f"input of length {x.shape[-1]}, kernel expects {self.dim}")
            out.append(x)
        return out

    # -- per-pair contract ------------------------------------------------

    def k_eval(self, x_i, x_j, same_index: bool = False) -> float:
        x_i, x_j = self._check(x_i, x_j)
        val = float(self.value(x_i - x_j))
        if same_index:
            val += self.sigma_n**2
        return val

    def k_grad(self, x_i, x_j, arg: Literal["first", "second"] = "first") -> np.ndarray:
        x_i, x_j = self._check(x_i, x_j)
        d = x_i - x_j
        g = -self.value(d) * (self.precision @ d)
        if arg == "first":
            return g
        if arg == "second":
            return -g
        raise ValueError(f"arg must be 'first' or 'second', got {arg!r}")

    def k_hess(self, x_i, x_j, block: Literal["D1D1", "D2D2", "D1D2"] = "D1D1") -> np.ndarray:
        x_i, x_j = self._check(x_i, x_j)
        d = x_i - x_j
        u = self.precision @ d
        h = self.value(d) * (np.outer(u, u) - self.precision)
        if block in ("D1D1", "D2D2"):
            return h
        if block == "D1D2":
            return -h
        raise ValueError(f"unknown block {block!r}")

    # -- vectorized helpers over differences d = x_i - x_j ----------------

    def value(self, d) -> np.ndarray:
        """Smooth part at difference(s) ``d`` of shape (..., n)."""
        d = np.asarray(d, dtype=float)
        quad = np.einsum("...i,ij,...j->...", d, self.precision, d)
        return self.sigma_f**2 * np.exp(-0.5 * quad)

    def expected_value(self, d, M) -> np.ndarray:
        """Second-order expectation of the smooth part when the difference is
        uncertain with covariance ``M`` (shape (..., n, n)).

        For the SE kernel the three Hessian blocks collapse onto one matrix,
        so k + 1/2 tr(D1D1 P_i + 2 D1D2 P_ij^T + D2D2 P_j) equals
        k + 1/2 tr(H M) with M = P_i + P_j - P_ij - P_ij^T.
        """
        d = np.asarray(d, dtype=float)
        u = d @ self.precision
        k = self.value(d)
        q = np.einsum("...i,...ij,...j->...", u, M, u) - np.einsum("ij,...ji->...", self.precision, M)
        return k * (1.0 + 0.5 * q)

    def expected_value_grad(self, d, M) -> np.ndarray:
        """Gradient of :meth:`expected_value` with respect to ``d``; M symmetric."""
        d = np.asarray(d, dtype=float)
        u = d @ self.precision
        k = self.value(d)
        q = np.einsum("...i,...ij,...j->...", u, M, u) - np.einsum("ij,...ji->...", self.precision, M)
        Mu = np.einsum("...ij,...j->...i", M, u)
        return k[..., None] * (-(1.0 + 0.5 * q)[..., None] * u + Mu @ self.precision)


KERNELS = {"se": SquaredExponential}


class MeanFunction:
    """Prior mean with value, gradient and Hessian.

    Vectorized: ``x`` may be a single point (n,) or a stack (N, n).
    Registered means have vanishing third derivatives, which the EGP
    input-gradient relies on.
    """

    def value(self, x) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroMean(MeanFunction):
    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0

    def grad(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + x.shape[-1:])


@dataclass(frozen=True)
class QuadraticMean(MeanFunction):
    """m(x) = x^T A x + b^T x + c with A symmetric."""

    A: np.ndarray
    b: np.ndarray = field(default=None)
    c: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        A = 0.5 * (A + A.T)
        b = np.zeros(A.shape[0]) if self.b is None else np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = np.einsum("...i,ij,...j->...", x, self.A, x) + x @ self.b + self.c
        return v if x.ndim > 1 else float(v)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x @ self.A + self.b

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * self.A, x.shape + x.shape[-1:]).copy()


MEANS = {"zero": ZeroMean, "quadratic": QuadraticMean}


def _check_mean_input(mean, x):
    x = np.asarray(x, dtype=float)
    dim = getattr(mean, "dim", None)
    if x.ndim != 1 or (dim is not None and x.size != dim):
        raise DimensionMismatch(f"expected a single point of length {dim}, got shape {x.shape}")
    return x


def mean_eval(mean: MeanFunction, x) -> float:
    return float(mean.value(_check_mean_input(mean, x)))


def mean_grad(mean: MeanFunction, x) -> np.ndarray:
    return np.asarray(mean.grad(_check_mean_input(mean, x)))


def mean_hess(mean: MeanFunction, x) -> np.ndarray:
    return np.asarray(mean.hess(_check_mean_input(mean, x)))
