"""Numerical harnesses for the Gaussian change-of-measure identity and the
convex comparison inequality for exponentials of Gaussian fields."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from ..errors import DominationError, NotPSDError, PreconditionError
from ..rng import stream
from .kernel import LogKernelSpec, MollifierSpec
from .sampling import ExactSampler, GridSpec


def psd_sqrt(cov, tol=1e-12):
    """Symmetric square root of a PSD matrix (handles singular ones)."""
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, atol=1e-14 * max(1.0, np.abs(cov).max())):
        raise PreconditionError("covariance matrix is not symmetric")
    w, v = np.linalg.eigh(cov)
    if w[0] < -tol * max(1.0, abs(w[-1])):
        raise NotPSDError(float(w[0]), 0.0)
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T


def test_functional(name, coef=None):
    """Named test functions of a vector (last axis)."""
    if callable(name):
        return name
    if name in ("first", "coord0"):
        return lambda v: v[..., 0]
    if name == "exp-linear":
        a = np.asarray(coef, dtype=float)
        return lambda v: np.exp(v @ a)
    if name == "sum-squares":
        return lambda v: np.sum(v**2, axis=-1)
    if name == "cos-sum":
        return lambda v: np.cos(np.sum(v, axis=-1))
    raise PreconditionError(f"unknown test functional {name!r}")


def gauss_hermite_nodes(dim, order):
    """Tensor Gauss-Hermite rule for E[h(xi)], xi ~ N(0, I_dim)."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / np.sqrt(2 * np.pi)
    pts = np.array(list(product(x, repeat=dim)))
    wts = np.prod(np.array(list(product(w, repeat=dim))), axis=1)
    return pts, wts


@dataclass
class GirsanovResult:
    lhs: float
    rhs: float
    stderr: float = 0.0

    def __iter__(self):
        return iter((self.lhs, self.rhs))


def girsanov_check(cov, shift_index: int, lam: float, F="first", coef=None,
                   mode="quadrature", n=None, seed=0) -> GirsanovResult:
    """Both sides of E[e^{Y - E[Y^2]/2} F(V)] = E[F(V + lam cov[:, k])],
    Y = lam V_k, for V ~ N(0, cov)."""
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    k = int(shift_index)
    if not 0 <= k < d:
        raise PreconditionError("shift index out of range")
    root = psd_sqrt(cov)
    f = test_functional(F, coef)
    shift = lam * cov[:, k]
    var_y = lam**2 * cov[k, k]
    if mode == "quadrature":
        if d > 8:
            raise PreconditionError("quadrature mode supports dimension <= 8")
        order = n or max(4, min(24, int(2e6 ** (1 / d))))
        xi, w = gauss_hermite_nodes(d, order)
        v = xi @ root.T
        lhs = w @ (np.exp(lam * v[:, k] - var_y / 2) * f(v))
        rhs = w @ f(v + shift)
        return GirsanovResult(float(lhs), float(rhs))
    if mode == "mc":
        n = n or 100000
        xi = stream(seed, "girsanov").standard_normal((n, d))
        v = xi @ root.T
        a = np.exp(lam * v[:, k] - var_y / 2) * f(v)
        b = f(v + shift)
        se = np.std(a - b, ddof=1) / np.sqrt(n)
        return GirsanovResult(float(a.mean()), float(b.mean()), float(se))
    raise PreconditionError(f"unknown mode {mode!r}")


_CONVEX = {"square": (lambda x: x**2, "convex"),
           "sqrt": (np.sqrt, "concave")}


def comparison_functional(F, p=None):
    """(function, "convex" | "concave") for a named functional."""
    if F in _CONVEX:
        return _CONVEX[F]
    if F == "power":
        if p is None or p == 0:
            raise PreconditionError("power functional needs nonzero p")
        kind = "concave" if 0 < p < 1 else "convex"
        return (lambda x: x**p), kind
    raise PreconditionError(f"unknown functional {F!r}")


@dataclass
class KahaneResult:
    lhs: float
    rhs: float
    stderr: float
    kind: str
    verdict: bool


def kahane_compare(kernel_y: LogKernelSpec, kernel_z: LogKernelSpec, F="square",
                   n=4000, seed=0, grid: GridSpec | None = None, eps=0.25,
                   moll: MollifierSpec | None = None, density=None,
                   p=None) -> KahaneResult:
    """Monte Carlo sides of E[F(int e^{Y - E Y^2/2} dsigma)] vs the same
    with Z, for Cov(Y) <= Cov(Z) pointwise on the grid.

    Both fields are driven by the same normal vectors (common random numbers);
    the stderr is that of the paired difference.
    """
    grid = grid or GridSpec(8)
    moll = moll or MollifierSpec()
    fn, kind = comparison_functional(F, p)
    sy = ExactSampler(kernel_y, grid, [(moll, eps)])
    sz = ExactSampler(kernel_z, grid, [(moll, eps)])
    diff = sz.cov - sy.cov
    if np.min(diff) < -1e-12:
        i, j = np.unravel_index(np.argmin(diff), diff.shape)
        pts = grid.points()
        raise DominationError(
            f"covariance of Y exceeds that of Z at points {tuple(pts[i])}, "
            f"{tuple(pts[j])} by {-diff[i, j]:.3e}")
    w = np.full(grid.size, grid.h**2)
    if density is not None:
        w = w * density(grid.points())
    xi = stream(seed, "kahane").standard_normal((n, grid.size))
    my = np.exp(xi @ sy.factor.T - sy.variance[0] / 2) @ w
    mz = np.exp(xi @ sz.factor.T - sz.variance[0] / 2) @ w
    a, b = fn(my), fn(mz)
    lhs, rhs = float(a.mean()), float(b.mean())
    se = float(np.std(b - a, ddof=1) / np.sqrt(n))
    if kind == "convex":
        verdict = lhs <= rhs + 3 * se
    else:
        verdict = lhs >= rhs - 3 * se
    return KahaneResult(lhs, rhs, se, kind, bool(verdict))
