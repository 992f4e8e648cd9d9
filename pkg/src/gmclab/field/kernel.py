"""Log-type covariance kernels and compactly supported mollifiers."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

from ..errors import PreconditionError


def log_plus(x):
    """max(ln x, 0), elementwise."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(x), 0.0)


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = r < 1.0
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


TENT_ROUNDING = 0.25


def _tent_smoothed(r):
    # cone with a rounded apex, tapered to zero at the rim like the bump
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = r < 1.0
    rm = r[m]
    tent = 1.0 - np.sqrt(rm**2 + TENT_ROUNDING**2) / np.sqrt(
        1.0 + TENT_ROUNDING**2)
    out[m] = tent * np.exp(-1.0 / (1.0 - rm**2))
    return out


PROFILES = {"bump": _bump, "tent-smoothed": _tent_smoothed}


@dataclass(frozen=True)
class MollifierSpec:
    """Radial C-infinity mollifier supported in the unit ball, unit mass.

    ``theta(x)`` is the unit-scale density; ``theta_eps(x, eps)`` the scaled
    one, eps^-2 theta(x / eps).
    """

    shape: str = "bump"

    def __post_init__(self):
        if self.shape not in PROFILES:
            raise PreconditionError(
                f"unknown mollifier shape {self.shape!r}; "
                f"choose from {sorted(PROFILES)}")

    @cached_property
    def norm(self) -> float:
        prof = PROFILES[self.shape]
        val, _ = integrate.quad(lambda r: float(prof(r)) * 2 * np.pi * r,
                                0.0, 1.0, epsabs=1e-15, epsrel=1e-13,
                                limit=200)
        return val

    def radial(self, r):
        """theta as a function of |x| (unit scale)."""
        return PROFILES[self.shape](r) / self.norm

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        return self.radial(np.linalg.norm(x, axis=-1))

    def theta_eps(self, x, eps):
        x = np.asarray(x, dtype=float)
        return self.theta(x / eps) / eps**2

    def hankel(self, k, n=2048):
        """Fourier transform of the unit-scale density at radial
        frequency k: 2 pi int theta(s) J0(k s) s ds."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        s, w = self.radial_nodes(n)
        out = np.empty(k.shape)
        flat = k.ravel()
        res = out.reshape(-1)
        for lo in range(0, flat.size, 4096):
            res[lo:lo + 4096] = special.j0(np.outer(flat[lo:lo + 4096], s)) @ w
        return out

    @cached_property
    def log_moment(self) -> float:
        """E[ln(1/|U|)] for U ~ theta; the O(1) offset of a mollified log."""
        prof = PROFILES[self.shape]
        val, _ = integrate.quad(
            lambda r: float(prof(r)) * 2 * np.pi * r * np.log(1 / r),
            0.0, 1.0, epsabs=1e-14, limit=200)
        return val / self.norm

    def radial_nodes(self, n):
        """Gauss-Legendre nodes s in [0,1] and weights for int theta(x) dx."""
        x, w = np.polynomial.legendre.leggauss(n)
        s = 0.5 * (x + 1.0)
        return s, 0.5 * w * self.radial(s) * 2 * np.pi * s


@dataclass(frozen=True)
class Box:
    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)

    @property
    def sides(self):
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def volume(self):
        return float(np.prod(self.sides))

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)


def sphere_log_factor(z):
    """a(z) = 1/2 ln(1 + |z|^2); the sphere Green function is
    ln(1/|z-w|) + a(z) + a(w)."""
    z = np.asarray(z)
    if np.iscomplexobj(z):
        r2 = np.abs(z) ** 2
    else:
        r2 = np.sum(z**2, axis=-1)
    return 0.5 * np.log1p(r2)


CORRECTIONS = ("zero", "sphere-green")


@dataclass(frozen=True)
class LogKernelSpec:
    """K(x, y) = amplitude * (ln+(1/|x-y|) + g(x, y)) on a planar box.

    correction "zero": g = 0.  correction "sphere-green": g chosen so that K
    is the round-sphere Green function in stereographic coordinates,
    g = a(x) + a(y) - ln+(|x-y|).
    """

    dimension: int = 2
    correction: str = "zero"
    domain: Box = field(default_factory=Box)
    amplitude: float = 1.0

    def __post_init__(self):
        if self.dimension != 2:
            raise PreconditionError("only planar (d=2) kernels are sampled")
        if self.correction not in CORRECTIONS:
            raise PreconditionError(f"unknown correction {self.correction!r}")
        if self.amplitude <= 0:
            raise PreconditionError("amplitude must be positive")

    @property
    def truncated(self) -> bool:
        """Whether the radial part is ln+ (True) or the full ln (False)."""
        return self.correction == "zero"

    @property
    def stationary(self) -> bool:
        return self.correction == "zero"

    def correction_value(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.correction == "zero":
            return np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))
        d = np.linalg.norm(x - y, axis=-1)
        return sphere_log_factor(x) + sphere_log_factor(y) - log_plus(d)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = np.linalg.norm(x - y, axis=-1)
        with np.errstate(divide="ignore"):
            base = np.maximum(-np.log(d), 0.0)
        return self.amplitude * (base + self.correction_value(x, y))

    def correction_sup(self, n: int = 33) -> float:
        """Sup-norm of g over domain x domain by an n x n grid scan."""
        lo, hi = self.domain.lo, self.domain.hi
        gx = np.linspace(lo[0], hi[0], n)
        gy = np.linspace(lo[1], hi[1], n)
        pts = np.stack(np.meshgrid(gx, gy, indexing="ij"), -1).reshape(-1, 2)
        vals = self.correction_value(pts[:, None, :], pts[None, :, :])
        return float(np.max(np.abs(vals)))

    def scaled(self, amplitude: float) -> "LogKernelSpec":
        return LogKernelSpec(self.dimension, self.correction, self.domain,
                             amplitude)
