"""Mollified covariances (K * theta_eps' * theta_eps)(x, y) by nested quadrature.

The radial part is computed in polar coordinates around each mollifier:

* inner: for a radial mollifier of scale e, the circle average of
  ln(1/|t - sigma e^{i phi}|) is ln(1/max(t, sigma)); the truncation ln+
  adds the circle average of ln+|.|, which is nonzero only where the circle
  leaves the unit disk and is integrated over that arc alone.  The s-integral
  is split at the kinks t/e, (1-t)/e, (t-1)/e.
* outer: Gauss-Legendre in the second mollifier's radius times a periodic
  trapezoid rule in its angle.

Outside the overlap zones the mean-value property gives the value in closed
form (ln(1/r) or 0).  Step refinement doubles every node count until two
successive iterates agree to ``field.quad_tol``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.interpolate import BarycentricInterpolator

from .. import config
from ..errors import QuadratureError
from .kernel import LogKernelSpec, MollifierSpec, sphere_log_factor

MAX_LEVEL = 5
_BLOCK = 65536


@lru_cache(maxsize=None)
def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _arc_excess(t, sig, n):
    """Circle average of ln+|t - sig e^{i phi}| for arrays t, sig >= 0."""
    t, sig = np.broadcast_arrays(t, sig)
    out = np.zeros(t.shape)
    full = np.abs(t - sig) >= 1.0
    out[full] = np.log(np.maximum(t[full], sig[full]))
    part = (~full) & (t + sig > 1.0)
    if np.any(part):
        tp, sp = t[part], sig[part]
        c = np.clip((tp**2 + sp**2 - 1.0) / (2 * tp * sp), -1.0, 1.0)
        a = np.arccos(c)
        x, w = _gl(n)
        phi = a[:, None] + (np.pi - a)[:, None] * 0.5 * (x + 1.0)
        d2 = tp[:, None] ** 2 + sp[:, None] ** 2 \
            - 2 * (tp * sp)[:, None] * np.cos(phi)
        vals = 0.5 * np.log(np.maximum(d2, 1.0))
        out[part] = (0.5 * (np.pi - a) * (vals @ w)) / np.pi
    return out


def _inner(t, moll, e, truncated, n):
    """k(t) = int theta_e(v) k0(|t e1 - v|) dv for radial base k0."""
    t = np.asarray(t, dtype=float).ravel()
    x, w = _gl(n)
    one = np.ones_like(t)
    cuts = [np.clip(t / e, 0, 1)]
    if truncated:
        cuts += [np.clip((1 - t) / e, 0, 1), np.clip((t - 1) / e, 0, 1)]
    edges = np.sort(np.stack([0 * one] + cuts + [one], axis=1), axis=1)
    total = np.zeros_like(t)
    for j in range(edges.shape[1] - 1):
        a, b = edges[:, j:j + 1], edges[:, j + 1:j + 2]
        half = 0.5 * (b - a)
        s = a + half * (x + 1.0)
        ws = half * w * moll.radial(s) * 2 * np.pi * s
        sig = e * s
        vals = -np.log(np.maximum(t[:, None], sig))
        if truncated:
            vals = vals + _arc_excess(t[:, None], sig, n)
        total += np.sum(ws * vals, axis=1)
    return total


def _fast_value(r, d, truncated):
    """Closed form where it applies, else nan."""
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, np.nan)
    with np.errstate(divide="ignore"):
        if truncated:
            m = (r >= d) & (r + d <= 1.0)
            out[m] = -np.log(r[m])
            out[r - d >= 1.0] = 0.0
        else:
            m = r >= d
            out[m] = -np.log(r[m])
    return out


def _order(m1, e1, m2, e2):
    """Larger scale goes inside (its kinks are the ones the split handles)."""
    if e1 >= e2:
        return m1, e1, m2, e2
    return m2, e2, m1, e1


def _radial_level(r, mi, ei, mo, eo, truncated, level):
    n = 8 * 2**level
    s, ws = mo.radial_nodes(n)
    M = max(16, n)
    phi = 2 * np.pi * np.arange(M) / M
    sig = eo * s
    t = np.sqrt(np.maximum(r**2 + sig[:, None] ** 2
                           + 2 * r * sig[:, None] * np.cos(phi)[None, :], 0.0))
    flat = t.ravel()
    k = np.empty_like(flat)
    block = max(64, _BLOCK // (n * n // 256))
    for lo in range(0, flat.size, block):
        k[lo:lo + block] = _inner(flat[lo:lo + block], mi, ei, truncated, n)
    return float(ws @ k.reshape(t.shape).mean(axis=1))


def radial_covariance(r, moll1, eps1, moll2, eps2, truncated=True, tol=None):
    """(k0 * theta1_eps1 * theta2_eps2)(r) for k0 = ln+(1/.) or ln(1/.).

    Scalar ``r``.  Raises QuadratureError if refinement does not settle.
    """
    tol = config.settings.quad_tol if tol is None else tol
    r = float(abs(r))
    fast = _fast_value(np.array([r]), eps1 + eps2, truncated)[0]
    if not np.isnan(fast):
        return float(fast)
    mi, ei, mo, eo = _order(moll1, eps1, moll2, eps2)
    prev = _radial_level(r, mi, ei, mo, eo, truncated, 1)
    for level in range(2, MAX_LEVEL + 1):
        cur = _radial_level(r, mi, ei, mo, eo, truncated, level)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur
        prev = cur
    raise QuadratureError(
        f"mollified covariance at r={r:g} did not converge to {tol:g}",
        previous=prev, last=cur)


HANKEL_KMAX = 900.0  # unit-scale transforms are below 1e-15 beyond this


@lru_cache(maxsize=64)
def pair_density(moll1, eps1, moll2, eps2, nodes=160):
    """Radial profile of theta1_eps1 * theta2_eps2 on [0, eps1 + eps2]
    (zero beyond), via the Hankel transform of the product of transforms,
    sampled at Chebyshev nodes and interpolated."""
    d = eps1 + eps2
    kmax = HANKEL_KMAX / max(eps1, eps2)
    width = np.pi / (2 * d)
    npan = int(np.ceil(kmax / width))
    x, w = _gl(16)
    edges = np.arange(npan + 1) * width
    k = (edges[:-1, None] + 0.5 * width * (x + 1.0)).ravel()
    wk = np.tile(0.5 * width * w, npan)
    amp = moll1.hankel(k * eps1) * moll2.hankel(k * eps2) * k * wk / (2 * np.pi)
    s = _cheb_nodes(0.0, d, nodes)
    vals = np.empty_like(s)
    for i in range(0, s.size, 16):
        vals[i:i + 16] = special.j0(np.outer(s[i:i + 16], k)) @ amp
    # scipy orders the nodes randomly when forming weights; pin it so that
    # repeated runs agree to the last bit
    f = BarycentricInterpolator(s, vals, random_state=0)

    def rho(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        m = t < d
        out[m] = f(t[m])
        return out

    return rho


def _radial_from_density(r, rho, d, truncated, n):
    """int rho(s) 2 pi s (circle average of k0 at radius s about r) ds."""
    x, w = _gl(n)
    cuts = [r]
    if truncated:
        cuts += [abs(1.0 - r), r + 1.0]
    edges = np.unique(np.clip([0.0, *cuts, d], 0.0, d))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        s = a + half * (x + 1.0)
        ws = half * w * rho(s) * 2 * np.pi * s
        vals = -np.log(np.maximum(r, s))
        if truncated:
            vals = vals + _arc_excess(np.full_like(s, r), s, n)
        total += float(ws @ vals)
    return total


def radial_covariance_fast(r, moll1, eps1, moll2, eps2, truncated=True,
                           tol=None):
    """Same quantity as :func:`radial_covariance`, through the radial profile
    of the combined mollifier (one nested level instead of two)."""
    tol = config.settings.quad_tol if tol is None else tol
    r = float(abs(r))
    d = eps1 + eps2
    fast = _fast_value(np.array([r]), d, truncated)[0]
    if not np.isnan(fast):
        return float(fast)
    rho = pair_density(moll1, float(eps1), moll2, float(eps2))
    prev = _radial_from_density(r, rho, d, truncated, 16)
    for level in range(1, MAX_LEVEL + 1):
        cur = _radial_from_density(r, rho, d, truncated, 16 * 2**level)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return cur
        prev = cur
    raise QuadratureError(
        f"mollified covariance at r={r:g} did not converge to {tol:g}",
        previous=prev, last=cur)


def _cheb_nodes(a, b, n):
    k = np.arange(n)
    x = np.cos(np.pi * (k + 0.5) / n)
    return 0.5 * (a + b) + 0.5 * (b - a) * x


@dataclass(frozen=True)
class RadialTable:
    """Vectorized r -> covariance: closed form outside the overlap zones,
    Chebyshev interpolation of direct quadrature inside them."""

    moll1: MollifierSpec
    eps1: float
    moll2: MollifierSpec
    eps2: float
    truncated: bool
    nodes: int = 48

    def __post_init__(self):
        d = self.eps1 + self.eps2
        zones = [(0.0, d)]
        if self.truncated:
            lo = max(1.0 - d, 0.0)
            if lo <= d:
                zones = [(0.0, 1.0 + d)]
            else:
                zones.append((lo, 1.0 + d))
        interps = []
        for a, b in zones:
            n = self.nodes if len(zones) > 1 or b <= 2 * d else 4 * self.nodes
            rs = _cheb_nodes(a, b, n)
            vals = [radial_covariance_fast(r, self.moll1, self.eps1, self.moll2,
                                      self.eps2, self.truncated) for r in rs]
            interps.append((a, b, BarycentricInterpolator(rs, vals, random_state=0)))
        object.__setattr__(self, "_zones", interps)

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        out = _fast_value(r, self.eps1 + self.eps2, self.truncated)
        for a, b, f in self._zones:
            m = (r >= a) & (r <= b) & np.isnan(out)
            if np.any(m):
                out[m] = f(r[m])
        return out


@lru_cache(maxsize=64)
def radial_table(moll1, eps1, moll2, eps2, truncated, tol=None):
    tol = config.settings.quad_tol if tol is None else tol
    with config.override(quad_tol=tol):
        return RadialTable(moll1, float(eps1), moll2, float(eps2),
                           bool(truncated))


def separable_smoothing(x, moll, eps, n=24):
    """(theta_eps * a)(x) for a(z) = 1/2 ln(1+|z|^2); x has shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    s, ws = moll.radial_nodes(n)
    M = 32
    phi = 2 * np.pi * np.arange(M) / M
    off = eps * s[:, None, None] * np.stack([np.cos(phi), np.sin(phi)], -1)
    pts = x[..., None, None, :] + off
    vals = sphere_log_factor(pts).mean(axis=-1)
    return vals @ ws


def mollified_covariance(kernel: LogKernelSpec, moll: MollifierSpec, eps,
                         eps_p, x, y, moll_p: MollifierSpec | None = None):
    """E[X_{eps'}(x) X_eps(y)] for the field with covariance ``kernel``.

    ``x`` is smoothed at scale ``eps_p`` (mollifier ``moll_p``, default
    ``moll``), ``y`` at ``eps``.  Points are length-2 sequences.
    """
    moll_p = moll if moll_p is None else moll_p
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = float(np.linalg.norm(x - y))
    val = radial_covariance(r, moll_p, eps_p, moll, eps, kernel.truncated)
    if kernel.correction == "sphere-green":
        val += float(separable_smoothing(x, moll_p, eps_p)
                     + separable_smoothing(y, moll, eps))
    return kernel.amplitude * val


def variance(kernel: LogKernelSpec, moll: MollifierSpec, eps, x=(0.5, 0.5)):
    return mollified_covariance(kernel, moll, eps, eps, x, x)


@dataclass
class Calibration:
    """Empirical constants c <= cov - ln(1/(r + eps)) <= C over a scan."""

    c: float
    C: float
    ladder: tuple
    radii: tuple


def calibrate_constants(kernel: LogKernelSpec, moll: MollifierSpec,
                        ladder=(2**-3, 2**-4, 2**-5, 2**-6, 2**-7),
                        radii=None) -> Calibration:
    """Scan eps' <= eps on the ladder and radii in [0, diam] for the bounds
    of mollified_covariance(eps', eps) - ln(1/(r + eps))."""
    if radii is None:
        radii = np.concatenate([np.linspace(0, 0.25, 26),
                                np.linspace(0.3, 1.4, 23)])
    radii = np.asarray(radii, dtype=float)
    lo, hi = np.inf, -np.inf
    for i, e in enumerate(ladder):
        for ep in ladder[i:]:
            tab = radial_table(moll, ep, moll, e, kernel.truncated)
            diff = kernel.amplitude * tab(radii) - np.log(1 / (radii + e))
            lo = min(lo, float(diff.min()))
            hi = max(hi, float(diff.max()))
    return Calibration(lo, hi, tuple(ladder), tuple(np.round(radii, 6)))
