"""Approximating chaos measures M_{eps,gamma} and the finite-eps diagnostics
that mirror the L2 convergence argument (mean conservation, second moment,
Cauchy property, mollifier independence) plus a moment scan."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, RegimeError, SubcriticalityError
from .field import (Box, FieldSample, GridSpec, LogKernelSpec, MollifierSpec,
                    make_sampler, radial_table)
from .field.sphere import geodesic_distance
from .rng import chunk_sizes, stream

CHUNK = 256


class EmptyRegionWarning(UserWarning):
    pass


def critical_gamma(d: int = 2) -> float:
    return float(np.sqrt(2 * d))


def check_subcritical(gamma, d=2):
    if not 0 < gamma < critical_gamma(d):
        raise SubcriticalityError(
            f"gamma={gamma:g} outside (0, sqrt(2d)) = (0, {critical_gamma(d):.6g})")


BASE_DENSITIES = {
    "uniform": lambda pts: np.ones(len(pts)),
    "gaussian-bump": lambda pts: np.exp(-8 * np.sum((pts - 0.5) ** 2, axis=1)),
}


def base_density(f):
    if callable(f):
        return f
    try:
        return BASE_DENSITIES[f]
    except KeyError:
        raise PreconditionError(f"unknown base density {f!r}") from None


@dataclass(frozen=True)
class Ball:
    center: tuple
    r: float
    metric: str = "euclidean"  # or "round" for sphere measures

    def contains(self, pts, z=None):
        if self.metric == "round":
            c = complex(self.center[0], self.center[1])
            return geodesic_distance(z, c) <= self.r
        return np.linalg.norm(np.asarray(pts) - np.asarray(self.center),
                              axis=1) <= self.r

    @property
    def volume(self):
        return np.pi * self.r**2


def region_mask(region, pts, z=None):
    if isinstance(region, Box):
        return region.contains(pts)
    if isinstance(region, Ball):
        return region.contains(pts, z)
    if callable(region):
        return np.asarray(region(pts), dtype=bool)
    raise PreconditionError(f"unsupported region {region!r}")


@dataclass(frozen=True)
class GmcMeasure:
    """Cell weights of a discrete chaos measure."""

    points: np.ndarray
    weights: np.ndarray
    gamma: float
    eps: float
    base: str
    seed: int
    d: int = 2
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = self.weights
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise PreconditionError("cell weights must be finite and nonnegative")
        self.weights.setflags(write=False)
        object.__setattr__(self, "total_mass", float(np.sum(w)))

    @property
    def z(self):
        return self.points[:, 0] + 1j * self.points[:, 1]

    def reweighted(self, factor, **meta):
        return GmcMeasure(self.points, self.weights * factor, self.gamma,
                          self.eps, self.base, self.seed, self.d,
                          {**self.meta, **meta})

    def to_csv(self) -> str:
        head = json.dumps(self.header())
        rows = "\n".join(f"{x:.17g},{y:.17g},{w:.17g}"
                         for (x, y), w in zip(self.points, self.weights))
        return f"# {head}\nx,y,weight\n{rows}\n"

    def header(self):
        return {"gamma": self.gamma, "eps": self.eps, "base": self.base,
                "seed": self.seed, "d": self.d, "total_mass": self.total_mass,
                **{k: v for k, v in self.meta.items()
                   if isinstance(v, (int, float, str))}}


def wick_weights(values, variance, gamma):
    """exp(gamma X - gamma^2/2 Var), broadcasting over leading axes."""
    return np.exp(gamma * values - 0.5 * gamma**2 * variance)


def build_gmc(field: FieldSample, gamma: float, f="uniform") -> GmcMeasure:
    """M_{eps,gamma} with cell weights e^{gamma X - gamma^2 Var/2} f dsigma."""
    check_subcritical(gamma)
    fn = base_density(f)
    dens = fn(field.points)
    w = wick_weights(field.values, field.variance, gamma) * dens \
        * field.cell_weights
    return GmcMeasure(field.points.copy(), w, float(gamma), field.eps,
                      f if isinstance(f, str) else "custom", field.seed,
                      meta={"mode": field.mode})


def mass(m: GmcMeasure, region=None) -> float:
    """Sum of the weights of cells whose centres lie in ``region``."""
    if region is None:
        return m.total_mass
    mask = region_mask(region, m.points, m.z)
    if not np.any(mask):
        warnings.warn("region contains no cell centre", EmptyRegionWarning)
        return 0.0
    return float(m.weights[mask].sum())


# ---------------------------------------------------------------- MC drivers

def grid_for(kernel: LogKernelSpec, eps_min: float, refine: int = 2):
    """Square grid over the kernel's domain with spacing eps_min / refine."""
    side = max(kernel.domain.sides)
    n = int(np.ceil(side * refine / eps_min - 1e-9))
    return GridSpec(n, tuple(kernel.domain.lo), side)


def mass_samples(kernel, gamma, region, scales, n, seed, grid=None,
                 mode="auto", f="uniform", tag="mass"):
    """Region masses of the coupled measures, shape (n, len(scales)).

    Realizations are produced in fixed-size chunks keyed by chunk index, so
    the numbers do not depend on how the loop is partitioned.
    """
    check_subcritical(gamma)
    grid = grid or grid_for(kernel, min(e for _, e in scales))
    sampler = make_sampler(kernel, grid, scales, mode)
    pts = grid.points()
    w = base_density(f)(pts) * grid.h**2
    if region is not None:
        w = w * region_mask(region, pts)
    out = np.empty((n, len(scales)))
    pos = 0
    for c, m in enumerate(chunk_sizes(n, CHUNK)):
        x = sampler.draw(stream(seed, tag, c), m)
        ew = wick_weights(x, sampler.variance[None], gamma)
        out[pos:pos + m] = ew @ w
        pos += m
    return out, sampler


@dataclass
class Estimate:
    value: float
    stderr: float

    def as_dict(self):
        return {"estimate": self.value, "stderr": self.stderr}


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return Estimate(float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)))


def variance_se(x):
    """Sample variance with a delta-method standard error."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    v = c.var(ddof=1)
    se = np.sqrt(max(np.mean(c**4) - v**2, 0.0) / x.size)
    return Estimate(float(v), float(se))


def box_pair_integral(F, sides, n=64):
    """int_{A x A} F(|x - y|) dx dy for a box A with the given sides,
    as int F(|u|) prod(a_i - |u_i|) du in polar coordinates; F vectorized.
    Radial panels split at the box geometry and at ``F``'s own breakpoints
    (attribute ``breaks`` if present)."""
    a, b = sides
    x, w = np.polynomial.legendre.leggauss(n)
    rmax = np.hypot(a, b)
    breaks = sorted({0.0, min(a, b), max(a, b), rmax,
                     *[t for t in getattr(F, "breaks", ()) if 0 < t < rmax]})
    total = 0.0
    for r0, r1 in zip(breaks[:-1], breaks[1:]):
        r = r0 + 0.5 * (r1 - r0) * (x + 1)
        wr = 0.5 * (r1 - r0) * w
        # angular integral over the first quadrant (4-fold symmetry)
        th_hi = np.full_like(r, np.pi / 2)
        th_lo = np.zeros_like(r)
        th_lo = np.where(r > a, np.arccos(np.minimum(a / r, 1.0)), th_lo)
        th_hi = np.where(r > b, np.arcsin(np.minimum(b / r, 1.0)), th_hi)
        t = th_lo[:, None] + (th_hi - th_lo)[:, None] * 0.5 * (x + 1)
        wt = (th_hi - th_lo)[:, None] * 0.5 * w
        u1, u2 = r[:, None] * np.cos(t), r[:, None] * np.sin(t)
        ang = np.sum(wt * np.clip(a - u1, 0, None) * np.clip(b - u2, 0, None),
                     axis=1)
        total += float(np.sum(wr * r * F(r) * ang))
    return 4 * total


class _Radial:
    def __init__(self, fn, breaks):
        self.fn, self.breaks = fn, breaks

    def __call__(self, r):
        return self.fn(r)


def second_moment_oracle(kernel, gamma, region: Box, eps, moll=None):
    """Var[M_eps(A)] = int int e^{gamma^2 C_eps(x-y)} - |A|^2 over A x A."""
    moll = moll or MollifierSpec()
    tab = radial_table(moll, eps, moll, eps, kernel.truncated)
    d = 2 * eps
    F = _Radial(lambda r: np.expm1(gamma**2 * kernel.amplitude * tab(r)),
                (d, 1 - d, 1.0, 1 + d))
    return box_pair_integral(F, region.sides)


def cauchy_oracle(kernel, gamma, region: Box, eps, eps_p, moll=None,
                  moll_p=None):
    """Three-term expansion of E[(M_eps(A) - M_eps'(A))^2]."""
    moll = moll or MollifierSpec()
    moll_p = moll_p or moll
    t11 = radial_table(moll, eps, moll, eps, kernel.truncated)
    t22 = radial_table(moll_p, eps_p, moll_p, eps_p, kernel.truncated)
    t12 = radial_table(moll, eps, moll_p, eps_p, kernel.truncated)
    g2 = gamma**2 * kernel.amplitude
    dm = 2 * max(eps, eps_p)
    brk = sorted({2 * eps, 2 * eps_p, eps + eps_p, 1 - dm, 1.0, 1 + dm})

    def fn(r):
        return (np.expm1(g2 * t11(r)) + np.expm1(g2 * t22(r))
                - 2 * np.expm1(g2 * t12(r)))

    return box_pair_integral(_Radial(fn, brk), region.sides)


@dataclass
class CauchyResult:
    eps: float
    eps_p: float
    estimate: float
    stderr: float
    oracle: float | None = None


def cauchy_diagnostic(kernel, gamma, region: Box, eps, eps_p, n, seed,
                      moll=None, moll_p=None, grid=None, oracle=False,
                      mode="auto") -> CauchyResult:
    """MC estimate of E[(M_eps(A) - M_eps'(A))^2] from coupled fields."""
    if gamma**2 >= 2:
        raise RegimeError(f"gamma^2={gamma**2:g} >= d: the L2 diagnostic "
                          "only applies for gamma^2 < d")
    moll = moll or MollifierSpec()
    moll_p = moll_p or moll
    orc = cauchy_oracle(kernel, gamma, region, eps, eps_p, moll, moll_p) \
        if oracle else None
    if eps == eps_p and moll == moll_p:
        return CauchyResult(eps, eps_p, 0.0, 0.0, orc)
    ms, _ = mass_samples(kernel, gamma, region, [(moll, eps), (moll_p, eps_p)],
                         n, seed, grid, mode, tag="cauchy")
    est = mean_se((ms[:, 0] - ms[:, 1]) ** 2)
    return CauchyResult(eps, eps_p, est.value, est.stderr, orc)


def mollifier_invariance(kernel, gamma, region: Box, moll1, moll2, ladder, n,
                         seed, grid_refine=2, mode="auto"):
    """E[(M^{moll1}_eps(A) - M^{moll2}_eps(A))^2] along the eps ladder."""
    out = []
    for k, e in enumerate(ladder):
        if moll1 == moll2:
            out.append(CauchyResult(e, e, 0.0, 0.0))
            continue
        if gamma**2 >= 2:
            raise RegimeError("mollifier invariance diagnostic needs gamma^2 < d")
        grid = grid_for(kernel, e, grid_refine)
        ms, _ = mass_samples(kernel, gamma, region, [(moll1, e), (moll2, e)],
                             n, seed, grid, mode, tag=f"moll-inv-{k}")
        est = mean_se((ms[:, 0] - ms[:, 1]) ** 2)
        out.append(CauchyResult(e, e, est.value, est.stderr))
    return out


def hill_tail_index(x, k=None):
    """Hill estimator of the Pareto tail index from the top-k order
    statistics (default k = sqrt(n))."""
    x = np.sort(np.asarray(x, dtype=float))[::-1]
    k = k or max(10, int(np.sqrt(x.size)))
    k = min(k, x.size - 1)
    logs = np.log(x[:k]) - np.log(x[k])
    return float(1.0 / np.mean(logs))


@dataclass
class MomentResult:
    q: float
    estimate: float
    stderr: float
    max_share: float
    tail_index: float
    verdict: str  # "stable" | "non-convergent"


def moment_verdicts(masses, qs, k=None):
    """Per-q moment estimates with divergence diagnostics.

    A q-moment is flagged non-convergent when a single sample carries more
    than half of the empirical sum, or when q reaches the Hill estimate of
    the mass tail index (for q > 0).
    """
    masses = np.asarray(masses, dtype=float)
    alpha = hill_tail_index(masses, k)
    out = []
    for q in qs:
        if q == 0:
            raise PreconditionError("q must be nonzero")
        v = masses**q
        share = float(v.max() / v.sum())
        est = mean_se(v)
        bad = share > 0.5 or (q > 0 and q >= alpha)
        out.append(MomentResult(float(q), est.value, est.stderr, share, alpha,
                                "non-convergent" if bad else "stable"))
    return out


def moment_scan(kernel, gamma, ball: Ball, qs, eps, n, seed, mode="auto",
                refine=2):
    """Moments E[M_eps(O)^q] over an open ball with divergence flags."""
    moll = MollifierSpec()
    lo = np.asarray(ball.center) - ball.r
    side = 2 * ball.r
    ng = int(np.ceil(side * refine / eps - 1e-9))
    grid = GridSpec(ng, tuple(lo), side)
    ms, _ = mass_samples(kernel, gamma, ball, [(moll, eps)], n, seed, grid,
                         mode, tag="moments")
    return moment_verdicts(ms[:, 0], qs)
