"""Multifractal statistics of chaos measures: structure function fits,
thick-point histograms, box-counting level-set dimensions and the dyadic
shell decomposition of singular integrals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, MomentExistenceError, PreconditionError
from .field import GridSpec, LogKernelSpec, MollifierSpec, make_sampler
from .gmc import (CHUNK, GmcMeasure, check_subcritical, grid_for, mean_se,
                  wick_weights)
from .rng import chunk_sizes, stream

LN2 = np.log(2.0)


def structure_function(d: int, gamma: float, q: float) -> float:
    """zeta(q) = (d + gamma^2/2) q - gamma^2 q^2 / 2."""
    return (d + gamma**2 / 2) * q - gamma**2 * q**2 / 2


def moment_threshold(d: int, gamma: float) -> float:
    return 2 * d / gamma**2


@dataclass
class ScalingFit:
    q: float
    radii: np.ndarray
    log_moments: np.ndarray
    log_moment_se: np.ndarray
    slope: float
    slope_ci: tuple
    target: float = float("nan")
    n: int = 0
    boot_sd: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.radii)
        if np.any(np.diff(r) >= 0):
            raise PreconditionError("radii must be strictly decreasing")
        lo, hi = self.slope_ci
        if not lo <= self.slope <= hi:
            raise FitError("slope outside its own confidence interval")

    def ci_meets_band(self, rel=0.1) -> bool:
        """Whether the CI intersects [(1-rel) target, (1+rel) target]."""
        a, b = sorted(((1 - rel) * self.target, (1 + rel) * self.target))
        return self.slope_ci[0] <= b and self.slope_ci[1] >= a

    def as_dict(self):
        return {"q": self.q, "radii": list(map(float, self.radii)),
                "log_moments": list(map(float, self.log_moments)),
                "log_moment_se": list(map(float, self.log_moment_se)),
                "slope": self.slope, "slope_ci": list(self.slope_ci),
                "target": self.target, "n": self.n}


def _ls_slope(x, y):
    x = np.asarray(x)
    xc = x - x.mean()
    return (xc @ (np.asarray(y).T - np.asarray(y).mean(-1).T)) / (xc @ xc)


def ball_masses(kernel, gamma, x, radii, eps, n, seed, refine=2, mode="auto",
                extra_scales=(), tag="balls"):
    """Masses M_eps(B(x, r)) for each radius over n realizations.

    The grid is a square of side 2 max(r) centred at x with spacing
    eps / refine.  ``extra_scales`` (eps values) adds coupled coarse fields,
    returned evaluated at the grid node nearest x.
    """
    check_subcritical(gamma)
    moll = MollifierSpec()
    radii = np.asarray(radii, dtype=float)
    side = 2 * radii.max()
    ng = int(np.ceil(side * refine / eps - 1e-9))
    if ng % 2:
        ng += 1
    lo = (x[0] - side / 2, x[1] - side / 2)
    grid = GridSpec(ng, lo, side)
    scales = [(moll, eps)] + [(moll, e) for e in extra_scales]
    sampler = make_sampler(kernel, grid, scales, mode)
    pts = grid.points()
    dist = np.linalg.norm(pts - np.asarray(x), axis=1)
    masks = (dist[None, :] <= radii[:, None]).astype(float) * grid.h**2
    centre = int(np.argmin(dist))
    out = np.empty((n, radii.size))
    coarse = np.empty((n, len(extra_scales)))
    pos = 0
    for c, m in enumerate(chunk_sizes(n, CHUNK)):
        v = sampler.draw(stream(seed, tag, c), m)
        w = wick_weights(v[:, 0], sampler.variance[0], gamma)
        out[pos:pos + m] = w @ masks.T
        coarse[pos:pos + m] = v[:, 1:, centre]
        pos += m
    return out, coarse, sampler


def fit_moments(masses, radii, q, n_boot=400, seed=0, target=float("nan")):
    """Log-log least squares of E[M^q] against r with a bootstrap CI."""
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3:
        raise FitError("need at least three radii for a scaling fit")
    v = masses**q
    mom = v.mean(axis=0)
    se = v.std(axis=0, ddof=1) / np.sqrt(len(v)) / mom
    lr = np.log(radii)
    slope = float(_ls_slope(lr, np.log(mom)))
    rng = stream(seed, "bootstrap")
    idx = rng.integers(0, len(v), size=(n_boot, len(v)))
    boot = np.array([_ls_slope(lr, np.log(v[i].mean(axis=0))) for i in idx])
    sd = float(boot.std(ddof=1))
    ci = (slope - 1.96 * sd, slope + 1.96 * sd)
    return ScalingFit(float(q), radii, np.log(mom), se, slope, ci, target,
                      len(v), sd)


def estimate_zeta(kernel: LogKernelSpec, gamma: float, q: float, x=(0.5, 0.5),
                  radii=(1 / 4, 1 / 8, 1 / 16, 1 / 32), eps=2**-7, n=2000,
                  seed=0, mode="auto") -> ScalingFit:
    """Fitted exponent of E[M(B(x, r))^q] ~ r^zeta(q)."""
    d = kernel.dimension
    if q >= moment_threshold(d, gamma):
        raise MomentExistenceError(
            f"q={q:g} at or above the moment threshold 2d/gamma^2="
            f"{moment_threshold(d, gamma):g}")
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    if radii.min() < 4 * eps * (1 - 1e-12):
        raise PreconditionError("radii must be at least 4 eps")
    masses, _, _ = ball_masses(kernel, gamma, x, radii, eps, n, seed,
                               mode=mode, tag="zeta")
    return fit_moments(masses, radii, q, seed=seed,
                       target=structure_function(d, gamma, q))


@dataclass
class BallRatio:
    radii: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    band: tuple = (0.2, 5.0)

    @property
    def inside(self) -> bool:
        lo, hi = self.band
        return bool(np.all((self.mean >= lo) & (self.mean <= hi)))


def ball_ratio(kernel, gamma, x=(0.5, 0.5), radii=(1 / 4, 1 / 8, 1 / 16),
               eps=2**-7, n=400, seed=0, mode="auto") -> BallRatio:
    """M(B(x, r)) / (r^d e^{gamma X_r(x) - gamma^2 E[X_r(x)^2]/2}) per radius,
    with X_r the field mollified at scale r, coupled to the fine field."""
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    masses, coarse, sampler = ball_masses(kernel, gamma, x, radii, eps, n,
                                          seed, mode=mode, extra_scales=radii,
                                          tag="ball-ratio")
    var = sampler.variance[1:, 0]
    d = kernel.dimension
    ratio = masses / (radii**d * wick_weights(coarse, var, gamma))
    return BallRatio(radii, ratio.mean(0),
                     ratio.std(0, ddof=1) / np.sqrt(n))


# ---------------------------------------------------------------- thick points

@dataclass
class ThickHistogram:
    gamma: float
    levels: int
    ratios: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    stderr: float
    mode: float
    tail_mass: dict = field(default_factory=dict)
    tail_slope: float = float("nan")


def _thick_sampler(kernel, levels, refine):
    moll = MollifierSpec()
    ladder = [2.0**-k for k in levels]
    grid = grid_for(kernel, min(ladder), refine)
    return make_sampler(kernel, grid, [(moll, e) for e in ladder], "auto")


def thick_point_ratios(kernel, gamma, levels, n_fields, per_field, seed,
                       refine=2):
    """Ratios X_{2^-k}(x) / (k ln 2) at points x drawn from M at the finest
    level, for every k in ``levels``; shape (n_fields * per_field, len)."""
    check_subcritical(gamma)
    levels = list(levels)
    sampler = _thick_sampler(kernel, levels, refine)
    fine = int(np.argmax(levels))
    out = []
    for c, m in enumerate(chunk_sizes(n_fields, 16)):
        rng = stream(seed, "thick", c)
        v = sampler.draw(rng, m)
        w = wick_weights(v[:, fine], sampler.variance[fine], gamma)
        for j in range(m):
            p = w[j] / w[j].sum()
            idx = rng.choice(p.size, size=per_field, p=p)
            out.append(v[j][:, idx].T / (np.asarray(levels) * LN2))
    return np.concatenate(out, axis=0)


def thick_point_histogram(kernel: LogKernelSpec, gamma: float, n_levels=7,
                          n_samples=4000, seed=0, per_field=20, eta=0.5,
                          tail_levels=(3, 4, 5, 6, 7), bins=60):
    """Histogram of X_{2^-n}(x)/(n ln 2) for x ~ M_gamma, with tail masses
    P(|ratio - gamma| > eta) along ``tail_levels`` and their log-slope."""
    levels = sorted(set(tail_levels) | {n_levels})
    n_fields = int(np.ceil(n_samples / per_field))
    r = thick_point_ratios(kernel, gamma, levels, n_fields, per_field, seed)
    r = r[:n_samples]
    main = r[:, levels.index(n_levels)]
    counts, edges = np.histogram(main, bins=bins)
    centres = 0.5 * (edges[1:] + edges[:-1])
    est = mean_se(main)
    tails = {}
    for k in tail_levels:
        col = r[:, levels.index(k)]
        tails[k] = float(np.mean(np.abs(col - gamma) > eta))
    ks = np.array(list(tails))
    tm = np.array(list(tails.values()))
    slope = float(np.polyfit(ks, np.log(tm), 1)[0]) if np.all(tm > 0) \
        else float("nan")
    return ThickHistogram(gamma, n_levels, main, edges, counts, est.value,
                          est.stderr, float(centres[np.argmax(counts)]),
                          tails, slope)


def reference_tail_rate(eta):
    """-eta^2 (ln 2)^2 / 2, the per-level exponent in the thick-point bound."""
    return -eta**2 * LN2**2 / 2


# ------------------------------------------------------------ level-set dims

@dataclass
class DimensionFit:
    level: float
    delta: float
    levels: list
    counts: list
    dim: float


def box_counting_dimension(fields, levels, target, delta):
    """Fit count(k) ~ 2^{k dim} for boxes whose ratio lies in the window.

    ``fields``: dict level -> (n_real, 2^k, 2^k) array of X_{2^-k} sampled
    at the dyadic box centres.
    """
    if len(levels) < 3:
        raise FitError("box counting needs at least three resolutions")
    counts = []
    for k in levels:
        ratio = fields[k] / (k * LN2)
        hit = np.abs(ratio - target) <= delta
        counts.append(float(hit.sum(axis=(1, 2)).mean()))
    c = np.array(counts)
    if np.any(c <= 0):
        good = c > 0
        if good.sum() < 2:
            return DimensionFit(target, delta, list(levels), counts,
                                float("-inf"))
        dim = float(np.polyfit(np.array(levels)[good], np.log2(c[good]), 1)[0])
        return DimensionFit(target, delta, list(levels), counts, min(dim, 0.0))
    dim = float(np.polyfit(levels, np.log2(c), 1)[0])
    return DimensionFit(target, delta, list(levels), counts, dim)


def dyadic_fields(kernel, levels, n_real, seed):
    """X_{2^-k} at the centres of the 4^k dyadic boxes of the domain, for
    each k, from one coupled draw per realization."""
    sampler = _thick_sampler(kernel, levels, refine=2)
    nfine = sampler.grid.n
    out = {k: [] for k in levels}
    for c, m in enumerate(chunk_sizes(n_real, 8)):
        v = sampler.draw(stream(seed, "dyadic", c), m)
        v = v.reshape(m, len(levels), nfine, nfine)
        for a, k in enumerate(levels):
            step = nfine >> k
            idx = np.arange(2**k) * step + step // 2
            out[k].append(v[:, a][:, idx][:, :, idx])
    return {k: np.concatenate(val) for k, val in out.items()}


def thick_level_dimension(kernel, gamma, q, levels=(3, 4, 5, 6, 7),
                          delta=0.25, n_real=8, seed=0, fields=None):
    """Box-counting exponent of {x : X_{2^-k}(x)/(k ln 2) ~ gamma q}."""
    check_subcritical(gamma)
    if not 0 <= q:
        raise PreconditionError("q must be nonnegative")
    fields = fields or dyadic_fields(kernel, levels, n_real, seed)
    return box_counting_dimension(fields, levels, gamma * q, delta)


# ------------------------------------------------------- singular integrals

@dataclass
class SingularIntegral:
    alpha: float
    shells: np.ndarray
    shell_values: np.ndarray
    core: float
    total: float
    ratio: float
    verdict: str
    resolved: int
    truncated: bool


def singular_integral(m: GmcMeasure, x, alpha: float, n_shells=None,
                      dead_band=0.1) -> SingularIntegral:
    """int_{B(x,1)} |y - x|^{-alpha gamma} M(dy) split over dyadic annuli
    2^-n <= |y - x| < 2^{-n+1}; the verdict comes from the geometric
    ratio fitted to the resolved annulus contributions."""
    pts = m.points
    d = np.linalg.norm(pts - np.asarray(x), axis=1)
    eps = m.eps if m.eps > 0 else 0.0
    res = int(np.floor(np.log2(1.0 / max(2 * eps, 1e-300)))) if eps else 30
    n_max = n_shells or res
    truncated = n_max > res
    if truncated:
        warnings.warn(f"shells beyond n={res} are below the measure's scale; "
                      f"resolved range is 1..{res}")
        n_max = res
    inside = d <= 1.0
    with np.errstate(divide="ignore"):
        f = np.where(d > 0, d, np.inf) ** (-alpha * m.gamma)
    if alpha == 0:
        f = np.ones_like(d)
    contrib = np.where(inside, f * m.weights, 0.0)
    shells = np.arange(1, n_max + 1)
    vals = np.array([contrib[(d >= 2.0**-k) & (d < 2.0 ** (1 - k))].sum()
                     for k in shells])
    vals[0] += contrib[d == 1.0].sum()
    core = float(contrib[d < 2.0**-n_max].sum())
    total = float(vals.sum() + core)
    ok = vals > 0
    if ok.sum() >= 2:
        ratio = float(np.exp(np.polyfit(shells[ok], np.log(vals[ok]), 1)[0]))
    else:
        ratio = float("nan")
    if ratio < 1 - dead_band:
        verdict = "convergent"
    elif ratio > 1 + dead_band:
        verdict = "divergent"
    else:
        verdict = "inconclusive"
    return SingularIntegral(alpha, shells, vals, core, total, ratio, verdict,
                            n_max, truncated)


def seiberg_threshold(d, gamma):
    """Largest alpha with int |y-x|^{-alpha gamma} M(dy) finite: d/gamma + gamma/2."""
    return d / gamma + gamma / 2


def seiberg_runs(gamma, alphas, runs, seed, eps=2**-8, refine=2, mode="auto"):
    """Shell verdicts at x = 0 for independent measures on [-1, 1]^2."""
    from .field import Box
    check_subcritical(gamma)
    kernel = LogKernelSpec(domain=Box((-1.0, -1.0), (1.0, 1.0)))
    grid = grid_for(kernel, eps, refine)
    sampler = make_sampler(kernel, grid, [(MollifierSpec(), eps)], mode)
    pts = grid.points()
    rows = []
    for j in range(runs):
        v = sampler.draw(stream(seed, "seiberg", j), 1)[0, 0]
        w = wick_weights(v, sampler.variance[0], gamma) * grid.h**2
        m = GmcMeasure(pts, w, gamma, eps, "uniform", seed)
        for a in alphas:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                r = singular_integral(m, (0.0, 0.0), a)
            rows.append({"run": j, "alpha": a, "ratio": r.ratio,
                         "verdict": r.verdict, "total": r.total,
                         "resolved_shells": r.resolved})
    return rows
