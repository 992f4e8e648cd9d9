"""Liouville quantum field theory on the Riemann sphere.

Everything is built on the zero-mean GFF of ``field.sphere``: the chaos
measure M_gamma(dz) = e^{gamma X_g} g dz (Wick normalized), its reweighting
by vertex insertions, the correlation functional (up to its global constant),
unit-volume Liouville measures with importance weights Z(S)^{-s}, and
Monte Carlo checks of Mobius covariance and rerooting invariance.

Insertions are finite points.  Configurations involving infinity are
handled by conjugating with a fixed Mobius chart (see ``REROOT_CHART``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gamma as gamma_fn

from . import config
from .errors import ChartError, PreconditionError, SeibergError
from .field.sampling import FieldSample
from .field.sphere import (GREEN_MEAN, SphereGffSampler, SphereGrid,
                           chord_half, geodesic_distance, green_sphere_centered,
                           round_density)
from .gmc import CHUNK, GmcMeasure, wick_weights
from .rng import chunk_sizes, stream


class PrecisionWarning(UserWarning):
    """Monte Carlo effective sample size below the advisory floor."""


# ------------------------------------------------------------- parameters

def _check_gamma(gamma):
    if not 0 < gamma < 2:
        raise PreconditionError(f"gamma={gamma:g} outside (0, 2)")


def background_charge(gamma):
    return gamma / 2 + 2 / gamma


def central_charge(gamma):
    # 1 + 6 Q^2 expanded; this ordering is exact at the usual rational points
    g2 = gamma * gamma
    return 13 + 1.5 * g2 + 24 / g2


def conformal_weight(alpha, gamma):
    """Delta_alpha = alpha/2 (Q - alpha/2), written to be exact at alpha = gamma."""
    return alpha / gamma + alpha * (gamma - alpha) / 4


def lqft_constants(gamma):
    """(Q, c_L, Delta) with Delta: alpha -> alpha/2 (Q - alpha/2)."""
    _check_gamma(gamma)
    return (background_charge(gamma), central_charge(gamma),
            lambda a: conformal_weight(a, gamma))


@dataclass(frozen=True)
class LqftParams:
    gamma: float
    mu: float = 1.0

    def __post_init__(self):
        _check_gamma(self.gamma)
        if not self.mu > 0:
            raise PreconditionError("cosmological constant mu must be positive")

    @property
    def Q(self):
        return background_charge(self.gamma)

    @property
    def c_L(self):
        return central_charge(self.gamma)


# ------------------------------------------------------------- insertions

@dataclass(frozen=True)
class VertexInsertion:
    z: complex
    alpha: float

    def __post_init__(self):
        z = complex(self.z)
        if not (math.isfinite(z.real) and math.isfinite(z.imag)):
            raise ChartError("insertions must be finite points; conjugate "
                             "with a Mobius chart to place one at infinity")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class InsertionSet:
    items: tuple

    def __post_init__(self):
        items = tuple(i if isinstance(i, VertexInsertion) else
                      VertexInsertion(*i) for i in self.items)
        object.__setattr__(self, "items", items)
        zs = [i.z for i in items]
        if len(set(zs)) != len(zs):
            raise PreconditionError("insertion points must be pairwise distinct")

    @classmethod
    def of(cls, points, alphas):
        if np.ndim(alphas) == 0:
            alphas = [alphas] * len(points)
        return cls(tuple(VertexInsertion(z, a) for z, a in zip(points, alphas)))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def z(self):
        return np.array([i.z for i in self.items], dtype=complex)

    @property
    def alpha(self):
        return np.array([i.alpha for i in self.items], dtype=float)

    def s(self, gamma):
        """Seiberg exponent (sum alpha - 2Q) / gamma."""
        return (self.alpha.sum() - 2 * background_charge(gamma)) / gamma

    def mapped(self, psi: "Mobius"):
        return InsertionSet(tuple(VertexInsertion(psi(i.z), i.alpha)
                                  for i in self.items))

    def as_list(self):
        return [{"z": [i.z.real, i.z.imag], "alpha": i.alpha} for i in self.items]


@dataclass
class SeibergVerdict:
    verdict: str            # "strict-pass" | "soft-pass-only" | "fail"
    strict: bool
    soft: bool
    reasons: list = field(default_factory=list)

    def __str__(self):
        if self.verdict == "fail":
            return "fail(" + "; ".join(self.reasons) + ")"
        return self.verdict


def seiberg_check(ins: InsertionSet, gamma: float) -> SeibergVerdict:
    """Evaluate the strict bounds (alpha_i < Q, sum > 2Q) and the soft bounds
    (alpha_i < Q, Q - sum/2 < min(2/gamma, min_i(Q - alpha_i)))."""
    _check_gamma(gamma)
    Q = background_charge(gamma)
    a = ins.alpha
    reasons = []
    bad = np.flatnonzero(a >= Q)
    for i in bad:
        reasons.append(f"alpha_{i} = {a[i]:.6g} >= Q = {Q:.6g}")
    upper = not bad.size
    total = a.sum() if a.size else 0.0
    strict_sum = total > 2 * Q
    if not strict_sum:
        msg = f"sum alpha = {total:.6g} <= 2Q = {2 * Q:.6g}"
        if len(a) < 3:
            msg += f" (n = {len(a)} < 3)"
        reasons.append(msg)
    bound = min(2 / gamma, (Q - a).min()) if a.size else 2 / gamma
    soft_sum = Q - total / 2 < bound
    if not soft_sum:
        arg = (f"index {int(np.argmin(Q - a))}" if a.size and
               (Q - a).min() < 2 / gamma else "2/gamma")
        reasons.append(f"Q - sum/2 = {Q - total / 2:.6g} >= {bound:.6g} ({arg})")
    strict = upper and strict_sum
    soft = upper and soft_sum
    if strict:
        return SeibergVerdict("strict-pass", True, soft, [])
    if soft:
        return SeibergVerdict("soft-pass-only", False, True, reasons)
    return SeibergVerdict("fail", False, False, reasons)


def _require(ins, gamma, level):
    v = seiberg_check(ins, gamma)
    if level == "strict" and not v.strict:
        raise SeibergError("strict Seiberg bounds violated: " + "; ".join(v.reasons))
    if level == "soft" and not v.soft:
        raise SeibergError("soft Seiberg bounds violated: " + "; ".join(v.reasons))
    return v


# ---------------------------------------------------------- Mobius maps

@dataclass(frozen=True)
class Mobius:
    """z -> (a z + b) / (c z + d), normalized to ad - bc = 1."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        det = complex(self.a * self.d - self.b * self.c)
        if det == 0:
            raise PreconditionError("degenerate Mobius map (ad - bc = 0)")
        r = np.sqrt(det)
        for k in "abcd":
            object.__setattr__(self, k, complex(getattr(self, k)) / r)

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        den = self.c * z + self.d
        if np.any(den == 0):
            raise ChartError("Mobius map sends a point to infinity")
        out = (self.a * z + self.b) / den
        return complex(out) if out.ndim == 0 else out

    def derivative(self, z):
        return 1.0 / (self.c * np.asarray(z, dtype=complex) + self.d) ** 2

    def inverse(self):
        return Mobius(self.d, -self.b, -self.c, self.a)

    @classmethod
    def identity(cls):
        return cls(1, 0, 0, 1)

    @classmethod
    def rotation(cls, theta):
        h = np.exp(0.5j * theta)
        return cls(h, 0, 0, 1 / h)

    @classmethod
    def scaling(cls, lam):
        """z -> z / lam."""
        r = np.sqrt(complex(lam))
        return cls(1 / r, 0, 0, r)


# fixed chart sending (0, 1, inf) to an equilateral triple on a great
# circle: 0 -> 0, 1 -> sqrt 3, inf -> -sqrt 3
REROOT_CHART = Mobius(np.sqrt(3), 0, -1, 2)


# ---------------------------------------------------------- measures

def gmc_sphere(field: FieldSample, gamma: float) -> GmcMeasure:
    """e^{gamma X - gamma^2 Var / 2} times the round volume of each cell."""
    _check_gamma(gamma)
    grid = field.meta.get("grid") if field.meta else None
    if grid is None or field.mode != "sphere":
        raise PreconditionError("gmc_sphere needs a field from sample_sphere_gff")
    w = wick_weights(field.values, field.variance, gamma) * field.cell_weights
    return GmcMeasure(field.points.copy(), w, float(gamma), 0.0, "round",
                      field.seed, meta={"mode": "sphere", "grid": grid})


def devvar_variance(grid: SphereGrid, C=0.0):
    """ln(1/eps_z) - ln g(z) / 2 + C with eps_z the z-coordinate cell side:
    the small-scale form of the regularized GFF variance on the sphere."""
    eps = grid.local_spacing(np.arange(grid.size))
    return -np.log(eps) - 0.5 * np.log(round_density(grid.z)) + C


def shifted_field_weights(field: FieldSample, gamma: float):
    """eps^{gamma^2/2} e^{gamma (X + Q/2 ln g)} dz per cell, with eps the
    z-coordinate cell side and dz the flat area of the cell."""
    grid = field.meta["grid"]
    g = round_density(grid.z)
    eps = grid.local_spacing(np.arange(grid.size))
    dz = field.cell_weights / g
    Q = background_charge(gamma)
    return eps ** (gamma**2 / 2) * np.exp(gamma * (field.values
                                                   + Q / 2 * np.log(g))) * dz


def _regularized_green(grid: SphereGrid, z0):
    """G_g(z0, node) with the chordal distance clamped below at the chord of
    half a cell, so nodes at (or next to) z0 get the half-cell value."""
    z = grid.z
    half = 0.5 * grid.local_spacing(np.arange(grid.size))
    d = chord_half(z0, z)
    dmin = half / (1 + np.abs(z) ** 2)
    return -np.log(np.maximum(d, dmin)) - GREEN_MEAN


def insertion_potential(grid: SphereGrid, ins: InsertionSet, gamma: float):
    """gamma sum_i alpha_i G_g(z_i, z) at the nodes (regularized)."""
    h = np.zeros(grid.size)
    for it in ins:
        h += it.alpha * _regularized_green(grid, it.z)
    return gamma * h


def z_measure(m: GmcMeasure, ins: InsertionSet) -> GmcMeasure:
    """Z(dz) = e^{gamma sum alpha_i G_g(z_i, z)} M_gamma(dz)."""
    if len(ins) == 0:
        return m
    grid = m.meta.get("grid")
    if grid is None:
        raise PreconditionError("z_measure needs a measure built on a SphereGrid")
    return m.reweighted(np.exp(insertion_potential(grid, ins, m.gamma)),
                        insertions=len(ins))


def green_prefactor(ins: InsertionSet, gamma: float):
    """ln of e^{1/2 sum_{i != j} a_i a_j G_g(z_i, z_j)} prod g(z_i)^{a_i Q/2 - a_i^2/4}."""
    z, a = ins.z, ins.alpha
    Q = background_charge(gamma)
    out = 0.0
    for i in range(len(z)):
        for j in range(len(z)):
            if i != j:
                out += 0.5 * a[i] * a[j] * green_sphere_centered(z[i], z[j])
    out += np.sum((a * Q / 2 - a**2 / 4) * np.log(round_density(z)))
    return float(out)


def gamma_mu(s, mu):
    """int_0^inf u^{s-1} e^{-mu u} du = mu^{-s} Gamma(s)."""
    if not s > 0:
        raise SeibergError(f"Gamma(s, mu) diverges for s = {s:g} <= 0")
    return float(mu ** (-s) * gamma_fn(s))


@lru_cache(maxsize=4)
def _sampler(grid: SphereGrid):
    return SphereGffSampler(grid)


def default_grid():
    return SphereGrid(h=config.settings.grid_resolution)


def z_totals(ins: InsertionSet, gamma, n, seed, grid=None, tag="lqft",
             keep=None):
    """Z(S) for n GFF realizations; ``keep`` (callable on the (m, N) batch
    of Z cell weights) collects extra per-realization statistics."""
    grid = grid or default_grid()
    samp = _sampler(grid)
    base = np.exp(insertion_potential(grid, ins, gamma)) * grid.weights
    out = np.empty(n)
    extra = []
    pos = 0
    for c, m in enumerate(chunk_sizes(n, CHUNK)):
        x = samp.draw(stream(seed, tag, c), m)
        w = wick_weights(x, samp.variance, gamma) * base
        out[pos:pos + m] = w.sum(axis=1)
        if keep is not None:
            extra.append(keep(w))
        pos += m
    return out, (np.concatenate(extra) if keep is not None else None)


def effective_sample_size(w):
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / (w**2).sum())


@dataclass
class CorrelationResult:
    estimate: float
    stderr: float
    ess: float
    s: float
    log_prefactor: float
    neg_moment: float
    neg_moment_se: float
    insertions: list
    gamma: float
    mu: float
    seed: int

    def as_dict(self):
        return {"insertions": self.insertions, "gamma": self.gamma,
                "mu": self.mu, "estimate": self.estimate,
                "stderr": self.stderr, "ess": self.ess, "seed": self.seed,
                "s": self.s}


def correlation_mc(ins: InsertionSet, params: LqftParams, n=None, seed=0,
                   grid=None, totals=None) -> CorrelationResult:
    """<prod V_{alpha_i}(z_i)> up to its global constant:
    Green prefactor x Gamma(s, mu) x MC estimate of E[Z(S)^{-s}]."""
    _require(ins, params.gamma, "strict")
    n = n or config.settings.mc_samples
    s = ins.s(params.gamma)
    if totals is None:
        totals, _ = z_totals(ins, params.gamma, n, seed, grid)
    v = totals ** (-s)
    ess = effective_sample_size(v)
    if ess < 100:
        warnings.warn(f"negative-moment effective sample size {ess:.1f} < 100",
                      PrecisionWarning)
    lp = green_prefactor(ins, params.gamma)
    scale = np.exp(lp) * gamma_mu(s, params.mu)
    mom = float(v.mean())
    se = float(v.std(ddof=1) / np.sqrt(v.size))
    return CorrelationResult(scale * mom, scale * se, ess, s, lp, mom, se,
                             ins.as_list(), params.gamma, params.mu, seed)


@dataclass
class KpzResult:
    ratio: float
    stderr: float
    target: float = 1.0
    lhs: CorrelationResult | None = None
    rhs: CorrelationResult | None = None

    @property
    def z(self):
        return (self.ratio - self.target) / self.stderr if self.stderr else 0.0


def kpz_covariance_check(ins: InsertionSet, psi: Mobius, params: LqftParams,
                         n=None, seed=0, grid=None) -> KpzResult:
    """<prod V(psi(z_i))> / (prod |psi'(z_i)|^{-2 Delta} <prod V(z_i)>).

    Both sides reuse the same GFF realizations; the stderr is that of the
    ratio of the two paired means (delta method).
    """
    n = n or config.settings.mc_samples
    mapped = ins.mapped(psi)
    _require(ins, params.gamma, "strict")
    t1, _ = z_totals(mapped, params.gamma, n, seed, grid)
    t0, _ = z_totals(ins, params.gamma, n, seed, grid)
    lhs = correlation_mc(mapped, params, n, seed, grid, totals=t1)
    rhs = correlation_mc(ins, params, n, seed, grid, totals=t0)
    dl = np.sum(-2 * conformal_weight(ins.alpha, params.gamma)
                * np.log(np.abs(psi.derivative(ins.z))))
    s = ins.s(params.gamma)
    a, b = t1 ** (-s), t0 ** (-s)
    ma, mb = a.mean(), b.mean()
    ratio = lhs.estimate / (np.exp(dl) * rhs.estimate)
    lin = a / ma - b / mb
    se = abs(ratio) * float(lin.std(ddof=1) / np.sqrt(n))
    return KpzResult(float(ratio), se, 1.0, lhs, rhs)


# ---------------------------------------------------- unit-volume measures

@dataclass
class WeightedMeasureEnsemble:
    """Normalized measures Z(dz)/Z(S) with importance weights Z(S)^{-s}.

    ``measures`` is (n, N) when kept; ``log_total`` holds ln Z(S).
    """

    grid: SphereGrid
    insertions: InsertionSet
    gamma: float
    s: float
    log_total: np.ndarray
    weights: np.ndarray
    measures: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise PreconditionError("importance weights must be positive and finite")
        if self.measures is not None:
            tot = self.measures.sum(axis=1)
            if np.max(np.abs(tot - 1)) > 1e-12:
                raise PreconditionError("ensemble members must have unit mass")

    @property
    def ess(self):
        return effective_sample_size(self.weights)

    def __len__(self):
        return self.weights.size

    def expect(self, values):
        """Self-normalized weighted mean of per-member values, with a
        delta-method stderr."""
        return weighted_mean(values, self.weights)


def weighted_mean(values, w):
    values = np.asarray(values, dtype=float)
    w = np.asarray(w, dtype=float)
    wn = w / w.sum()
    m = float(wn @ values)
    se = float(np.sqrt(np.sum(wn**2 * (values - m) ** 2)))
    return m, se


def _importance(log_total, s):
    # Z^{-s} scaled by a common factor to keep it in range; the factor
    # cancels in every self-normalized average
    lw = -s * log_total
    return np.exp(lw - lw.max())


def unit_volume_sample(ins: InsertionSet, gamma: float, n=None, seed=0,
                       grid=None, keep_measures=True, params=None):
    """n realizations of Z(dz)/Z(S) with weights Z(S)^{-s}.

    ``params`` is accepted for interface symmetry; mu does not enter.
    """
    del params
    _require(ins, gamma, "soft")
    n = n or config.settings.mc_samples
    grid = grid or default_grid()
    s = ins.s(gamma)
    keep = (lambda w: w / w.sum(axis=1, keepdims=True)) if keep_measures else None
    tot, meas = z_totals(ins, gamma, n, seed, grid, tag="unit-volume", keep=keep)
    w = _importance(np.log(tot), s)
    ens = WeightedMeasureEnsemble(grid, ins, gamma, s, np.log(tot), w, meas, seed)
    if ens.ess < 50:
        warnings.warn(f"effective sample size {ens.ess:.1f} < 50", PrecisionWarning)
    return ens


# ------------------------------------------------------------- rerooting

@dataclass(frozen=True)
class Cap:
    """Round-metric ball on the sphere."""

    center: complex
    radius: float

    def contains(self, z):
        z = np.asarray(z, dtype=complex)
        return geodesic_distance(z, complex(self.center)) <= self.radius


RerootFunctionals = ("total-mass", "cap-mass", "cap-mass-squared")


def _apply_functional(name, mass_in_cap, total):
    if name == "total-mass":
        return total
    if name == "cap-mass":
        return mass_in_cap
    if name == "cap-mass-squared":
        return mass_in_cap**2
    raise PreconditionError(f"unknown rerooting functional {name!r}")


@dataclass
class RerootResult:
    functional: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z: float
    reject: bool
    ess: float
    resampled: int

    def as_dict(self):
        return dict(self.__dict__)


def rerooting_check(gamma, functionals=("cap-mass", "cap-mass-squared"), n=None,
                    seed=0, grid=None, cap: Cap | None = None, chart=REROOT_CHART,
                    draws_per_field=4, max_retries=20, threshold=3.0):
    """Both sides of the rerooting identity for the three-gamma measure at
    (0, 1, inf), realized on the sphere through ``chart``.

    The measure nu with insertions at (0, 1, inf) is the image under
    chart^{-1} of the measure nu' with insertions at chart(0), chart(1),
    chart(inf).  Left side: draw x' ~ nu', x = chart^{-1}(x'), evaluate F on
    the image of nu under z -> z/x.  Right side: F(nu).
    """
    _check_gamma(gamma)
    n = n or config.settings.mc_samples
    grid = grid or default_grid()
    cap = cap or Cap(1.0, np.pi / 3)
    inv = chart.inverse()
    a, b, c, d = chart.a, chart.b, chart.c, chart.d
    ins = InsertionSet.of([chart(0), chart(1), a / c], gamma)
    _require(ins, gamma, "soft")
    s = ins.s(gamma)
    # pulled-back node coordinates; the node mapped to infinity (if any)
    # gets a large finite stand-in
    zn = grid.z
    den = -c * zn + a
    pre = np.where(den == 0, 1e300, (d * zn - b) / np.where(den == 0, 1, den))
    in_cap = cap.contains(pre)
    forbidden = np.zeros(grid.size, bool)
    for it in ins:
        forbidden[grid.nearest(it.z)] = True
    samp = _sampler(grid)
    base = np.exp(insertion_potential(grid, ins, gamma)) * grid.weights
    logs, rhs_vals, lhs_vals = [], [], []
    resampled = 0
    k = draws_per_field
    for ci, m in enumerate(chunk_sizes(n, CHUNK)):
        rng = stream(seed, "reroot", ci)
        x = samp.draw(rng, m)
        w = wick_weights(x, samp.variance, gamma) * base
        tot = w.sum(axis=1)
        nu = w / tot[:, None]
        logs.append(np.log(tot))
        rhs_cap = nu @ in_cap
        rhs_vals.append(rhs_cap)
        acc = np.zeros((m, len(functionals)))
        for j in range(m):
            p = nu[j]
            picks = []
            while len(picks) < k:
                idx = rng.choice(p.size, size=k - len(picks), p=p)
                good = idx[~forbidden[idx]]
                resampled += int((~forbidden[idx]).size - good.size)
                picks.extend(good.tolist())
                if resampled > max_retries * n * k:
                    raise PreconditionError("rerooting point kept landing on "
                                            "insertion cells")
            xs = pre[np.array(picks)]
            # image of nu under z -> z / x: cap mass is nu{z : z/x in cap}
            hit = cap.contains(pre[None, :] / xs[:, None])
            cm = hit.astype(float) @ p
            for f, name in enumerate(functionals):
                acc[j, f] = np.mean(_apply_functional(name, cm, 1.0))
        lhs_vals.append(acc)
    log_tot = np.concatenate(logs)
    wts = _importance(log_tot, s)
    ess = effective_sample_size(wts)
    rhs_cap = np.concatenate(rhs_vals)
    lhs_all = np.concatenate(lhs_vals)
    out = []
    for f, name in enumerate(functionals):
        lv, ls = weighted_mean(lhs_all[:, f], wts)
        rv, rs = weighted_mean(_apply_functional(name, rhs_cap,
                                                 np.ones_like(rhs_cap)), wts)
        se = math.hypot(ls, rs)
        # differences at round-off level (constant functionals) are not signal
        diff = lv - rv
        if abs(diff) <= 64 * np.finfo(float).eps * (abs(lv) + abs(rv)):
            diff = 0.0
        z = diff / se if se > 0 else 0.0
        out.append(RerootResult(name, lv, ls, rv, rs, float(z),
                                bool(abs(z) > threshold), ess, resampled))
    return out
