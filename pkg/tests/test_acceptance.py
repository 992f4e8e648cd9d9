"""Acceptance suite: the sixteen numbered criteria at their stated tolerances.

Each test prints one line ``ACCEPTANCE <k> PASS|FAIL <detail>``; the lines are
also collected into a section of the terminal summary.  The whole module
takes roughly 15-25 minutes on one core.
"""

import itertools
import time
from decimal import Decimal, getcontext

import numpy as np
import pytest

from gmclab import config, gmc, ising, lqft
from gmclab import multifractal as mf
from gmclab.field import (Box, LogKernelSpec, MollifierSpec, SphereGrid,
                          girsanov_check, green_integral, green_sphere,
                          kahane_compare)
from gmclab.rng import stream

K = LogKernelSpec()
BUMP = MollifierSpec()
TENT = MollifierSpec("tent-smoothed")
G83 = float(np.sqrt(8 / 3))


# 1 ---------------------------------------------------------------------------

@pytest.mark.parametrize("gamma", [0.5, 1.0, 1.4])
def test_01_mean_conservation(gamma, accept):
    t = time.perf_counter()
    eps = 2**-5
    ms, _ = gmc.mass_samples(K, gamma, None, [(BUMP, eps)], 10_000, seed=1,
                             grid=gmc.grid_for(K, eps), mode="exact")
    e = gmc.mean_se(ms[:, 0])
    dt = time.perf_counter() - t
    ok = abs(e.value - 1) < 4 * e.stderr and dt < 60
    accept(1, ok, f"gamma={gamma}: mean mass {e.value:.4f} +- {e.stderr:.4f} "
                  f"({abs(e.value - 1) / e.stderr:.2f} se), {dt:.1f}s")


# 2 ---------------------------------------------------------------------------

def test_02_second_moment(accept):
    t = time.perf_counter()
    eps = 2**-4
    orc = gmc.second_moment_oracle(K, 0.8, Box(), eps)
    ms, _ = gmc.mass_samples(K, 0.8, None, [(BUMP, eps)], 20_000, seed=2,
                             grid=gmc.grid_for(K, eps, 4), mode="exact")
    v = gmc.variance_se(ms[:, 0])
    dt = time.perf_counter() - t
    ok = abs(v.value - orc) < 4 * v.stderr and dt < 120
    accept(2, ok, f"Var M = {v.value:.4f} +- {v.stderr:.4f} vs quadrature "
                  f"{orc:.4f}, {dt:.1f}s")


# 3 ---------------------------------------------------------------------------

def _strictly_decreasing(res):
    steps = []
    for a, b in zip(res[:-1], res[1:]):
        se = np.hypot(a.stderr, b.stderr)
        steps.append(a.estimate - b.estimate > 2 * se)
    return all(steps)


def test_03_cauchy_and_mollifier_trends(accept):
    ladder = [2.0**-k for k in (3, 4, 5, 6)]
    n = 4000
    cauchy = [gmc.cauchy_diagnostic(K, 0.8, Box(), e, e / 2, n, seed=3)
              for e in ladder]
    inv = gmc.mollifier_invariance(K, 0.8, Box(), BUMP, TENT, ladder, n, seed=3)
    ok_c, ok_m = _strictly_decreasing(cauchy), _strictly_decreasing(inv)
    fmt = lambda rs: ", ".join(f"{r.estimate:.2e}" for r in rs)
    accept(3, ok_c and ok_m,
           f"Cauchy [{fmt(cauchy)}] {'decreasing' if ok_c else 'NOT decreasing'}; "
           f"mollifier [{fmt(inv)}] {'decreasing' if ok_m else 'NOT decreasing'}")


# 4 ---------------------------------------------------------------------------

def test_04_girsanov(accept):
    rng = stream(4, "cases")
    worst = 0.0
    t = time.perf_counter()
    for case in range(10):
        d = int(rng.integers(1, 5))
        a = rng.standard_normal((d, d))
        cov = a @ a.T / d + 0.2 * np.eye(d)
        lam = float(rng.uniform(-1, 1))
        F = ["first", "sum-squares", "cos-sum", "exp-linear"][case % 4]
        coef = rng.uniform(-0.5, 0.5, d) if F == "exp-linear" else None
        r = girsanov_check(cov, int(rng.integers(0, d)), lam, F, coef)
        worst = max(worst, abs(r.lhs - r.rhs))
    dt = time.perf_counter() - t
    accept(4, worst < 1e-10, f"10 cases, max |lhs - rhs| = {worst:.2e}, {dt:.2f}s")


# 5 ---------------------------------------------------------------------------

def test_05_kahane(accept):
    small = K.scaled(0.6)
    conv = sum(kahane_compare(small, K, "square", seed=s).verdict for s in range(20))
    conc = sum(kahane_compare(small, K, "sqrt", seed=s).verdict for s in range(20))
    accept(5, conv >= 19 and conc >= 19,
           f"convex verdict {conv}/20, concave verdict {conc}/20")


# 6 ---------------------------------------------------------------------------

@pytest.mark.parametrize("gamma,q", [(0.5, 1.0), (0.5, 2.0), (1.0, 0.5)])
def test_06_zeta_fits(gamma, q, accept):
    t = time.perf_counter()
    fit = mf.estimate_zeta(K, gamma, q, seed=6)
    dt = time.perf_counter() - t
    lo, hi = fit.slope_ci
    accept(6, fit.ci_meets_band(0.1),
           f"gamma={gamma} q={q}: slope {fit.slope:.4f} CI [{lo:.4f}, {hi:.4f}] "
           f"vs zeta={fit.target:.4f} +-10%, {dt:.1f}s")


# 7 ---------------------------------------------------------------------------

def test_07_moment_threshold(accept):
    good = 0
    for run in range(20):
        res = gmc.moment_scan(K, 1.0, gmc.Ball((0.5, 0.5), 0.5), [2.0, 5.0],
                              1 / 16, 100_000, seed=700 + run)
        good += res[0].verdict == "stable" and res[1].verdict == "non-convergent"
    accept(7, good >= 18, f"q=2 stable and q=5 flagged in {good}/20 runs")


# 8 ---------------------------------------------------------------------------

def test_08_thick_points(accept):
    h = mf.thick_point_histogram(K, 1.0, n_levels=7, n_samples=4000, seed=8)
    rate = mf.reference_tail_rate(0.5)
    mean_ok = abs(h.mean - 1.0) < 0.15
    ratio = h.tail_slope / rate if rate else float("nan")
    slope_ok = 0.5 <= ratio <= 2.0
    accept(8, mean_ok and slope_ok,
           f"mean ratio {h.mean:.3f} +- {h.stderr:.3f} ({'ok' if mean_ok else 'out'}); "
           f"tail slope {h.tail_slope:.4f} vs {rate:.4f} (factor {ratio:.2f}, "
           f"{'ok' if slope_ok else 'out'})")


# 9 ---------------------------------------------------------------------------

def test_09_seiberg_first_bound(accept):
    rows = mf.seiberg_runs(1.0, [1.0, 3.0], runs=20, seed=9, eps=2**-8)
    conv = sum(r["verdict"] == "convergent" for r in rows if r["alpha"] == 1.0)
    div = sum(r["verdict"] == "divergent" for r in rows if r["alpha"] == 3.0)
    accept(9, conv >= 18 and div >= 18,
           f"alpha=1 convergent {conv}/20, alpha=3 divergent {div}/20")


# 10 --------------------------------------------------------------------------

def test_10_sphere_geometry(accept):
    g = SphereGrid(h=config.settings.grid_resolution)
    vol = abs(g.total_volume / (4 * np.pi) - 1)
    mz = max(abs(green_integral(g, z)) for z in (0.0, 0.3 + 0.4j, 3 - 1j))
    g01 = abs(green_sphere(0, 1) - 0.5 * np.log(2))
    accept(10, vol < 1e-3 and mz < 1e-3 and g01 < 1e-12,
           f"volume rel err {vol:.1e}, max |int G| {mz:.1e}, "
           f"|G(0,1) - ln2/2| {g01:.1e}")


# 11 --------------------------------------------------------------------------

def test_11_lqft_constants(accept):
    c = lqft.central_charge(G83)
    dg = lqft.conformal_weight(G83, G83)
    ex = [
        (lqft.InsertionSet.of([0, 1, 2], G83), G83, "strict-pass"),
        (lqft.InsertionSet.of([0, 1], 1.0), 1.0, "fail"),
        # soft gate by hand: Q - 3/2 = 1 < min(2/gamma, Q - 1) = 1.5
        (lqft.InsertionSet.of([0, 1, 2], 1.0), 1.0, "soft-pass-only"),
    ]
    got = [lqft.seiberg_check(i, g).verdict for i, g, _ in ex]
    want = [w for *_, w in ex]
    accept(11, c == 26.0 and dg == 1.0 and got == want,
           f"c_L={c!r}, Delta_gamma={dg!r}, verdicts {got}")


# 12 --------------------------------------------------------------------------

def test_12_kpz(accept):
    ins = lqft.InsertionSet.of([0, 1, 1 + 1j], G83)
    par = lqft.LqftParams(G83)
    grid = SphereGrid(h=1 / 32)
    t = time.perf_counter()
    out = []
    with config.override(exact_max_points=8000):
        for psi, name in ((lqft.Mobius.rotation(0.7), "rotation"),
                          (lqft.Mobius.scaling(2.0), "scaling")):
            r = lqft.kpz_covariance_check(ins, psi, par, 10_000, seed=12, grid=grid)
            out.append((name, r))
    dt = time.perf_counter() - t
    ok = all(abs(r.ratio - 1) < 4 * r.stderr for _, r in out) and dt < 900
    accept(12, ok, "; ".join(f"{n} {r.ratio:.4f} +- {r.stderr:.4f}" for n, r in out)
           + f", {dt:.0f}s")


# 13 --------------------------------------------------------------------------

def test_13_mu_independence(accept):
    ins = lqft.InsertionSet.of([0, 1, 1 + 1j], G83)
    grid = SphereGrid(h=1 / 16)
    ups = []
    for mu in (1.0, 7.5):
        ens = lqft.unit_volume_sample(ins, G83, 500, seed=13, grid=grid,
                                      params=lqft.LqftParams(G83, mu))
        upper = ens.measures @ (np.abs(grid.z) > 1)
        ups.append((ens.weights.tobytes(), ens.measures.tobytes(),
                    ens.expect(upper)))
    accept(13, ups[0] == ups[1], "weights, measures and weighted mean "
           f"{'bit-identical' if ups[0] == ups[1] else 'DIFFER'} for mu=1 vs 7.5")


# 14 --------------------------------------------------------------------------

def test_14_rerooting(accept):
    res = lqft.rerooting_check(G83, ("cap-mass", "cap-mass-squared"),
                               n=10_000, seed=14)
    ok = not any(r.reject for r in res)
    accept(14, ok, "; ".join(f"{r.functional}: {r.lhs:.4f} vs {r.rhs:.4f}, "
                             f"z={r.z:.2f}" for r in res))


# 15 --------------------------------------------------------------------------

def _decimal_corr(pts):
    getcontext().prec = 40
    n = len(pts)
    tot = Decimal(0)
    for plus in itertools.combinations(range(n), n // 2):
        mu = [1 if i in plus else -1 for i in range(n)]
        term = Decimal(1)
        for i in range(n):
            for j in range(i + 1, n):
                d = Decimal(abs(complex(pts[i]) - complex(pts[j])))
                term *= d ** (Decimal(mu[i] * mu[j]) / 2)
        tot += term
    return float(Decimal(2) ** (Decimal(-n) / 4) * tot.sqrt())


def test_15_ising_exact(accept):
    e2 = max(abs(ising.spin_correlation_exact([0, r]) - r ** -0.25)
             for r in (0.01, 0.5, 1.0, 3.7, 100.0))
    pts = [0, 1, 2, 3]
    e4 = abs(ising.spin_correlation_exact(pts) - _decimal_corr(pts))
    rng = stream(15, "mob")
    em = 0.0
    for _ in range(10):
        z = rng.normal(size=6) + 1j * rng.normal(size=6)
        psi = lqft.Mobius(*(rng.normal(size=4) + 1j * rng.normal(size=4)))
        em = max(em, abs(ising.spin_mobius_check(z, psi) - 1))
    accept(15, e2 < 1e-14 and e4 < 1e-12 and em < 1e-10,
           f"n=2 err {e2:.1e}, n=4 vs 40-digit oracle {e4:.1e}, Mobius err {em:.1e}")


# 16 --------------------------------------------------------------------------

def test_16_ising_lattice(accept):
    b = ising.critical_beta()
    corners = lambda c: c[0, 0] * c[2, 2]
    exact = ising.enumerate_gibbs(1, b, corners)
    v = np.array([corners(c.spins) for c in
                  ising.sample_ising(1, b, 20_000, "cluster", seed=16)], float)
    k = 100
    bm = v[: v.size // k * k].reshape(-1, k).mean(1)
    se = bm.std(ddof=1) / np.sqrt(bm.size)
    small_ok = abs(v.mean() - exact) < 4 * se
    t = time.perf_counter()
    sq = 0.25 * np.array([-1 - 1j, 1 - 1j, -1 + 1j, 1 + 1j])
    r = ising.scaling_ratio_check(sq, 128, 1 / 64, 20_000, seed=16)
    dt = time.perf_counter() - t
    big_ok = r.rel_error < 0.10 and dt < 1200
    accept(16, small_ok and big_ok,
           f"N=1 {v.mean():.4f} +- {se:.4f} vs exact {exact:.5f}; N=128 ratio "
           f"{r.lattice:.4f} +- {r.stderr:.4f} vs {r.continuum:.4f} "
           f"(rel err {r.rel_error:.3f}), {dt:.0f}s")
