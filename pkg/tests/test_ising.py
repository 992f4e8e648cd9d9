import itertools
import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmclab import ising
from gmclab.errors import FormulaDomainError, PlacementError, PreconditionError
from gmclab.lqft import Mobius


def decimal_correlation(pts, digits=40):
    """2^{-n/4} (sum over balanced signs of prod_{i<j} |z_i-z_j|^{mu_i mu_j/2})^{1/2}
    in 40-digit decimal arithmetic."""
    getcontext().prec = digits
    n = len(pts)
    dist = {(i, j): Decimal(abs(complex(pts[i]) - complex(pts[j])))
            for i in range(n) for j in range(i + 1, n)}
    total = Decimal(0)
    for plus in itertools.combinations(range(n), n // 2):
        mu = [1 if i in plus else -1 for i in range(n)]
        term = Decimal(1)
        for (i, j), d in dist.items():
            term *= d ** (Decimal(mu[i] * mu[j]) / 2)
        total += term
    return float(Decimal(2) ** (Decimal(-n) / 4) * total.sqrt())


def test_critical_beta():
    assert math.sinh(2 * ising.critical_beta()) == pytest.approx(1.0, abs=1e-15)


def test_two_point_power_law():
    for r in (0.1, 1.0, 7.5):
        assert ising.spin_correlation_exact([0, r]) == pytest.approx(r ** -0.25, rel=1e-14)


@pytest.mark.parametrize("pts", [[0, 1, 2, 3], [0, 1j, 2 + 1j, -1 - 3j],
                                 [0.1, 0.5, 0.9j, 2, 3 - 1j, 1 + 1j]])
def test_against_extended_precision(pts):
    assert ising.spin_correlation_exact(pts) == pytest.approx(decimal_correlation(pts), rel=1e-13)


def test_balanced_signs():
    s = ising.balanced_signs(6)
    assert s.shape == (20, 6)
    assert np.all(s.sum(1) == 0)
    assert len({tuple(r) for r in s}) == 20


def test_domain_errors():
    with pytest.raises(FormulaDomainError):
        ising.spin_correlation_exact([0, 1, 2])
    with pytest.raises(FormulaDomainError):
        ising.spin_correlation_exact([0, 1, 1, 2])
    with pytest.raises(PreconditionError):
        ising.spin_correlation_exact(np.arange(22))
    with pytest.raises(FormulaDomainError):
        ising.spin_mobius_check([0, 1], Mobius(1, 0, 1, -1))


pts_strategy = st.lists(st.complex_numbers(max_magnitude=4, allow_nan=False,
                                           allow_infinity=False),
                        min_size=4, max_size=4)


@settings(max_examples=40, deadline=None)
@given(pts_strategy, st.floats(0, 2 * np.pi), st.floats(0.3, 3.0))
def test_mobius_covariance(pts, theta, lam):
    z = np.array(pts)
    if np.min(np.abs(z[:, None] - z[None] + 10 * np.eye(4))) < 1e-2:
        return
    psi = Mobius(np.exp(0.5j * theta) / np.sqrt(lam), 0.3, 0.2, np.exp(-0.5j * theta))
    if np.min(np.abs(psi.c * z + psi.d)) < 1e-2:
        return
    assert ising.spin_mobius_check(z, psi) == pytest.approx(1.0, rel=1e-9)


def test_continuum_ratio_square():
    # unit square corners, pairs on opposite sides
    assert ising.continuum_ratio([0, 1, 1j, 1 + 1j]) == pytest.approx(2 ** 0.25, rel=1e-12)


def _energy_loops(s):
    n = s.shape[0]
    p = np.ones((n + 2, n + 2))
    p[1:-1, 1:-1] = s
    e = 0.0
    # every bond touching at least one interior site, counted once
    for i in range(n + 2):
        for j in range(n + 2):
            for di, dj in ((1, 0), (0, 1)):
                a, b = i + di, j + dj
                if a > n + 1 or b > n + 1:
                    continue
                inner = (1 <= i <= n and 1 <= j <= n) or (1 <= a <= n and 1 <= b <= n)
                if inner:
                    e -= p[i, j] * p[a, b]
    return e


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_energy_matches_bond_loop(N, seed):
    s = np.random.default_rng(seed).choice([-1, 1], size=(2 * N + 1,) * 2)
    assert ising.energy(s) == pytest.approx(_energy_loops(s))


def corners(c):
    return c[0, 0] * c[2, 2]


def _corner_product_bruteforce(beta):
    num = den = 0.0
    for st_ in itertools.product((-1, 1), repeat=9):
        s = np.array(st_).reshape(3, 3)
        w = math.exp(-beta * _energy_loops(s))
        num += w * corners(s)
        den += w
    return num / den


def test_enumeration_oracle():
    b = ising.critical_beta()
    val = ising.enumerate_gibbs(1, b, corners)
    assert val == pytest.approx(_corner_product_bruteforce(b), rel=1e-12)
    assert val == pytest.approx(0.84317, abs=1e-5)
    assert ising.enumerate_gibbs(1, 0.0, lambda c: c[1, 1]) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(PreconditionError):
        ising.enumerate_gibbs(2, b, lambda c: 0)


@pytest.mark.parametrize("algorithm", ["cluster", "single-site"])
def test_samplers_match_enumeration(algorithm):
    b = ising.critical_beta()
    exact = ising.enumerate_gibbs(1, b, corners)
    vals = [corners(c.spins) for c in ising.sample_ising(1, b, 6000, algorithm, seed=2)]
    v = np.asarray(vals, float)
    se = v.std() / np.sqrt(v.size) * 3  # rough autocorrelation allowance
    assert abs(v.mean() - exact) < 4 * se


def test_sampler_guards_and_determinism():
    with pytest.raises(PreconditionError):
        next(ising.sample_ising(0, 0.4, 1))
    with pytest.raises(PreconditionError):
        next(ising.sample_ising(3, 0.4, 1, algorithm="metropolis"))
    a = [c.spins for c in ising.sample_ising(4, 0.4, 5, seed=9)]
    b = [c.spins for c in ising.sample_ising(4, 0.4, 5, seed=9)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = next(ising.sample_ising(4, 0.4, 1))
    assert c.at([[0, 0], [-4, 4]]).shape == (2,)


def test_cluster_products_parity():
    lab = np.array([[0, 0, 1], [2, 2, 1], [3, 3, 3]])
    sites = np.array([[0, 0], [0, 1], [0, 2], [1, 2]])  # two clusters, even
    assert ising.cluster_products(lab, 3, sites) == 1.0
    sites = np.array([[0, 0], [0, 2], [1, 0], [1, 1]])  # odd counts in 0 and 1
    assert ising.cluster_products(lab, 3, sites) == 0.0
    sites = np.array([[2, 0], [2, 1], [0, 0], [0, 1]])  # boundary cluster is free
    assert ising.cluster_products(lab, 3, sites) == 1.0
    sites = np.array([[2, 0], [0, 2]])
    assert ising.cluster_products(lab, 3, sites) == 0.0


def test_placement_checks():
    sites = ising.lattice_sites([0.1, 0.5], 0.01)
    assert sites.tolist() == [[10, 0], [50, 0]]
    ising.check_placement(sites, 64)
    with pytest.raises(PlacementError):
        ising.check_placement(sites, 55)
    with pytest.raises(PlacementError):
        ising.check_placement(np.array([[0, 0], [3, 3]]), 64)


def test_scaling_ratio_small_lattice():
    pts = [-0.25 - 0.25j, 0.25 - 0.25j, -0.25 + 0.25j, 0.25 + 0.25j]
    r = ising.scaling_ratio_check(pts, 32, 1 / 32, 600, seed=1, burn_in=50)
    assert r.continuum == pytest.approx(2 ** 0.25, rel=1e-12)
    assert abs(r.lattice - r.continuum) < 5 * r.stderr + 0.15
    assert set(r.as_dict()) >= {"lattice_ratio", "continuum_ratio", "four_point"}
