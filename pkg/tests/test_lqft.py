import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmclab import lqft
from gmclab.errors import ChartError, PreconditionError, SeibergError
from gmclab.field import SphereGrid, sample_sphere_gff

GRID = SphereGrid(h=1 / 8)
G83 = np.sqrt(8 / 3)


def test_constants_at_special_points():
    assert lqft.central_charge(G83) == 26.0
    assert lqft.central_charge(np.sqrt(2)) == 28.0
    assert lqft.background_charge(1.0) == 2.5
    for g in (0.5, 1.0, G83, 1.9):
        assert lqft.conformal_weight(g, g) == pytest.approx(1.0, abs=1e-15)
        Q = lqft.background_charge(g)
        assert lqft.central_charge(g) == pytest.approx(1 + 6 * Q * Q, rel=1e-14)


@given(st.floats(0.01, 1.99), st.floats(-5, 5))
def test_conformal_weight_formula(gamma, alpha):
    Q = lqft.background_charge(gamma)
    assert lqft.conformal_weight(alpha, gamma) == pytest.approx(
        alpha / 2 * (Q - alpha / 2), rel=1e-9, abs=1e-9)


def test_param_guards():
    with pytest.raises(PreconditionError):
        lqft.LqftParams(2.0)
    with pytest.raises(PreconditionError):
        lqft.LqftParams(1.0, mu=0.0)
    with pytest.raises(ChartError):
        lqft.VertexInsertion(complex(np.inf, 0), 1.0)
    with pytest.raises(PreconditionError):
        lqft.InsertionSet.of([0, 0], 1.0)


def test_seiberg_verdicts():
    # three gamma insertions at gamma = 1: sum 3 < 2Q = 5, soft bound holds
    v = lqft.seiberg_check(lqft.InsertionSet.of([0, 1, 2], 1.0), 1.0)
    assert v.verdict == "soft-pass-only" and v.soft and not v.strict
    v = lqft.seiberg_check(lqft.InsertionSet.of([0, 1, 2, 3], 1.5), 1.0)
    assert v.verdict == "strict-pass"
    v = lqft.seiberg_check(lqft.InsertionSet.of([0, 1, 2], 2.6), 1.0)
    assert v.verdict == "fail" and any(">= Q" in r for r in v.reasons)
    v = lqft.seiberg_check(lqft.InsertionSet.of([0, 1], 0.1), 1.0)
    assert v.verdict == "fail" and "fail(" in str(v)


def test_gamma_mu():
    assert lqft.gamma_mu(1.0, 2.0) == pytest.approx(0.5)
    assert lqft.gamma_mu(0.5, 1.0) == pytest.approx(np.sqrt(np.pi))
    with pytest.raises(SeibergError):
        lqft.gamma_mu(0.0, 1.0)


finite = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)


@settings(max_examples=40)
@given(finite, finite, finite, finite, finite)
def test_mobius_inverse_and_derivative(a, b, c, d, z):
    if abs(a * d - b * c) < 0.1 or abs(c * z + d) < 0.1:
        return
    m = lqft.Mobius(a, b, c, d)
    assert abs(m.a * m.d - m.b * m.c - 1) < 1e-9
    w = m(z)
    assert abs(m.inverse()(w) - z) < 1e-7 * (1 + abs(z))
    h = 1e-6
    fd = (m(z + h) - m(z - h)) / (2 * h)
    assert abs(fd - m.derivative(z)) < 1e-4 * (1 + abs(fd))


def test_named_mobius_maps():
    assert lqft.Mobius.scaling(2.0)(1.0) == pytest.approx(0.5)
    assert lqft.Mobius.rotation(np.pi / 2)(1.0) == pytest.approx(1j)
    ch = lqft.REROOT_CHART
    assert ch(0) == pytest.approx(0)
    assert ch(1) == pytest.approx(np.sqrt(3))
    assert ch.a / ch.c == pytest.approx(-np.sqrt(3))
    with pytest.raises(ChartError):
        ch(2.0)
    with pytest.raises(PreconditionError):
        lqft.Mobius(1, 1, 1, 1)


def test_shifted_field_identity_with_log_variance_form():
    f = sample_sphere_gff(GRID, seed=3)
    C = 0.37
    f2 = dataclasses.replace(f, variance=lqft.devvar_variance(GRID, C))
    gamma = 1.2
    wick = lqft.gmc_sphere(f2, gamma).weights
    shifted = lqft.shifted_field_weights(f2, gamma)
    ratio = wick / shifted
    assert np.ptp(ratio / ratio.mean()) < 1e-12
    assert ratio.mean() == pytest.approx(np.exp(-gamma**2 * C / 2), rel=1e-12)


def test_gmc_sphere_requires_sphere_field():
    from gmclab.field import GridSpec, LogKernelSpec, MollifierSpec, sample_log_field
    f = sample_log_field(LogKernelSpec(), MollifierSpec(), GridSpec(8), 0.25, 0)
    with pytest.raises(PreconditionError):
        lqft.gmc_sphere(f, 1.0)


@settings(max_examples=20)
@given(st.floats(0, 2 * np.pi))
def test_green_prefactor_rotation_invariant(t):
    ins = lqft.InsertionSet.of([0.3, -0.5j, 1 + 1j], [1.0, 1.2, 0.8])
    rot = lqft.Mobius.rotation(t)
    assert lqft.green_prefactor(ins.mapped(rot), 1.0) == pytest.approx(
        lqft.green_prefactor(ins, 1.0), abs=1e-10)


def test_z_measure_reweights_by_potential():
    f = sample_sphere_gff(GRID, seed=0)
    m = lqft.gmc_sphere(f, 1.0)
    ins = lqft.InsertionSet.of([0.5], 1.0)
    zm = lqft.z_measure(m, ins)
    pot = lqft.insertion_potential(GRID, ins, 1.0)
    assert np.allclose(zm.weights, m.weights * np.exp(pot))
    assert lqft.z_measure(m, lqft.InsertionSet(())) is m


FOUR = lqft.InsertionSet.of([0.0, 1.0, 1j, -1.0 - 0.5j], 1.5)


def test_correlation_mu_scaling_exact():
    p1, p2 = lqft.LqftParams(1.0, 1.0), lqft.LqftParams(1.0, 2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", lqft.PrecisionWarning)
        r1 = lqft.correlation_mc(FOUR, p1, n=200, seed=1, grid=GRID)
        r2 = lqft.correlation_mc(FOUR, p2, n=200, seed=1, grid=GRID)
    s = FOUR.s(1.0)
    assert s == pytest.approx(1.0)
    assert r2.estimate / r1.estimate == pytest.approx(2.0 ** (-s), rel=1e-14)
    assert r1.estimate > 0 and r1.stderr > 0


def test_correlation_requires_strict_bounds():
    with pytest.raises(SeibergError):
        lqft.correlation_mc(lqft.InsertionSet.of([0, 1, 2], 1.0),
                            lqft.LqftParams(1.0), n=10, grid=GRID)


def test_kpz_identity_map_is_exact():
    r = lqft.kpz_covariance_check(FOUR, lqft.Mobius.identity(),
                                  lqft.LqftParams(1.0), n=200, seed=0, grid=GRID)
    assert r.ratio == pytest.approx(1.0, abs=1e-12)


def test_unit_volume_sample():
    ins = lqft.InsertionSet.of([0.0, 1.0, -1.0], 1.0)
    ens = lqft.unit_volume_sample(ins, 1.0, n=100, seed=0, grid=GRID)
    assert ens.measures.shape == (100, GRID.size)
    assert np.allclose(ens.measures.sum(axis=1), 1.0)
    assert len(ens) == 100 and 0 < ens.ess <= 100
    m, se = ens.expect(np.ones(100))
    assert m == pytest.approx(1.0) and se == pytest.approx(0.0, abs=1e-12)


def test_weighted_mean_equal_weights():
    x = np.arange(10.0)
    m, se = lqft.weighted_mean(x, np.ones(10))
    assert m == pytest.approx(4.5)
    assert se == pytest.approx(np.std(x) / np.sqrt(10))


def test_rerooting_total_mass_exact():
    res = lqft.rerooting_check(1.0, functionals=("total-mass", "cap-mass"),
                               n=100, seed=0, grid=GRID)
    tm = res[0]
    assert tm.lhs == pytest.approx(1.0) and tm.rhs == pytest.approx(1.0)
    assert not tm.reject
    cm = res[1]
    assert 0 < cm.lhs < 1 and 0 < cm.rhs < 1
    with pytest.raises(PreconditionError):
        lqft.rerooting_check(1.0, functionals=("volume",), n=4, grid=GRID)


def test_strict_gate_implies_soft():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        gamma = rng.uniform(0.1, 1.95)
        n = rng.integers(1, 7)
        a = rng.uniform(0, 1.2 * lqft.background_charge(gamma), n)
        z = rng.normal(size=n) + 1j * rng.normal(size=n)
        v = lqft.seiberg_check(lqft.InsertionSet.of(z, a), gamma)
        assert not v.strict or v.soft


@pytest.mark.parametrize("s", [0.1, 0.5, 2.0])
def test_gamma_mu_scale_identity(s):
    base = lqft.gamma_mu(s, 1.0)
    for mu in (0.3, 2.0, 17.0):
        assert lqft.gamma_mu(s, mu) * mu**s == pytest.approx(base, rel=1e-12)


def test_green_prefactor_permutation_invariant():
    pts, al = [0.3, -0.5j, 1 + 1j, 2.0], [1.0, 1.2, 0.8, 1.5]
    ref = lqft.green_prefactor(lqft.InsertionSet.of(pts, al), 1.0)
    for perm in ([3, 2, 1, 0], [1, 0, 3, 2], [2, 3, 0, 1]):
        ins = lqft.InsertionSet.of([pts[i] for i in perm], [al[i] for i in perm])
        assert lqft.green_prefactor(ins, 1.0) == pytest.approx(ref, abs=1e-12)
