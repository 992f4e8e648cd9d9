"""Critical planar Ising model: the exact continuum spin correlations, their
Mobius covariance, and a lattice sampler with + boundary conditions for
scaling-ratio comparisons."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp

from .errors import ChartError, FormulaDomainError, PlacementError, PreconditionError
from .rng import stream

MAX_EXACT_POINTS = 20
SPIN_WEIGHT = 1 / 16


def critical_beta() -> float:
    """beta_c = ln(1 + sqrt 2) / 2."""
    return 0.5 * np.log1p(np.sqrt(2.0))


# ------------------------------------------------------------ exact formula

def _points(pts):
    z = np.asarray(pts, dtype=complex).ravel()
    n = z.size
    if n % 2:
        raise FormulaDomainError(f"spin correlations need an even number of points (got {n})")
    if n > MAX_EXACT_POINTS:
        raise PreconditionError(f"exact sum limited to n <= {MAX_EXACT_POINTS} (got {n})")
    d = np.abs(z[:, None] - z[None, :])
    if n and np.any(d[np.triu_indices(n, 1)] == 0):
        raise FormulaDomainError("spin points must be pairwise distinct")
    return z, d


def balanced_signs(n):
    """All mu in {-1, 1}^n with sum zero, as an (C(n, n/2), n) array."""
    out = -np.ones((0, n), dtype=np.int8)
    rows = []
    for plus in combinations(range(n), n // 2):
        r = -np.ones(n, dtype=np.int8)
        r[list(plus)] = 1
        rows.append(r)
    return np.array(rows, dtype=np.int8) if rows else out


def log_spin_correlation(pts) -> float:
    z, d = _points(pts)
    n = z.size
    if n == 0:
        return 0.0
    L = np.log(np.where(d > 0, d, 1.0))
    mu = balanced_signs(n).astype(float)
    # sum_{i<j} mu_i mu_j L_ij / 2 = (mu L mu) / 4 with zero diagonal
    expo = np.einsum("ki,ij,kj->k", mu, L, mu) / 4
    return 0.5 * (-n / 2 * np.log(2.0) + logsumexp(expo))


def spin_correlation_exact(pts) -> float:
    """<sigma(z_1) ... sigma(z_n)> for distinct points, n even."""
    return float(np.exp(log_spin_correlation(pts)))


def spin_mobius_check(pts, psi) -> float:
    """corr(psi(z)) / (prod |psi'(z_i)|^{-1/8} corr(z)); exactly 1 in theory."""
    z, _ = _points(pts)
    try:
        img = np.asarray(psi(z), dtype=complex)
    except ChartError:
        raise FormulaDomainError("Mobius image contains infinity") from None
    if not np.all(np.isfinite(img)):
        raise FormulaDomainError("Mobius image contains infinity")
    _points(img)
    log_jac = -2 * SPIN_WEIGHT * np.sum(np.log(np.abs(psi.derivative(z))))
    return float(np.exp(log_spin_correlation(img) - log_jac
                        - log_spin_correlation(z)))


def continuum_ratio(pts) -> float:
    """<s1 s2 s3 s4> / (<s1 s2><s3 s4>) from the exact formula."""
    z = np.asarray(pts, dtype=complex)
    return float(np.exp(log_spin_correlation(z) - log_spin_correlation(z[:2])
                        - log_spin_correlation(z[2:])))


# ----------------------------------------------------------------- lattice

@dataclass
class SpinConfiguration:
    """Spins on [-N, N]^2 (index [i + N, j + N]) with + boundary."""

    N: int
    beta: float
    spins: np.ndarray
    sweep: int = 0
    # cluster labels of the bond configuration the spins were drawn from
    # (cluster mode only) and the label of the boundary cluster
    clusters: np.ndarray | None = None
    boundary_label: int = -1

    def __post_init__(self):
        s = self.spins
        if s.shape != (2 * self.N + 1,) * 2 or not np.all(np.abs(s) == 1):
            raise PreconditionError("spins must be +-1 on the (2N+1)^2 box")

    def at(self, sites):
        """Spin values at integer sites (x, y) in [-N, N]^2."""
        s = np.asarray(sites, dtype=int)
        return self.spins[s[..., 0] + self.N, s[..., 1] + self.N]

    def padded(self):
        return np.pad(self.spins, 1, constant_values=1)


def energy(spins) -> float:
    """H^+ = -sum over nearest-neighbour pairs, boundary spins fixed at +1,
    each interior pair counted once."""
    p = np.pad(np.asarray(spins), 1, constant_values=1)
    inner = p[1:-1, 1:-1]
    e = -(np.sum(p[1:-1, 1:-2] * p[1:-1, 2:-1]) +
          np.sum(p[1:-2, 1:-1] * p[2:-1, 1:-1]))
    # pairs with the boundary
    e -= inner[0].sum() + inner[-1].sum() + inner[:, 0].sum() + inner[:, -1].sum()
    return float(e)


def _heat_bath_sweep(p, beta, rng):
    """One checkerboard heat-bath sweep on the padded array (in place)."""
    n = p.shape[0] - 2
    ii, jj = np.indices((n, n))
    for parity in (0, 1):
        mask = (ii + jj) % 2 == parity
        h = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
        prob = 1.0 / (1.0 + np.exp(-2 * beta * h))
        new = np.where(rng.random((n, n)) < prob, 1, -1)
        inner = p[1:-1, 1:-1]
        inner[mask] = new[mask]


def _sw_sweep(s, beta, rng):
    """Swendsen-Wang update of the interior spins ``s`` (in place); the
    + boundary is one frozen ghost vertex that never flips."""
    n = s.shape[0]
    size = n * n
    ghost = size
    pb = -np.expm1(-2 * beta)
    idx = np.arange(size).reshape(n, n)
    rows, cols = [], []
    # horizontal and vertical interior bonds
    for a, b, sa, sb in ((idx[:, :-1], idx[:, 1:], s[:, :-1], s[:, 1:]),
                         (idx[:-1, :], idx[1:, :], s[:-1, :], s[1:, :])):
        on = (sa == sb) & (rng.random(sa.shape) < pb)
        rows.append(a[on])
        cols.append(b[on])
    # bonds to the + boundary: one per boundary edge
    edge = np.concatenate([idx[0], idx[-1], idx[:, 0], idx[:, -1]])
    vals = s.ravel()[edge]
    on = (vals == 1) & (rng.random(edge.size) < pb)
    rows.append(edge[on])
    cols.append(np.full(on.sum(), ghost))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    g = coo_matrix((np.ones(r.size, dtype=np.int8), (r, c)),
                   shape=(size + 1, size + 1))
    ncomp, lab = connected_components(g, directed=False)
    flip = rng.random(ncomp) < 0.5
    flip[lab[ghost]] = False
    # clusters attached to the boundary are + and stay put
    sign = np.where(flip, -1, 1).astype(s.dtype)
    s *= sign[lab[:size]].reshape(n, n)
    return lab[:size].reshape(n, n), int(lab[ghost])


def sample_ising(N, beta, n_sweeps, algorithm="cluster", seed=0, burn_in=None,
                 thin=1, start="plus"):
    """Generator of SpinConfiguration snapshots of the + boundary chain."""
    if N < 1:
        raise PreconditionError("N must be at least 1")
    if N > 256:
        raise PreconditionError("N > 256 is beyond the supported lattice size")
    if beta < 0:
        raise PreconditionError("beta must be nonnegative")
    rng = stream(seed, "ising", N)
    n = 2 * N + 1
    s = np.ones((n, n), dtype=np.int8) if start == "plus" else \
        rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, n))
    burn = n_sweeps // 10 if burn_in is None else burn_in
    p = np.pad(s, 1, constant_values=1).astype(np.int8)
    lab, gl = None, -1
    for k in range(burn + n_sweeps):
        if algorithm == "cluster":
            lab, gl = _sw_sweep(p[1:-1, 1:-1], beta, rng)
        elif algorithm == "single-site":
            _heat_bath_sweep(p, beta, rng)
        else:
            raise PreconditionError(f"unknown algorithm {algorithm!r}")
        if k >= burn and (k - burn) % thin == 0:
            yield SpinConfiguration(N, beta, p[1:-1, 1:-1].copy(), k - burn,
                                    lab, gl)


def enumerate_gibbs(N, beta, observable):
    """Exact mu^+_{N, beta}[F] by summing over all 2^{(2N+1)^2} states."""
    n = 2 * N + 1
    if n * n > 20:
        raise PreconditionError("exhaustive enumeration limited to 20 spins")
    states = np.array(list(product((-1, 1), repeat=n * n)), dtype=float)
    conf = states.reshape(-1, n, n)
    e = np.array([energy(c) for c in conf])
    logw = -beta * e
    w = np.exp(logw - logw.max())
    vals = np.array([observable(c) for c in conf])
    return float(w @ vals / w.sum())


# ----------------------------------------------------- scaling comparison

def lattice_sites(pts, eps):
    """floor(z / eps) as integer lattice sites."""
    z = np.asarray(pts, dtype=complex)
    return np.stack([np.floor(z.real / eps), np.floor(z.imag / eps)],
                    -1).astype(int)


def check_placement(sites, N, sep=8, margin=8):
    s = np.asarray(sites)
    d = np.abs(s[:, None, :] - s[None, :, :]).max(-1)
    iu = np.triu_indices(len(s), 1)
    if np.any(d[iu] < sep):
        raise PlacementError(f"lattice points closer than {sep} sites")
    if np.any(np.abs(s) > N - margin):
        raise PlacementError(f"lattice points within {margin} sites of the boundary")


@dataclass
class ScalingRatio:
    lattice: float
    continuum: float
    stderr: float
    n_samples: int
    sites: np.ndarray
    moments: dict = field(default_factory=dict)

    @property
    def rel_error(self):
        return abs(self.lattice / self.continuum - 1)

    def as_dict(self):
        return {"lattice_ratio": self.lattice, "continuum_ratio": self.continuum,
                "stderr": self.stderr, "n_samples": self.n_samples,
                "sites": self.sites.tolist(), **self.moments}


def cluster_products(labels, boundary, sites):
    """Conditional expectation of prod_i sigma(site_i) given the bonds:
    1 when every cluster other than the boundary one holds an even number
    of the sites, else 0.  ``sites`` is (..., k, 2) in array indices."""
    lab = labels[sites[..., 0], sites[..., 1]]
    free = lab != boundary
    # parity of each label among the free sites, via pairwise equality
    same = (lab[..., :, None] == lab[..., None, :]) & free[..., None, :]
    counts = same.sum(-1)
    return np.all(~free | (counts % 2 == 0), axis=-1).astype(float)


def _ratio_with_se(a, b, c, batch=20):
    """mean(a) / (mean(b) mean(c)) with a batch-means delta-method stderr."""
    ma, mb, mc = a.mean(), b.mean(), c.mean()
    r = ma / (mb * mc)
    lin = a / ma - b / mb - c / mc
    k = max(2, lin.size // batch)
    nb = lin.size // k
    means = lin[: nb * k].reshape(nb, k).mean(1)
    se = abs(r) * means.std(ddof=1) / np.sqrt(nb)
    return float(r), float(se)


def scaling_ratio_check(pts, N, eps, n_samples, seed=0, burn_in=200,
                        symmetrize=True) -> ScalingRatio:
    """Lattice <s1s2s3s4>/(<s1s2><s3s4>) at beta_c vs the continuum ratio.

    Correlations use the cluster (bond) estimators of the Swendsen-Wang
    chain.  With ``symmetrize`` the estimator averages over the eight lattice
    symmetries of the configuration (all fix the box), which leaves the
    target unchanged and reduces variance.
    """
    pts = np.asarray(pts, dtype=complex)
    if pts.size != 4:
        raise PreconditionError("scaling ratio uses exactly four points")
    sites = lattice_sites(pts, eps)
    check_placement(sites, N)
    maps = [lambda x, y: (x, y)]
    if symmetrize:
        maps = [lambda x, y, a=a, b=b, t=t: ((a * y, b * x) if t else (a * x, b * y))
                for a in (1, -1) for b in (1, -1) for t in (0, 1)]
    cfg = [np.array([m(x, y) for x, y in sites]) for m in maps]
    four, p12, p34 = [], [], []
    idx = np.array(cfg) + N  # (maps, 4, 2) array indices
    for conf in sample_ising(N, critical_beta(), n_samples, "cluster", seed,
                             burn_in=burn_in):
        lab, gl = conf.clusters, conf.boundary_label
        four.append(cluster_products(lab, gl, idx).mean())
        p12.append(cluster_products(lab, gl, idx[:, :2]).mean())
        p34.append(cluster_products(lab, gl, idx[:, 2:]).mean())
    four, p12, p34 = map(np.asarray, (four, p12, p34))
    r, se = _ratio_with_se(four, p12, p34)
    return ScalingRatio(r, continuum_ratio(pts), se, n_samples, sites,
                        {"four_point": float(four.mean()),
                         "pair_12": float(p12.mean()),
                         "pair_34": float(p34.mean())})
