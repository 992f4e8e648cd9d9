"""Round sphere in stereographic coordinates: quadrature grid, Green
function and the zero-mean Gaussian free field.

The grid uses two charts: a uniform cell-centred lattice on the disk
|z| <= R, and the same construction in the inverted coordinate w = 1/conj(z)
on |w| <= 1/R.  The round metric g(z)|dz|^2, g = 4/(1+|z|^2)^2, is invariant
under the inversion, so both charts carry identical formulas.  Each node
stores the volume of its cell (integral of g over the cell, by sub-cell
sampling), its chart coordinate, and its point on the unit sphere; chordal
distances are computed from the latter, which keeps the far chart stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import integrate

from .. import config
from ..errors import PreconditionError, ResolutionError
from ..rng import stream
from .sampling import FieldSample, psd_factor


def round_density(z):
    """g(z) = 4 / (1 + |z|^2)^2."""
    return 4.0 / (1.0 + np.abs(z) ** 2) ** 2


def to_sphere(z):
    """Inverse stereographic projection onto the unit sphere in R^3."""
    z = np.asarray(z, dtype=complex)
    r2 = np.abs(z) ** 2
    return np.stack([2 * z.real, 2 * z.imag, r2 - 1.0], -1) / (1 + r2)[..., None]


def chord_half(z, w):
    """|z - w| / sqrt((1+|z|^2)(1+|w|^2)), half the unit-sphere chord."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    return np.abs(z - w) / np.sqrt((1 + np.abs(z) ** 2) * (1 + np.abs(w) ** 2))


def geodesic_distance(z, w):
    return 2 * np.arcsin(np.minimum(chord_half(z, w), 1.0))


def green_sphere(z, zp):
    """ln[(1+|z|^2)^{1/2} (1+|z'|^2)^{1/2} / |z - z'|]."""
    z = np.asarray(z, dtype=complex)
    zp = np.asarray(zp, dtype=complex)
    if np.any(z == zp):
        raise PreconditionError("green_sphere is singular at coincident points")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(zp))):
        raise PreconditionError("green_sphere needs finite points")
    val = -np.log(chord_half(z, zp))
    return float(val) if val.ndim == 0 else val


# int G(z, .) g = 2 pi for the closed form above, whatever z; subtracting
# 2 pi / 4 pi gives the Green function with vanishing mean
GREEN_MEAN = 0.5


def green_sphere_centered(z, zp):
    """The vanishing-mean Green function: green_sphere - 1/2."""
    return green_sphere(z, zp) - GREEN_MEAN


@lru_cache(maxsize=1)
def square_log_mean() -> float:
    """E ln|U - V| for U, V uniform on the unit square (about -0.80509)."""
    def dens(r):
        if r <= 1:
            return 2 * r * (np.pi - 4 * r + r * r)
        return 2 * r * (4 * np.sqrt(r * r - 1) - (r * r + 2 - np.pi)
                        - 4 * np.arccos(1 / r))
    a = integrate.quad(lambda r: np.log(r) * dens(r), 0, 1, epsabs=1e-14)[0]
    b = integrate.quad(lambda r: np.log(r) * dens(r), 1, np.sqrt(2),
                       epsabs=1e-14)[0]
    return a + b


def _chart_cells(h, radius, sub):
    """Cells of a cell-centred lattice meeting the disk |u| <= radius.

    Returns node coordinates, g-volume, coverage fraction; cells covering
    less than half their area are merged into the nearest kept cell.
    """
    n = int(np.ceil(radius / h))
    c = (np.arange(-n, n) + 0.5) * h
    cx, cy = np.meshgrid(c, c, indexing="ij")
    centres = (cx + 1j * cy).ravel()
    off = ((np.arange(sub) + 0.5) / sub - 0.5) * h
    ox, oy = np.meshgrid(off, off, indexing="ij")
    offs = (ox + 1j * oy).ravel()
    pts = centres[:, None] + offs[None, :]
    inside = np.abs(pts) <= radius
    gv = round_density(pts) * inside
    cover = inside.mean(axis=1)
    vol = gv.mean(axis=1) * h * h
    keep_any = cover > 0
    centres, pts, gv, cover, vol = (a[keep_any] for a in
                                    (centres, pts, gv, cover, vol))
    node = (gv * pts).sum(axis=1) / gv.sum(axis=1)
    node = np.where(cover >= 1.0, centres, node)
    kept = cover >= 0.5
    vol_k = vol[kept].copy()
    kn = node[kept]
    for i in np.flatnonzero(~kept):
        j = np.argmin(np.abs(kn - node[i]))
        vol_k[j] += vol[i]
    return kn, vol_k, cover[kept]


@dataclass(frozen=True)
class SphereGrid:
    """Two-chart quadrature grid of the round sphere.

    ``h`` is the lattice spacing on the inner chart |z| <= radius; the outer
    chart uses spacing h / radius^2 in w = 1/conj(z), which matches cell
    sizes along the seam.
    """

    h: float = 1 / 24
    radius: float = 1.0
    sub: int = 16

    def __post_init__(self):
        if self.h <= 0 or self.radius <= 0:
            raise PreconditionError("grid spacing and radius must be positive")

    @cached_property
    def _cells(self):
        z1, v1, c1 = _chart_cells(self.h, self.radius, self.sub)
        hw = self.h / self.radius**2
        w2, v2, c2 = _chart_cells(hw, 1.0 / self.radius, self.sub)
        chart = np.r_[np.zeros(z1.size, int), np.ones(w2.size, int)]
        local = np.r_[z1, w2]
        side = np.r_[self.h * np.sqrt(c1), hw * np.sqrt(c2)]
        return local, chart, np.r_[v1, v2], side

    @property
    def size(self) -> int:
        return self._cells[0].size

    @cached_property
    def z(self):
        """Stereographic coordinate of each node (finite; large on chart 1)."""
        local, chart, _, _ = self._cells
        out = local.copy()
        out[chart == 1] = 1.0 / np.conj(local[chart == 1])
        return out

    @property
    def local(self):
        """Coordinate in the node's own chart."""
        return self._cells[0]

    @property
    def chart(self):
        return self._cells[1]

    @property
    def weights(self):
        """Round-volume quadrature weight of each cell."""
        return self._cells[2]

    @property
    def cell_side(self):
        """Side of the equal-area square cell in the node's own chart."""
        return self._cells[3]

    @cached_property
    def xyz(self):
        return to_sphere(self.z)

    @property
    def total_volume(self) -> float:
        return float(self.weights.sum())

    def nearest(self, z) -> int:
        """Index of the node closest (in sphere chord) to ``z``."""
        p = to_sphere(np.asarray(z, dtype=complex))
        return int(np.argmin(np.sum((self.xyz - p) ** 2, axis=1)))

    def local_spacing(self, idx):
        """Cell side expressed in the z coordinate at node ``idx``."""
        s = self.cell_side[idx]
        zc = self.z[idx]
        if np.ndim(idx) == 0:
            return s if self.chart[idx] == 0 else s * abs(zc) ** 2
        return np.where(self.chart[idx] == 0, s, s * np.abs(zc) ** 2)


def green_integral(grid: SphereGrid, z0, centered=True, refine=8):
    """Quadrature of G(z0, .) against the round volume over the grid's two
    chart disks, each lattice cell split into refine x refine sub-cells."""
    z0 = complex(z0)
    total = 0.0
    for k, (h, rad) in enumerate([(grid.h, grid.radius),
                                  (grid.h / grid.radius**2, 1 / grid.radius)]):
        u, vol, _ = _chart_cells(h / refine, rad, 4)
        z = u if k == 0 else 1.0 / np.conj(u)
        ok = z != z0
        total += float(-np.log(chord_half(z0, z[ok])) @ vol[ok])
    if centered:
        total -= GREEN_MEAN * 4 * np.pi
    return total


def green_matrix(grid: SphereGrid):
    """G_g at node pairs; the diagonal is the cell self-average
    ln(1/side) - E ln|U-V| + 2 a(u) in the node's own chart."""
    p = grid.xyz
    d2 = np.maximum(2.0 - 2.0 * (p @ p.T), 0.0)
    np.fill_diagonal(d2, 1.0)
    G = -0.5 * np.log(d2 / 4.0)
    loc = grid.local
    diag = (-np.log(grid.cell_side) - square_log_mean()
            + np.log1p(np.abs(loc) ** 2))
    np.fill_diagonal(G, diag)
    return G


@lru_cache(maxsize=4)
def _gff_factor(grid: SphereGrid, shift: float = 1.0):
    if grid.size > config.settings.exact_max_points:
        raise PreconditionError(
            f"sphere GFF needs at most {config.settings.exact_max_points} "
            f"points for exact factorization (grid has {grid.size})")
    G = green_matrix(grid)
    w = grid.weights
    W = w.sum()
    Gw = G @ w
    var = np.diag(G) - 2 * Gw / W + (w @ Gw) / W**2
    # a common N(0, shift) offset is removed exactly by the projection and
    # keeps the factorization away from the near-null constant direction
    L, jit = psd_factor(G + shift)
    return G, L, var, jit


def project_mean_zero(values, weights):
    """Subtract the weighted mean along the last axis."""
    values = np.asarray(values, dtype=float)
    return values - (values @ weights)[..., None] / weights.sum()


class SphereGffSampler:
    """Batches of zero-mean GFF realizations on a SphereGrid."""

    def __init__(self, grid: SphereGrid):
        self.grid = grid
        self.green, self.factor, self.variance, self.jitter = _gff_factor(grid)

    def draw(self, rng, m):
        z = rng.standard_normal((m, self.grid.size))
        return project_mean_zero(z @ self.factor.T, self.grid.weights)


def sample_sphere_gff(grid: SphereGrid | None = None, seed: int = 0,
                      sampler: SphereGffSampler | None = None) -> FieldSample:
    """One zero-mean GFF realization with covariance G_g at the nodes."""
    grid = grid or SphereGrid(h=config.settings.grid_resolution)
    sampler = sampler or SphereGffSampler(grid)
    vals = sampler.draw(stream(seed, "sphere-gff"), 1)[0]
    pts = np.stack([grid.z.real, grid.z.imag], 1)
    return FieldSample(points=pts, values=vals,
                       variance=sampler.variance.copy(), eps=0.0, seed=seed,
                       h=grid.h, cell_weights=grid.weights.copy(),
                       mode="sphere", cov_error=sampler.jitter,
                       shape=(grid.size,), meta={"grid": grid})


def ball_mask(sample: FieldSample, x, r, metric="auto"):
    """Grid points within distance r of x; ``metric`` is "euclidean"
    (chart coordinates) or "round" (geodesic, sphere fields only)."""
    grid = sample.meta.get("grid") if sample.meta else None
    if metric == "auto":
        metric = "round" if grid is not None else "euclidean"
    if metric == "round":
        if grid is None:
            raise PreconditionError("round metric needs a sphere field")
        d = geodesic_distance(grid.z, complex(x[0], x[1])
                              if np.ndim(x) else complex(x))
    elif metric == "euclidean":
        xx = np.asarray([np.real(x), np.imag(x)] if np.ndim(x) == 0 else x,
                        dtype=float)
        d = np.linalg.norm(sample.points - xx, axis=1)
    else:
        raise PreconditionError(f"unknown metric {metric!r}")
    return d <= r


def ball_average(sample: FieldSample, x, r, metric="auto", values=None):
    """Cell-weighted mean of the field over the ball B(x, r).

    ``values`` may hold a batch (m, N) of realizations sharing the grid.
    """
    if r < 2 * sample.h * (1 - 1e-12):
        raise ResolutionError(f"radius {r:g} below twice the spacing {sample.h:g}")
    m = ball_mask(sample, x, r, metric)
    if not np.any(m):
        raise ResolutionError(f"ball of radius {r:g} contains no grid point")
    w = sample.cell_weights[m]
    v = sample.values if values is None else np.asarray(values)
    return (v[..., m] @ w) / w.sum()
