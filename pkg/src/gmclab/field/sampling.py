"""Realizations of mollified log-correlated fields on square grids.

Two samplers share one interface (``draw(rng, m)`` returning an array of
shape (m, k, N) for k coupled scales):

* ``ExactSampler`` factorizes the joint covariance matrix at the grid points.
* ``SpectralSampler`` embeds the grid in a torus large enough that the
  truncated kernel does not wrap around; the periodic covariance then agrees
  with the true one on every pair of grid points and the circulant
  eigenvalues come from one FFT of the covariance table.  Tiny negative
  eigenvalues from quadrature round-off are clipped and reported as
  ``cov_error`` (a bound on the entrywise covariance change).

Coupled scales are driven by one white noise: per frequency (spectral) or
through a joint Cholesky factor (exact).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import linalg

from .. import config
from ..errors import NotPSDError, PreconditionError, ResolutionError
from ..rng import stream
from .covariance import radial_table, separable_smoothing
from .kernel import LogKernelSpec, MollifierSpec


@dataclass(frozen=True)
class GridSpec:
    """n x n cell-centred lattice on the square [lo, lo + side]^2."""

    n: int
    lo: tuple = (0.0, 0.0)
    side: float = 1.0

    @property
    def h(self) -> float:
        return self.side / self.n

    @property
    def size(self) -> int:
        return self.n * self.n

    def axis(self, k=0):
        return self.lo[k] + (np.arange(self.n) + 0.5) * self.h

    def points(self):
        gx, gy = np.meshgrid(self.axis(0), self.axis(1), indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True)
class FieldSample:
    """One realization; arrays are flat over grid points (row-major)."""

    points: np.ndarray
    values: np.ndarray
    variance: np.ndarray
    eps: float
    seed: int
    h: float
    cell_weights: np.ndarray
    mode: str = "exact"
    cov_error: float = 0.0
    shape: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a in (self.points, self.values, self.variance, self.cell_weights):
            a.setflags(write=False)

    def as_grid(self):
        return self.values.reshape(self.shape)


def _check_scales(grid, scales):
    for _, e in scales:
        if e <= 0:
            raise PreconditionError("scale eps must be positive")
        if e < 2 * grid.h * (1 - 1e-12):
            raise ResolutionError(
                f"eps={e:g} is below twice the grid spacing h={grid.h:g}")


def psd_factor(cov):
    """Lower Cholesky factor with escalating diagonal jitter."""
    s = config.settings
    jit = 0.0
    ladder = [0.0]
    j = s.psd_jitter_min
    while j <= s.psd_jitter_max * (1 + 1e-9):
        ladder.append(j)
        j *= 10
    eye = np.eye(cov.shape[0])
    for jit in ladder:
        try:
            return linalg.cholesky(cov + jit * eye, lower=True,
                                   check_finite=False), jit
        except linalg.LinAlgError:
            continue
    lam = float(linalg.eigvalsh(cov, subset_by_index=[0, 0])[0])
    raise NotPSDError(lam, jit)


def _offset_table(grid, tab):
    """Covariance as a function of integer offsets (|di|, |dj|)."""
    k = np.arange(grid.n)
    r = grid.h * np.hypot(k[:, None], k[None, :])
    return tab(r)


class ExactSampler:
    """Joint Cholesky sampler for k coupled scales on a small grid."""

    mode = "exact"

    def __init__(self, kernel: LogKernelSpec, grid: GridSpec, scales):
        _check_scales(grid, scales)
        if grid.size * len(scales) > config.settings.exact_max_points:
            raise PreconditionError(
                f"exact mode supports at most "
                f"{config.settings.exact_max_points} points "
                f"(got {grid.size} x {len(scales)} scales)")
        self.kernel, self.grid, self.scales = kernel, grid, list(scales)
        pts = grid.points()
        n = grid.n
        ii, jj = np.divmod(np.arange(grid.size), n)
        di = np.abs(ii[:, None] - ii[None, :])
        dj = np.abs(jj[:, None] - jj[None, :])
        k = len(scales)
        N = grid.size
        cov = np.empty((k * N, k * N))
        for a, (ma, ea) in enumerate(scales):
            for b, (mb, eb) in enumerate(scales[a:], start=a):
                tab = radial_table(ma, ea, mb, eb, kernel.truncated)
                block = _offset_table(grid, tab)[di, dj]
                if kernel.correction == "sphere-green":
                    sa = separable_smoothing(pts, ma, ea)
                    sb = separable_smoothing(pts, mb, eb)
                    block = block + sa[:, None] + sb[None, :]
                block *= kernel.amplitude
                cov[a * N:(a + 1) * N, b * N:(b + 1) * N] = block
                cov[b * N:(b + 1) * N, a * N:(a + 1) * N] = block.T
        self.cov = cov
        self.variance = np.diag(cov).reshape(k, N).copy()
        self.factor, self.jitter = psd_factor(cov)
        self.cov_error = self.jitter

    def draw(self, rng, m):
        k, N = len(self.scales), self.grid.size
        z = rng.standard_normal((m, k * N))
        return (z @ self.factor.T).reshape(m, k, N)


def torus_size(grid: GridSpec, scales) -> int:
    """Torus points per side so that the truncated kernel never wraps."""
    emax = max(e for _, e in scales)
    need = grid.side + 1.0 + 2 * emax
    return sfft.next_fast_len(int(np.ceil(need / grid.h)) + 1, real=False)


class SpectralSampler:
    """Circulant-embedding sampler on a padded torus (stationary kernels)."""

    mode = "spectral"

    def __init__(self, kernel: LogKernelSpec, grid: GridSpec, scales):
        _check_scales(grid, scales)
        if not kernel.stationary:
            raise PreconditionError(
                "spectral mode needs a translation-invariant kernel "
                "(correction 'zero'); use exact mode")
        self.kernel, self.grid, self.scales = kernel, grid, list(scales)
        nt = torus_size(grid, scales)
        self.nt = nt
        idx = np.arange(nt)
        idx = np.minimum(idx, nt - idx)
        r = grid.h * np.hypot(idx[:, None], idx[None, :])
        k = len(scales)
        lam = np.empty((nt, nt, k, k))
        var = np.empty(k)
        for a, (ma, ea) in enumerate(scales):
            for b, (mb, eb) in enumerate(scales[a:], start=a):
                tab = radial_table(ma, ea, mb, eb, kernel.truncated)
                c = kernel.amplitude * tab(r)
                spec = sfft.fft2(c).real
                lam[..., a, b] = spec
                lam[..., b, a] = spec
                if a == b:
                    var[a] = c[0, 0]
        N = nt * nt
        if k == 1:
            w = lam[..., 0, 0]
            neg = np.minimum(w, 0.0)
            self.root = np.sqrt(np.maximum(w, 0.0))[..., None, None]
        else:
            w, v = np.linalg.eigh(lam)
            neg = np.minimum(w, 0.0)
            self.root = v * np.sqrt(np.maximum(w, 0.0))[..., None, :]
        self.cov_error = float(np.abs(neg).sum() / N)
        self.variance = np.repeat(var[:, None], grid.size, axis=1)
        self._scale = 1.0 / np.sqrt(N)

    def draw(self, rng, m):
        k, n, nt = len(self.scales), self.grid.n, self.nt
        npair = (m + 1) // 2
        out = np.empty((2 * npair, k, n * n))
        for p in range(npair):
            wr = rng.standard_normal((nt, nt, k))
            wi = rng.standard_normal((nt, nt, k))
            w = wr + 1j * wi
            if k == 1:
                y = self.root[..., 0, 0] * w[..., 0]
                y = y[..., None]
            else:
                y = np.einsum("xyab,xyb->xya", self.root, w)
            f = sfft.fft2(y, axes=(0, 1)) * self._scale
            f = f[:n, :n, :]
            out[2 * p] = f.real.reshape(n * n, k).T
            out[2 * p + 1] = f.imag.reshape(n * n, k).T
        return out[:m]


def make_sampler(kernel, grid, scales, mode="auto"):
    if mode == "auto":
        mode = ("exact" if grid.size * len(scales)
                <= config.settings.exact_max_points else "spectral")
    if mode == "exact":
        return ExactSampler(kernel, grid, scales)
    if mode == "spectral":
        return SpectralSampler(kernel, grid, scales)
    raise PreconditionError(f"unknown sampling mode {mode!r}")


def _to_samples(sampler, vals, seed):
    grid = sampler.grid
    out = []
    for a, (_, e) in enumerate(sampler.scales):
        out.append(FieldSample(
            points=grid.points(), values=vals[a].copy(),
            variance=sampler.variance[a].copy(), eps=e, seed=seed,
            h=grid.h, cell_weights=np.full(grid.size, grid.h**2),
            mode=sampler.mode, cov_error=sampler.cov_error,
            shape=(grid.n, grid.n)))
    return out


def sample_log_field(kernel: LogKernelSpec, moll: MollifierSpec,
                     grid: GridSpec, eps: float, seed: int,
                     mode: str = "auto") -> FieldSample:
    """One realization of X_eps on ``grid``."""
    sampler = make_sampler(kernel, grid, [(moll, eps)], mode)
    vals = sampler.draw(stream(seed, "field"), 1)[0]
    return _to_samples(sampler, vals, seed)[0]


def sample_coupled(kernel: LogKernelSpec, scales, grid: GridSpec, seed: int,
                   mode: str = "auto") -> list[FieldSample]:
    """Fields at several (mollifier, eps) pairs from one white noise."""
    sampler = make_sampler(kernel, grid, scales, mode)
    vals = sampler.draw(stream(seed, "field"), 1)[0]
    return _to_samples(sampler, vals, seed)
