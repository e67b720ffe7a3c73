"""Fractional Brownian motion on uniform grids.

Covariance function, reproducible seeding, and exact-in-law sampling via
circulant embedding of the increment (fractional Gaussian noise) covariance,
with a dense Cholesky fallback when the embedding fails.  Two-sided grids are
generated as one stationary increment sequence over the whole window and
re-anchored so the path vanishes at t = 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid",
    "FbmPath",
    "Seed",
    "fbm_cov",
    "fgn_autocov",
    "generate_fbm",
    "generate_fgn_matrix",
    "write_path_csv",
]

# Eigenvalues of the circulant embedding more negative than this (relative to
# the largest) trigger the Cholesky fallback; small negative values are
# clipped to zero.
_EMBED_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform time grid t_k = t_start + k * dt, k = 0 .. n_points - 1."""

    t_start: float
    dt: float
    n_points: int

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_points < 2:
            raise ValueError(f"need at least 2 grid points, got {self.n_points}")

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_points)

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt * (self.n_points - 1)

    def index_of_zero(self) -> int:
        """Index k with t_k = 0, required for anchoring.  Raises if absent."""
        k = round(-self.t_start / self.dt)
        if k < 0 or k >= self.n_points or abs(self.t_start + k * self.dt) > 1e-9 * self.dt:
            raise ValueError("grid does not contain t = 0")
        return int(k)

    @staticmethod
    def from_interval(t_start: float, t_end: float, dt: float) -> "Grid":
        n = round((t_end - t_start) / dt)
        if abs(t_start + n * dt - t_end) > 1e-9 * dt:
            raise ValueError(f"[{t_start}, {t_end}] is not a whole number of dt={dt} steps")
        return Grid(t_start, dt, n + 1)


@dataclass(frozen=True)
class FbmPath:
    """Sampled fBM: value 0 at t = 0 exactly, finite everywhere."""

    grid: Grid
    values: np.ndarray
    hurst: float

    def __post_init__(self) -> None:
        if len(self.values) != self.grid.n_points:
            raise ValueError("values length does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite fBM values")

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


@dataclass(frozen=True)
class Seed:
    """Reproducible stream seed: (master, stream) -> generator, purely."""

    master: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "Seed":
        return Seed(self.master, stream)


def fbm_cov(s: float, t: float, H: float) -> float:
    """Two-sided fBM covariance (|s|^{2H} + |t|^{2H} - |s-t|^{2H}) / 2."""
    if not 0.0 < H < 1.0:
        raise ValueError(f"H={H} outside (0, 1)")
    two_h = 2.0 * H
    return 0.5 * (abs(s) ** two_h + abs(t) ** two_h - abs(s - t) ** two_h)


def fgn_autocov(lags: np.ndarray, dt: float, H: float) -> np.ndarray:
    """Autocovariance of fGn increments over step dt at integer lags."""
    k = np.abs(np.asarray(lags, dtype=float))
    two_h = 2.0 * H
    return 0.5 * dt**two_h * ((k + 1.0) ** two_h - 2.0 * k**two_h + np.abs(k - 1.0) ** two_h)


def _circulant_sqrt_eigs(n_incr: int, dt: float, H: float) -> np.ndarray | None:
    """sqrt eigenvalues (rfft layout) of the 2^p-padded circulant embedding
    of the fGn covariance, or None if the embedding is not PSD within
    tolerance."""
    m = 1
    while m < 2 * n_incr:
        m *= 2
    row = np.zeros(m)
    g = fgn_autocov(np.arange(n_incr + 1), dt, H)
    row[: n_incr + 1] = g
    row[m - n_incr + 1 :] = g[1:n_incr][::-1]
    lam = np.fft.rfft(row).real
    if lam.min() < -_EMBED_TOL * lam.max():
        return None
    return np.sqrt(np.clip(lam, 0.0, None))


def _fgn_circulant(n_incr: int, dt: float, H: float, n_paths: int,
                   rng: np.random.Generator) -> np.ndarray | None:
    """fGn sample matrix (n_paths, n_incr) by circulant embedding, or None."""
    sqrt_lam = _circulant_sqrt_eigs(n_incr, dt, H)
    if sqrt_lam is None:
        return None
    m = 2 * (len(sqrt_lam) - 1)
    noise = np.empty((n_paths, len(sqrt_lam)), dtype=np.complex128)
    noise[:, 0] = rng.standard_normal(n_paths)
    noise[:, -1] = rng.standard_normal(n_paths)
    interior = len(sqrt_lam) - 2
    noise[:, 1:-1] = (
        rng.standard_normal((n_paths, interior))
        + 1j * rng.standard_normal((n_paths, interior))
    ) / np.sqrt(2.0)
    spec = noise * (sqrt_lam * np.sqrt(m))
    return np.fft.irfft(spec, n=m, axis=1)[:, :n_incr]


def _fgn_cholesky(n_incr: int, dt: float, H: float, n_paths: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Dense Cholesky fallback on the increment covariance."""
    lags = np.arange(n_incr)
    cov = fgn_autocov(np.abs(lags[:, None] - lags[None, :]), dt, H)
    try:
        chol = np.linalg.cholesky(cov + 1e-14 * dt ** (2 * H) * np.eye(n_incr))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("fGn generation failed: covariance not PSD") from exc
    return rng.standard_normal((n_paths, n_incr)) @ chol.T


def generate_fgn_matrix(n_incr: int, dt: float, H: float, seed: Seed,
                        n_paths: int = 1) -> np.ndarray:
    """Batch of fGn increment rows, shape (n_paths, n_incr), exact in law.

    Circulant embedding by default, dense Cholesky if the embedding has
    eigenvalues negative beyond tolerance (does not happen for fGn on these
    grids, but the guard is kept).
    """
    if not 0.0 < H < 1.0:
        raise ValueError(f"H={H} outside (0, 1)")
    if n_incr < 1:
        raise ValueError("need at least one increment")
    rng = seed.generator()
    out = _fgn_circulant(n_incr, dt, H, n_paths, rng)
    if out is None:
        out = _fgn_cholesky(n_incr, dt, H, n_paths, rng)
    return out


def generate_fbm(grid: Grid, H: float, seed: Seed) -> FbmPath:
    """Sample one fBM path on the grid, anchored to 0 at t = 0.

    The stationary increment sequence is generated over the whole grid
    (two-sided grids included), cumulated, and shifted so the value at the
    t = 0 grid point is exactly zero.  Pure function of (grid, H, seed).
    """
    k0 = grid.index_of_zero()
    incr = generate_fgn_matrix(grid.n_points - 1, grid.dt, H, seed, 1)[0]
    values = np.concatenate([[0.0], np.cumsum(incr)])
    values -= values[k0]
    return FbmPath(grid=grid, values=values, hurst=H)


def write_path_csv(path, times: np.ndarray, values: np.ndarray,
                   header: tuple[str, str] = ("t", "value")) -> None:
    """Write a sampled path as CSV with the given two-column header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, v in zip(times, values):
            writer.writerow([f"{t:.10g}", f"{v:.17g}"])
