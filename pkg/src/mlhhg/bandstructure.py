"""Plane-wave solution of the 1D Mathieu solid.

The Hamiltonian at crystal momentum k0 is written on reciprocal vectors
G_m = 2 pi m / a0, m in [-M, M].  The cosine potential only couples
neighbouring G, so the matrix is real symmetric tridiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import InsufficientDataError, InvalidParameterError, NumericError
from .model import MultiLevelSystem, PeriodicPotential

DEFAULT_PLANE_WAVES = 64
DEFAULT_K_POINTS = 513


@dataclass(frozen=True, eq=False)
class BlochSolution:
    k0: float
    energies: np.ndarray
    # columns are bands, rows follow ``G``
    coefficients: np.ndarray
    G: np.ndarray

    @property
    def n_bands(self):
        return self.energies.size


def plane_wave_hamiltonian(potential, k0, M):
    """Diagonal and off-diagonal of the (2M+1)-square plane-wave Hamiltonian."""
    G = potential.reciprocal * np.arange(-M, M + 1)
    diag = 0.5 * (k0 + G) ** 2 - potential.V0
    off = np.full(2 * M, -0.5 * potential.V0)
    return G, diag, off


def _fix_signs(vectors):
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def solve_bloch(potential, k0, n_bands, M=DEFAULT_PLANE_WAVES):
    if n_bands < 1:
        raise InvalidParameterError("n_bands must be >= 1")
    if 2 * M + 1 < 3 * n_bands:
        raise InvalidParameterError(
            f"M={M} gives {2 * M + 1} plane waves; need at least {3 * n_bands} for {n_bands} bands"
        )
    G, diag, off = plane_wave_hamiltonian(potential, k0, M)
    try:
        energies, vectors = eigh_tridiagonal(
            diag, off, select="i", select_range=(0, n_bands - 1)
        )
    except np.linalg.LinAlgError as exc:
        full = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        raise NumericError(
            f"plane-wave eigensolver failed at k0={k0}: {exc}; "
            f"matrix condition number {np.linalg.cond(full):.3e}"
        ) from exc
    return BlochSolution(float(k0), energies, _fix_signs(vectors), G)


def momentum_matrix(solution):
    """Momentum couplings <n|p|n'> between the retained bands.

    Eigenvectors are real, so the matrix is real symmetric.  At k0 = 0 the
    diagonal vanishes by parity and is set to exactly zero.
    """
    c = solution.coefficients
    p = c.T @ ((solution.k0 + solution.G)[:, None] * c)
    p = 0.5 * (p + p.T)
    if solution.k0 == 0.0:
        np.fill_diagonal(p, 0.0)
    return p


def system_from_bands(potential, n_levels, k0=0.0, skip=0, M=DEFAULT_PLANE_WAVES):
    """Multi-level system built from the Bloch states at ``k0``.

    ``skip`` drops that many lowest bands (the four-level model drops one).
    """
    sol = solve_bloch(potential, k0, n_levels + skip, M)
    p = momentum_matrix(sol)[skip:, skip:]
    return MultiLevelSystem(
        sol.energies[skip:], p, label=f"mathieu-{n_levels}", k0=float(k0)
    )


@dataclass(frozen=True, eq=False)
class BandStructure:
    k: np.ndarray
    # shape (n_k, n_bands)
    energies: np.ndarray
    potential: PeriodicPotential
    M: int = DEFAULT_PLANE_WAVES
    # shape (n_k, n_bands, n_bands) when requested
    couplings: np.ndarray | None = None

    @property
    def n_bands(self):
        return self.energies.shape[1]

    def fold(self, k):
        """Map crystal momentum into [-pi/a0, pi/a0)."""
        b = self.potential.reciprocal
        return (np.asarray(k, dtype=float) + b / 2) % b - b / 2

    def at(self, k, bands=None):
        """Band energies at arbitrary crystal momenta, solved directly."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        n = self.n_bands if bands is None else bands
        out = np.empty((k.size, n))
        for i, kk in enumerate(k):
            out[i] = solve_bloch(self.potential, kk, n, self.M).energies
        return out

    def gap(self, valence=0, conduction=1):
        return self.energies[:, conduction] - self.energies[:, valence]


def band_structure(potential, n_k=DEFAULT_K_POINTS, n_bands=5, M=DEFAULT_PLANE_WAVES,
                   couplings=False):
    """Bands on a uniform grid spanning the first Brillouin zone, edges included."""
    if n_k < 2:
        raise InvalidParameterError("n_k must be >= 2")
    edge = potential.zone_edge
    k = np.linspace(-edge, edge, n_k)
    energies = np.empty((n_k, n_bands))
    mats = np.empty((n_k, n_bands, n_bands)) if couplings else None
    # solve one half and mirror: the bands are even in k and this makes the
    # symmetry exact on the grid
    for i in range(n_k // 2, n_k):
        sol = solve_bloch(potential, k[i], n_bands, M)
        energies[i] = sol.energies
        energies[n_k - 1 - i] = sol.energies
        if couplings:
            mats[i] = momentum_matrix(sol)
            mirror = solve_bloch(potential, k[n_k - 1 - i], n_bands, M)
            mats[n_k - 1 - i] = momentum_matrix(mirror)
    return BandStructure(k, energies, potential, M, mats)


def quadratic_gap_fit(bands, valence=0, conduction=1, window=None, full_output=False):
    """Fit gap(k) ~ E_g + (a/2) k^2 near the zone centre.

    ``window`` defaults to 0.1 pi / a0.  Returns ``(E_g, a)``; with
    ``full_output`` the RMS fit residual is appended.
    """
    if bands.n_bands < 2 or max(valence, conduction) >= bands.n_bands:
        raise InsufficientDataError("need at least two bands for a gap fit")
    if window is None:
        window = 0.1 * bands.potential.zone_edge
    gap = bands.gap(valence, conduction)
    sel = np.abs(bands.k) <= window * (1 + 1e-12)
    if np.count_nonzero(sel) < 5:
        raise InsufficientDataError(
            f"only {np.count_nonzero(sel)} k points with |k| <= {window:.4g}; need 5"
        )
    k = bands.k[sel]
    design = np.column_stack([np.ones_like(k), 0.5 * k**2])
    coef, *_ = np.linalg.lstsq(design, gap[sel], rcond=None)
    residual = float(np.sqrt(np.mean((design @ coef - gap[sel]) ** 2)))
    i0 = np.argmin(np.abs(bands.k))
    if abs(bands.k[i0]) < 1e-14:
        E_g = float(gap[i0])
    else:
        E_g = float(coef[0])
    a = float(coef[1])
    if full_output:
        return E_g, a, residual
    return E_g, a


def smooth_gauge_couplings(potential, k, n_bands, M=DEFAULT_PLANE_WAVES):
    """Band energies and momentum matrices along an ordered k path.

    Eigenvector signs are chosen so each state overlaps positively with its
    predecessor on the path, so off-diagonal couplings vary smoothly in k
    instead of flipping sign with the solver's arbitrary phase.
    Returns ``(energies, couplings)`` of shapes (n_k, n_bands) and
    (n_k, n_bands, n_bands).
    """
    k = np.asarray(k, dtype=float)
    energies = np.empty((k.size, n_bands))
    mats = np.empty((k.size, n_bands, n_bands))
    prev = None
    for i, kk in enumerate(k):
        sol = solve_bloch(potential, kk, n_bands, M)
        c = sol.coefficients
        if prev is not None:
            signs = np.sign(np.sum(prev * c, axis=0))
            signs[signs == 0] = 1.0
            c = c * signs
        prev = c
        energies[i] = sol.energies
        p = c.T @ ((kk + sol.G)[:, None] * c)
        mats[i] = 0.5 * (p + p.T)
    return energies, mats
