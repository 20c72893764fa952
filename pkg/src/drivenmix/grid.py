"""Sine-basis spectral machinery for hard-wall grids.

The box eigenmodes u_k(x_j) = sqrt(2/(n+1)) sin(pi*k*j/(n+1)) diagonalize the
kinetic operator under hard-wall boundaries; the orthonormal type-I discrete
sine transform maps node values to mode amplitudes and is its own inverse.
Kinetic energies are the continuum box values hbar^2 (pi k / L)^2 / (2 M),
so smooth states are differentiated with spectral accuracy.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dst
from scipy.linalg import eigh

from .model import HBAR, GridSpec


def sine_transform(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Orthonormal DST-I along one axis (involutory: applying twice is identity)."""
    return dst(values, type=1, axis=axis, norm="ortho")


def kinetic_eigenvalues(grid: GridSpec, mass: float) -> np.ndarray:
    """Kinetic energy of each sine mode k = 1..n."""
    k = np.arange(1, grid.n + 1)
    return (HBAR * np.pi * k) ** 2 / (2.0 * mass * grid.length**2)


def apply_kinetic(grid: GridSpec, mass: float, values: np.ndarray,
                  axis: int = -1) -> np.ndarray:
    """T acting on node values along one axis."""
    lam = kinetic_eigenvalues(grid, mass)
    shape = [1] * values.ndim
    shape[axis] = grid.n
    return sine_transform(lam.reshape(shape) * sine_transform(values, axis), axis)


def kinetic_matrix(grid: GridSpec, mass: float) -> np.ndarray:
    """Dense kinetic operator on node values (for one-body eigenproblems)."""
    j = np.arange(1, grid.n + 1)
    u = np.sqrt(2.0 / (grid.n + 1)) * np.sin(np.pi * np.outer(j, j) / (grid.n + 1))
    return (u * kinetic_eigenvalues(grid, mass)) @ u


def single_particle_states(grid: GridSpec, mass: float,
                           potential: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of T + diag(potential) on the grid.

    Eigenvectors are returned as columns normalized to sum(|phi|^2)*dx = 1,
    with a deterministic sign (largest-magnitude node positive).
    """
    h = kinetic_matrix(grid, mass) + np.diag(potential)
    energies, vecs = eigh(h)
    vecs = vecs / np.sqrt(grid.dx)
    peak = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[peak, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return energies, vecs * signs


def norm_squared(grid: GridSpec, values: np.ndarray) -> float:
    """L2 norm squared with the grid measure, for 1D or 2D node arrays."""
    return float(np.sum(np.abs(values) ** 2) * grid.dx**values.ndim)
