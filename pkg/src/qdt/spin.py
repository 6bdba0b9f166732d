"""Collective spin operators for N two-level atoms.

Matrices act on the fixed-N subspace in the number basis of level a, i.e.
basis index k = n_a runs 0..N and the pseudo-spin projection is
m_z = k - N/2 (spin j = N/2).
"""

from __future__ import annotations

import numpy as np


def ladder_weights(n_total: int) -> np.ndarray:
    """Off-diagonal weights <k+1| J_+ |k> = sqrt((k+1)(N-k))."""
    k = np.arange(n_total)
    return np.sqrt((k + 1.0) * (n_total - k))


def jx_matrix(n_total: int) -> np.ndarray:
    """J_x = (a†b + b†a)/2, real symmetric tridiagonal."""
    w = ladder_weights(n_total) / 2.0
    return np.diag(w, 1) + np.diag(w, -1)


def jy_matrix(n_total: int) -> np.ndarray:
    """J_y = (a†b - b†a)/(2i), complex Hermitian tridiagonal."""
    w = ladder_weights(n_total) / 2.0
    return np.diag(1j * w, 1) + np.diag(-1j * w, -1)


def jz_values(n_total: int) -> np.ndarray:
    """Diagonal of J_z: m_z = n_a - N/2."""
    return np.arange(n_total + 1) - n_total / 2.0
