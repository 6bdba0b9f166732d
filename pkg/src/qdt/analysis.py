"""Physical characterization of a reconstructed detector: measurement
operators, phase-space (Wigner) functions, count-offset statistics, and the
information content of the counting measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .core import NORM_TOL, DetectorMatrix, DiagonalState
from .rabi import RabiParams, binomial_mixture, binomial_mixture_dp, transfer_prob

US = 1e-6
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class PovmSet:
    """Diagonal measurement operators; row n of the response matrix is the
    Fock-basis diagonal of the outcome-n operator."""

    elements: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.elements, dtype=float)
        if arr.ndim != 2:
            raise ValueError("elements must form a 2-d array (outcome, diagonal)")
        if arr.min() < -NORM_TOL or arr.max() > 1.0 + NORM_TOL:
            raise ValueError("operator diagonals must lie in [0, 1]")
        completeness = arr.sum(axis=0)
        if np.any(np.abs(completeness - 1.0) > NORM_TOL):
            raise ValueError("operators do not resolve the identity")
        arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)

    def __len__(self) -> int:
        return self.elements.shape[0]

    def element(self, n: int) -> np.ndarray:
        return self.elements[n]


@dataclass(frozen=True)
class WignerGrid:
    """Phase-space samples W(x, p) of one measurement operator."""

    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray
    n: int

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("Wigner grid contains non-finite values")
        bound = 1.0 / np.pi + 1e-9
        if np.abs(vals).max() > bound:
            raise ValueError("Wigner values exceed the Fock-mixture bound 1/pi")


@dataclass(frozen=True)
class ResolutionStats:
    """Distribution of detected-minus-arrived counts and derived figures."""

    offsets: np.ndarray
    offset_dist: np.ndarray
    diagonal_mass: float
    sigma: float


def povm_from_matrix(v: DetectorMatrix) -> PovmSet:
    """Measurement operators of the detector; completeness is inherited from
    column stochasticity."""
    return PovmSet(v.v.copy())


def default_phase_grid(half_width: float = 6.0, points: int = 241) -> np.ndarray:
    return np.linspace(-half_width, half_width, points)


def fock_wigner_sum(weights: np.ndarray, r_sq: np.ndarray) -> np.ndarray:
    """sum_m w_m (-1)^m exp(-r^2) L_m(2 r^2) / pi via the stable three-term
    Laguerre recurrence."""
    z = 2.0 * r_sq
    total = np.full_like(z, float(weights[0]))
    if weights.size > 1:
        l_prev = np.ones_like(z)
        l_cur = 1.0 - z
        total = total + weights[1] * (-1.0) * l_cur
        for m in range(1, weights.size - 1):
            l_next = ((2 * m + 1 - z) * l_cur - m * l_prev) / (m + 1)
            l_prev, l_cur = l_cur, l_next
            total = total + weights[m + 1] * ((-1.0) ** (m + 1)) * l_cur
    return total * np.exp(-r_sq) / np.pi


def wigner(povm: PovmSet, n: int, x_axis: np.ndarray, p_axis: np.ndarray) -> WignerGrid:
    """Wigner function of the outcome-n operator on the given grid."""
    if not 0 <= n < len(povm):
        raise ValueError(f"outcome {n} outside 0..{len(povm) - 1}")
    x = np.asarray(x_axis, dtype=float)
    p = np.asarray(p_axis, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise ValueError("phase-space axes must be finite")
    r_sq = x[:, None] ** 2 + p[None, :] ** 2
    values = fock_wigner_sum(povm.element(n), r_sq)
    return WignerGrid(x_axis=x, p_axis=p, values=values, n=n)


def wigner_negativity(grid: WignerGrid) -> float:
    """Most negative grid value; below zero certifies a nonclassical operator."""
    return float(grid.values.min())


def arrival_weights(rho: DiagonalState, params: RabiParams, times_us: np.ndarray, size: int) -> np.ndarray:
    """Normalized probability that m particles reach the detector, summed
    over the measurement times."""
    total = np.zeros(size)
    for t in np.asarray(times_us, dtype=float):
        dist = binomial_mixture(rho.rho, transfer_prob(params, t * US))
        total[: dist.size] += dist[:size]
    return total / total.sum()


def _gauss(k: np.ndarray, amp: float, sigma: float) -> np.ndarray:
    return amp * np.exp(-(k**2) / (2.0 * sigma**2))


def resolution_stats(
    v: DetectorMatrix,
    rho: DiagonalState,
    params: RabiParams,
    times_us: np.ndarray,
) -> ResolutionStats:
    """Offset distribution P(n - m), its diagonal weight, and the detection
    sensitivity from a Gaussian fit to the loss-free side (k <= 0)."""
    dim = v.n_max + 1
    if rho.n_max + 1 > dim and rho.rho[dim:].sum() > 1e-12:
        raise ValueError("state support exceeds detector range")
    weights = arrival_weights(rho, params, times_us, dim)
    offsets = np.arange(-(dim - 1), dim)
    dist = np.zeros(offsets.size)
    # P(k) = sum_m V[m+k, m] * weights[m]
    for i, k in enumerate(offsets):
        m_lo = max(0, -k)
        m_hi = min(dim, dim - k)
        m_idx = np.arange(m_lo, m_hi)
        dist[i] = float(v.v[m_idx + k, m_idx] @ weights[m_idx])
    dist = dist / dist.sum()
    diagonal_mass = float(dist[offsets == 0][0])

    fit_ks = np.array([0, -1, -2, -3])
    fit_ks = fit_ks[fit_ks > -dim]
    fit_vals = np.array([dist[offsets == k][0] for k in fit_ks])
    if fit_vals.size < 2 or fit_vals[1] < PROB_FLOOR:
        sigma = 0.0
    else:
        popt, _ = curve_fit(
            _gauss, fit_ks.astype(float), fit_vals, p0=[max(fit_vals[0], PROB_FLOOR), 0.5]
        )
        sigma = float(abs(popt[1]))
    return ResolutionStats(
        offsets=offsets, offset_dist=dist, diagonal_mass=diagonal_mass, sigma=sigma
    )


def assignment_fidelity(v: DetectorMatrix, m: int) -> float:
    """Probability of reading out exactly m counts when m particles arrive."""
    if not 0 <= m <= v.n_max:
        raise ValueError(f"arrival count {m} outside detector range 0..{v.n_max}")
    return float(v.v[m, m])


def fisher_information(v: DetectorMatrix, rho: DiagonalState, theta: float) -> float:
    """Information about the rotation angle carried by the detected counts.

    F(theta) = sum_n (dP(n|theta)/dtheta)^2 / P(n|theta) with the transfer
    probability p = sin^2(theta/2) chained through the response matrix.
    """
    if not 0.0 < theta < np.pi:
        raise ValueError("theta must lie in (0, pi)")
    dim = v.n_max + 1
    rho_arr = np.zeros(dim)
    if rho.rho.size > dim and rho.rho[dim:].sum() > 1e-12:
        raise ValueError("state support exceeds detector range")
    rho_arr[: min(dim, rho.rho.size)] = rho.rho[:dim]
    p = np.sin(theta / 2.0) ** 2
    dp = np.sin(theta) / 2.0
    y = v.v @ binomial_mixture(rho_arr, p)
    dy = v.v @ (binomial_mixture_dp(rho_arr, p) * dp)
    return float(np.sum(dy**2 / np.maximum(y, PROB_FLOOR)))


def fisher_sweep(
    v: DetectorMatrix,
    rho: DiagonalState,
    thetas: np.ndarray,
) -> np.ndarray:
    """fisher_information evaluated along a theta grid."""
    return np.array([fisher_information(v, rho, float(t)) for t in thetas])
