"""Forward model for resonant two-mode population transfer.

Atoms start in level b; a resonant coupling pulse of duration t transfers
each atom to level a with probability sin^2(omega_r * t / 2).  Counting the
level-a population of a number-diagonal state therefore yields a binomial
mixture.  Pulse durations are in seconds here; dataset files carry
microseconds and are converted at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binom, poisson

from .core import DiagonalState, ProbVector


@dataclass(frozen=True)
class RabiParams:
    """Angular coupling frequency in rad/s; resonant drive only."""

    omega_r: float
    detuning: float = 0.0

    def __post_init__(self) -> None:
        if not self.omega_r > 0:
            raise ValueError("omega_r must be > 0")
        if self.detuning != 0.0:
            raise ValueError("only resonant coupling is modeled (detuning = 0)")


@dataclass(frozen=True)
class DarkCountModel:
    """Mean number of spurious counts per shot, Poisson distributed."""

    mean_dark: float

    def __post_init__(self) -> None:
        if self.mean_dark < 0:
            raise ValueError("mean dark count must be >= 0")


def transfer_prob(params: RabiParams, t_s: float) -> float:
    """Single-atom transfer probability sin^2(omega_r t / 2)."""
    if t_s < 0:
        raise ValueError("pulse duration must be >= 0")
    return float(np.sin(params.omega_r * t_s / 2.0) ** 2)


def binomial_mixture(rho: np.ndarray, p: float) -> np.ndarray:
    """P(m) = sum_N rho[N] * Binomial(m; N, p), length len(rho)."""
    n_vals = np.arange(rho.size)
    return rho @ binom.pmf(n_vals[None, :], n_vals[:, None], p)


def binomial_mixture_dp(rho: np.ndarray, p: float) -> np.ndarray:
    """Derivative of binomial_mixture with respect to p.

    Uses d/dp Binom(m; N, p) = N * [Binom(m-1; N-1, p) - Binom(m; N-1, p)],
    which stays finite at p = 0 and p = 1.
    """
    n_vals = np.arange(rho.size)
    n_m1 = np.maximum(n_vals[:, None] - 1, 0)
    d_pmf = n_vals[:, None] * (
        binom.pmf(n_vals[None, :] - 1, n_m1, p) - binom.pmf(n_vals[None, :], n_m1, p)
    )
    return rho @ d_pmf


def ideal_distribution(state: DiagonalState, params: RabiParams, t_s: float) -> ProbVector:
    """Noiseless level-a number distribution after a pulse of duration t_s."""
    return ProbVector(binomial_mixture(state.rho, transfer_prob(params, t_s)))


#: Largest atom number accepted by the dense-diagonalization oracle.
ORACLE_N_LIMIT = 20


def exact_unitary_oracle(n_total: int, theta: float) -> ProbVector:
    """Level-a number distribution from exact evolution of |0>_a |N>_b.

    Builds the fixed-N coupling Hamiltonian (a†b + b†a)/2, exponentiates it
    by diagonalization, and returns |<m|psi(theta)>|^2.  Independent check of
    the binomial closed form; limited to small N where dense diagonalization
    is cheap.
    """
    if n_total < 0:
        raise ValueError("n_total must be >= 0")
    if n_total > ORACLE_N_LIMIT:
        raise ValueError(f"oracle limited to n_total <= {ORACLE_N_LIMIT}")
    if n_total == 0:
        return ProbVector(np.array([1.0]))
    from .spin import jx_matrix

    evals, vecs = np.linalg.eigh(jx_matrix(n_total))
    psi0 = np.zeros(n_total + 1)
    psi0[0] = 1.0
    psi = vecs @ (np.exp(-1j * theta * evals) * (vecs.T @ psi0))
    return ProbVector(np.abs(psi) ** 2)


def poisson_pmf_vector(mean: float, tail_tol: float = 1e-15) -> np.ndarray:
    """Poisson pmf truncated where the upper tail drops below tail_tol."""
    if mean == 0.0:
        return np.array([1.0])
    hi = int(poisson.ppf(1.0 - tail_tol, mean)) + 2
    pmf = poisson.pmf(np.arange(hi + 1), mean)
    return pmf / pmf.sum()


def reference_binomial_model(
    mean_n: float,
    std_n: float,
    params: RabiParams,
    t_s: float,
    dark: DarkCountModel,
) -> ProbVector:
    """Binomial reference distribution with number fluctuations and dark counts.

    Gaussian-weighted total atom number (truncated at zero), binomial
    transfer at the pulse's p(t), then convolution with the Poisson dark
    count model.
    """
    if mean_n <= 0:
        raise ValueError("mean_n must be > 0")
    state = DiagonalState.gaussian(mean_n, std_n)
    base = binomial_mixture(state.rho, transfer_prob(params, t_s))
    if dark.mean_dark > 0:
        base = np.convolve(base, poisson_pmf_vector(dark.mean_dark))
    return ProbVector(base)


def discrete_gaussian_probs(center: float, sigma: float, size: int) -> np.ndarray:
    """Discrete Gaussian kernel over integer counts 0..size-1.

    Weights exp(-(n - center)^2 / (2 sigma^2)) on the integers, with the
    mass below zero folded into count 0 and the mass above size-1 folded
    into the last count; always sums to one.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        out = np.zeros(size)
        out[int(np.clip(round(center), 0, size - 1))] = 1.0
        return out
    pad = int(np.ceil(6.0 * sigma)) + 1
    n_ext = np.arange(-pad, size + pad)
    w = np.exp(-0.5 * ((n_ext - center) / sigma) ** 2)
    w /= w.sum()
    out = w[pad : pad + size].copy()
    out[0] += w[:pad].sum()
    out[-1] += w[pad + size :].sum()
    return out
