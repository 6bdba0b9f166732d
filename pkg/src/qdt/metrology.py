"""Phase-estimation performance of squeezed-state superpositions read out by
counting one level through a (possibly noisy) detector.

States live in fixed-atom-number sectors.  Per sector the probe is a
Gaussian superposition of transverse-spin eigenstates whose width encodes
the squeezing strength s (4 Var(J_x) = s N in the continuum regime); the
interferometer rotation is exp(-i theta J_y) and the observable is the
level-a count, mapped through the detector response when one is supplied.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import DetectorMatrix, DiagonalState, ProbVector
from .spin import jx_matrix, jy_matrix, jz_values, ladder_weights

#: Dense diagonalization budget per atom-number sector.
SECTOR_LIMIT = 400
#: Sectors with less ensemble weight than this are skipped.
SECTOR_MASS_CUT = 1e-12
#: Step of the symmetric finite difference for d<n>/dtheta.
DERIV_STEP = 1e-4


@dataclass(frozen=True)
class SqueezedEnsemble:
    """Squeezing strength s and the atom-number distribution of the probe."""

    s: float
    rho: DiagonalState

    def __post_init__(self) -> None:
        if not self.s > 0:
            raise ValueError("squeezing parameter s must be > 0")


@dataclass(frozen=True)
class GainMap:
    """Sensitivity gain over a (squeezing, number-fluctuation) grid."""

    s_axis: np.ndarray
    dn_axis: np.ndarray
    gain: np.ndarray       # shape (len(s_axis), len(dn_axis))
    theta_opt: np.ndarray  # same shape; optimal rotation angle per cell

    def __post_init__(self) -> None:
        g = np.asarray(self.gain, dtype=float)
        if g.shape != (len(self.s_axis), len(self.dn_axis)):
            raise ValueError("gain grid shape does not match the axes")
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ValueError("gain values must be positive and finite")

    def subunit_mask(self) -> np.ndarray:
        """Cells without sub-shot-noise improvement (G <= 1)."""
        return self.gain <= 1.0


@dataclass(frozen=True)
class GainScaling:
    """Gain versus mean atom number, optimized over squeezing."""

    n_axis: np.ndarray
    gain: np.ndarray
    s_opt: np.ndarray
    theta_opt: np.ndarray


@lru_cache(maxsize=None)
def _jx_eig(n_total: int) -> tuple[np.ndarray, np.ndarray]:
    evals, vecs = np.linalg.eigh(jx_matrix(n_total))
    # fix the eigenvector phases: the level-a vacuum component is positive
    signs = np.where(vecs[0, :] >= 0, 1.0, -1.0)
    vecs = vecs * signs
    evals.setflags(write=False)
    vecs.setflags(write=False)
    return evals, vecs


@lru_cache(maxsize=256)
def _jy_eig(n_total: int) -> tuple[np.ndarray, np.ndarray]:
    evals, vecs = np.linalg.eigh(jy_matrix(n_total))
    evals.setflags(write=False)
    vecs.setflags(write=False)
    return evals, vecs


def build_squeezed_state(s: float, n_total: int) -> np.ndarray:
    """Gaussian superposition of J_x eigenstates, returned in the level-a
    number basis (real amplitudes).

    The amplitude profile exp(-mu^2 / (N s)) fixes 4 Var(J_x) = s N up to
    discreteness and truncation corrections.
    """
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    if n_total > SECTOR_LIMIT:
        raise ValueError(f"n_total exceeds the diagonalization budget {SECTOR_LIMIT}")
    if not s > 0:
        raise ValueError("squeezing parameter s must be > 0")
    mu, vecs = _jx_eig(n_total)
    amps = np.exp(-(mu**2) / (n_total * s))
    psi = vecs @ amps
    return psi / np.linalg.norm(psi)


def rotate_state(psi: np.ndarray, theta: float) -> np.ndarray:
    """Apply exp(-i theta J_y) through the cached eigendecomposition."""
    n_total = psi.size - 1
    d, w = _jy_eig(n_total)
    return w @ (np.exp(-1j * theta * d) * (w.conj().T @ psi))


def _sector_psis(ensemble: SqueezedEnsemble) -> list[tuple[int, float, np.ndarray | None]]:
    """(N, weight, state) per retained sector; the N = 0 state is None."""
    rho = ensemble.rho.rho
    out = []
    for n_total in range(rho.size):
        weight = float(rho[n_total])
        if weight <= SECTOR_MASS_CUT:
            continue
        psi = build_squeezed_state(ensemble.s, n_total) if n_total >= 1 else None
        out.append((n_total, weight, psi))
    return out


def rotated_number_distribution(state: SqueezedEnsemble, theta: float) -> ProbVector:
    """Level-a count distribution of the rotated ensemble."""
    if not 0.0 <= theta <= np.pi:
        raise ValueError("theta must lie in [0, pi]")
    size = state.rho.rho.size
    total = np.zeros(size)
    for n_total, weight, psi in _sector_psis(state):
        if psi is None:
            total[0] += weight
            continue
        q = np.abs(rotate_state(psi, theta)) ** 2
        total[: n_total + 1] += weight * q
    return ProbVector(total)


def _readout_vectors(v: DetectorMatrix | None, size: int) -> tuple[np.ndarray, np.ndarray]:
    """First and second moments of the detected count given m arrivals."""
    if v is None:
        m = np.arange(size, dtype=float)
        return m, m**2
    if v.n_max + 1 < size:
        raise ValueError(
            f"detector range (n_max = {v.n_max}) below the state support ({size - 1} atoms); "
            "build the detector model at a larger n_max"
        )
    n = np.arange(v.n_max + 1, dtype=float)
    return (v.v.T @ n)[:size], (v.v.T @ n**2)[:size]


def detected_moment_curves(
    ensemble: SqueezedEnsemble,
    thetas: np.ndarray,
    v: DetectorMatrix | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the detected count along a theta grid."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    size = ensemble.rho.rho.size
    a_vec, b_vec = _readout_vectors(v, size)
    mean = np.zeros(thetas.size)
    second = np.zeros(thetas.size)
    for n_total, weight, psi in _sector_psis(ensemble):
        if psi is None:
            mean += weight * a_vec[0]
            second += weight * b_vec[0]
            continue
        d, w = _jy_eig(n_total)
        e = w.conj().T @ psi
        phases = np.exp(-1j * np.outer(d, thetas))
        q = np.abs(w @ (e[:, None] * phases)) ** 2
        mean += weight * (a_vec[: n_total + 1] @ q)
        second += weight * (b_vec[: n_total + 1] @ q)
    var = second - mean**2
    return mean, var


class _IdealMomentModel:
    """Closed-form detected moments for ideal counting (no detector matrix).

    Rotating by theta maps J_z -> cos(theta) J_z + sin(theta) J_x, so the
    first two moments of n = N/2 + J_z follow from five static expectation
    values per sector.
    """

    def __init__(self, ensemble: SqueezedEnsemble):
        self.rows = []
        for n_total, weight, psi in _sector_psis(ensemble):
            if psi is None:
                self.rows.append((weight, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0))
                continue
            j = n_total / 2.0
            jz = jz_values(n_total)
            w_vec = jz * psi
            half_ladder = ladder_weights(n_total) / 2.0
            u_vec = np.zeros_like(psi)
            u_vec[:-1] += half_ladder * psi[1:]
            u_vec[1:] += half_ladder * psi[:-1]
            z1 = float(psi @ w_vec)
            x1 = float(psi @ u_vec)
            z2 = float(w_vec @ w_vec)
            x2 = float(u_vec @ u_vec)
            cross = 2.0 * float(w_vec @ u_vec)
            self.rows.append((weight, j, z1, x1, z2, x2, cross))

    def curves(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        c, s = np.cos(thetas), np.sin(thetas)
        mean = np.zeros(thetas.size)
        second = np.zeros(thetas.size)
        for weight, j, z1, x1, z2, x2, cross in self.rows:
            jz_mean = c * z1 + s * x1
            jz_sq = c**2 * z2 + s**2 * x2 + s * c * cross
            mean += weight * (j + jz_mean)
            second += weight * (j**2 + 2.0 * j * jz_mean + jz_sq)
        return mean, second - mean**2


def phase_sensitivity(
    state: SqueezedEnsemble,
    theta: float,
    v: DetectorMatrix | None = None,
) -> float:
    """Error-propagation variance (delta theta)^2 = Var(n) / (d<n>/dtheta)^2.

    The slope uses a symmetric finite difference with step 1e-4 rad; a
    vanishing slope makes theta unusable and raises ValueError.
    """
    if not 0.0 < theta < np.pi:
        raise ValueError("theta must lie strictly inside (0, pi)")
    h = min(DERIV_STEP, theta / 2.0, (np.pi - theta) / 2.0)
    mean, var = detected_moment_curves(state, np.array([theta - h, theta, theta + h]), v)
    slope = (mean[2] - mean[0]) / (2.0 * h)
    if abs(slope) < 1e-9 * (1.0 + abs(mean[1])):
        raise ValueError(f"mean count is stationary at theta = {theta:.6g}; sensitivity undefined")
    return float(var[1] / slope**2)


def _golden_min(fun, lo: float, hi: float, tol: float, max_iter: int = 60):
    """Plain golden-section minimization on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (c, fc) if fc < fd else (d, fd)


def _optimal_sensitivity(
    ensemble: SqueezedEnsemble,
    v: DetectorMatrix | None,
    n_theta: int = 400,
) -> tuple[float, float]:
    """Best (delta theta)^2 over theta in (0, pi) and its location."""
    grid = np.linspace(0.0, np.pi, n_theta + 2)[1:-1]
    h = DERIV_STEP
    if v is None:
        model = _IdealMomentModel(ensemble)
        mean_lo, _ = model.curves(grid - h)
        mean_mid, var_mid = model.curves(grid)
        mean_hi, _ = model.curves(grid + h)

        def sens_at(theta: float) -> float:
            m, vv = model.curves(np.array([theta - h, theta, theta + h]))
            slope = (m[2] - m[0]) / (2.0 * h)
            if abs(slope) < 1e-12 * (1.0 + abs(m[1])):
                return np.inf
            return float(vv[1] / slope**2)

    else:
        batched = np.concatenate([grid - h, grid, grid + h])
        mean_all, var_all = detected_moment_curves(ensemble, batched, v)
        mean_lo, mean_mid, mean_hi = np.split(mean_all, 3)
        _, var_mid, _ = np.split(var_all, 3)

        def sens_at(theta: float) -> float:
            try:
                return phase_sensitivity(ensemble, theta, v)
            except ValueError:
                return np.inf

    slope = (mean_hi - mean_lo) / (2.0 * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        sens = var_mid / slope**2
    sens[~np.isfinite(sens)] = np.inf
    sens[np.abs(slope) < 1e-12 * (1.0 + np.abs(mean_mid))] = np.inf
    i = int(np.argmin(sens))
    if not np.isfinite(sens[i]):
        raise ValueError("mean count has no usable slope anywhere in (0, pi)")
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    theta_ref, sens_ref = _golden_min(sens_at, lo, hi, tol=1e-5)
    if sens_ref < sens[i]:
        return float(sens_ref), float(theta_ref)
    return float(sens[i]), float(grid[i])


def _capped_gaussian(n_mean: float, dn: float, cap: int) -> DiagonalState:
    n_hi = int(np.ceil(n_mean + 6.0 * max(dn, 1.0)))
    if n_hi > cap:
        from scipy.stats import norm

        dropped = norm.sf((cap - n_mean) / dn) if dn > 0 else 0.0
        if dropped > 1e-6:
            raise ValueError(
                f"number distribution (mean {n_mean:g}, spread {dn:g}) needs support "
                f"beyond the budget ({cap} atoms)"
            )
        n_hi = cap
    return DiagonalState.gaussian(n_mean, dn, n_max=n_hi)


def gain(ensemble: SqueezedEnsemble, v: DetectorMatrix | None = None) -> tuple[float, float]:
    """Sensitivity gain G = 1 / (<N> (delta theta)^2_opt) and the optimal theta."""
    sens, theta_star = _optimal_sensitivity(ensemble, v)
    return 1.0 / (ensemble.rho.mean() * sens), theta_star


def gain_map(
    n_mean: float,
    v: DetectorMatrix | None,
    s_axis: np.ndarray,
    dn_axis: np.ndarray,
) -> GainMap:
    """Gain over a squeezing / number-fluctuation grid at fixed mean number."""
    s_axis = np.asarray(s_axis, dtype=float)
    dn_axis = np.asarray(dn_axis, dtype=float)
    if s_axis.size == 0 or dn_axis.size == 0 or np.any(s_axis <= 0) or np.any(dn_axis < 0):
        raise ValueError("grids must be non-empty with s > 0 and dn >= 0")
    cap = min(SECTOR_LIMIT, v.n_max if v is not None else SECTOR_LIMIT)
    gains = np.empty((s_axis.size, dn_axis.size))
    thetas = np.empty_like(gains)
    for jd, dn in enumerate(dn_axis):
        rho = _capped_gaussian(n_mean, float(dn), cap)
        for js, s in enumerate(s_axis):
            g, theta_star = gain(SqueezedEnsemble(float(s), rho), v)
            gains[js, jd] = g
            thetas[js, jd] = theta_star
    return GainMap(s_axis=s_axis, dn_axis=dn_axis, gain=gains, theta_opt=thetas)


def gain_vs_s(
    n_mean: float,
    dn: float,
    v: DetectorMatrix | None,
    s_axis: np.ndarray,
) -> GainMap:
    """Single-column gain map at fixed number fluctuation."""
    return gain_map(n_mean, v, s_axis, np.array([dn]))


def gain_scaling(
    v: DetectorMatrix | None,
    n_axis: np.ndarray,
    s_grid_points: int = 60,
) -> GainScaling:
    """Gain versus mean atom number with dn = sqrt(n_mean), optimized over s.

    Squeezing is scanned on a logarithmic grid in [0.01, 1] and refined by
    golden section in log-s.  With a detector matrix this is substantially
    slower than the ideal path; keep n_axis modest in that case.
    """
    n_axis = np.asarray(n_axis, dtype=float)
    if np.any(n_axis < 1) or np.any(n_axis > SECTOR_LIMIT):
        raise ValueError(f"n_axis entries must lie in [1, {SECTOR_LIMIT}]")
    s_grid = np.geomspace(0.01, 1.0, s_grid_points)
    gains = np.empty(n_axis.size)
    s_opts = np.empty(n_axis.size)
    theta_opts = np.empty(n_axis.size)
    cap = min(SECTOR_LIMIT, v.n_max if v is not None else SECTOR_LIMIT)
    for i, n_mean in enumerate(n_axis):
        rho = _capped_gaussian(float(n_mean), float(np.sqrt(n_mean)), cap)

        def gain_at(log_s: float, rho=rho) -> tuple[float, float]:
            g, theta_star = gain(SqueezedEnsemble(float(np.exp(log_s)), rho), v)
            return g, theta_star

        grid_vals = [gain_at(ls)[0] for ls in np.log(s_grid)]
        k = int(np.argmax(grid_vals))
        lo = np.log(s_grid[max(k - 1, 0)])
        hi = np.log(s_grid[min(k + 1, s_grid.size - 1)])
        log_s_best, neg = _golden_min(lambda ls: -gain_at(ls)[0], lo, hi, tol=1e-2, max_iter=24)
        if -neg >= grid_vals[k]:
            s_best, g_best = float(np.exp(log_s_best)), float(-neg)
        else:
            s_best, g_best = float(s_grid[k]), float(grid_vals[k])
        gains[i] = g_best
        s_opts[i] = s_best
        theta_opts[i] = gain_at(np.log(s_best))[1]
    return GainScaling(n_axis=n_axis, gain=gains, s_opt=s_opts, theta_opt=theta_opts)
