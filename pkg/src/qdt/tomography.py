"""Joint reconstruction of the detector response matrix, the diagonal state,
and the coupling frequency from count histograms.

The reconstruction minimizes the summed squared Hellinger distance between
modeled and measured histograms by block-coordinate projected gradient
descent (response columns -> state weights -> frequency), with the column
and state simplices enforced by Euclidean projection after every step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import binom

from .core import (
    DetectorMatrix,
    DiagonalState,
    HistogramDataset,
    ProbVector,
    fidelity,
    simplex_project_raw,
)
from .rabi import RabiParams, binomial_mixture_dp

US = 1e-6
#: Probability floor inside square roots / denominators of gradients.
PROB_FLOOR = 1e-12
#: Columns whose share of the total arrival mass falls below this threshold
#: carry no information from the data; they are reset to identity columns
#: after the optimization so downstream operator analysis reflects only
#: measured structure.
UNCONSTRAINED_COLUMN_MASS = 1e-9


class FitConvergenceError(RuntimeError):
    """Raised when the initialization fits cannot be trusted."""


@dataclass(frozen=True)
class TomographyConfig:
    """Engine settings.

    The response block needs a large iteration budget: its subproblem is
    solved with momentum that only pays off over thousands of steps, and
    under-solved response fits leave spurious blur that the state block
    then absorbs irreversibly.  The state and frequency blocks are gentle
    refinements by design; large budgets there chase sampling noise along
    the amplitude-frequency ridge.
    """

    cost_cutoff: float = 0.01
    max_outer_iters: int = 200
    inner_iters_v: int = 6000
    inner_iters_rho: int = 6
    inner_iters_omega: int = 2
    step_v: float = 0.5
    step_rho: float = 0.02
    step_omega: float = 0.005
    rng_seed: int = 0
    bootstrap_replicas: int = 20
    cost_kind: str = "hellinger"
    smooth_weight: float = 0.02

    def __post_init__(self) -> None:
        if self.cost_cutoff <= 0:
            raise ValueError("cost_cutoff must be > 0")
        if self.smooth_weight < 0:
            raise ValueError("smooth_weight must be >= 0")
        for name in ("max_outer_iters", "inner_iters_v", "inner_iters_rho", "inner_iters_omega"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("step_v", "step_rho", "step_omega"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.bootstrap_replicas < 1:
            raise ValueError("bootstrap_replicas must be >= 1")
        if self.cost_kind not in ("hellinger", "kl"):
            raise ValueError("cost_kind must be 'hellinger' or 'kl'")


@dataclass(frozen=True)
class TomographyResult:
    v: DetectorMatrix
    rho: DiagonalState
    omega_r: float
    final_cost: float
    cost_trace: np.ndarray
    converged: bool


@dataclass(frozen=True)
class BootstrapEnsemble:
    replicas: tuple[TomographyResult, ...]
    summary: dict


@dataclass(frozen=True)
class OscillationFit:
    """Results of the mean / second-moment oscillation fits."""

    n_mean: float          # amplitude of the mean oscillation
    offset: float          # constant offset of the mean
    freq_khz: float        # cyclic frequency
    dn: float              # width estimate sqrt(b4 - n_mean^2), floored at 0
    b_coeffs: np.ndarray   # quartic coefficients of the second-moment fit
    mean_residual: float

    @property
    def omega_r(self) -> float:
        return 2.0 * np.pi * self.freq_khz * 1e3


def _mean_model(t_us: np.ndarray, amp: float, f_khz: float, off: float) -> np.ndarray:
    return amp * np.sin(np.pi * f_khz * 1e-3 * t_us) ** 2 + off


def _quartic_fit(t: np.ndarray, f_khz: float, seconds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Second moment as a quartic in sin(pi f t) at fixed frequency."""
    s = np.sin(np.pi * f_khz * 1e-3 * t)
    design = np.stack([s**k for k in range(5)], axis=1)
    b_coeffs, _, _, _ = np.linalg.lstsq(design, seconds, rcond=None)
    return b_coeffs, seconds - design @ b_coeffs


def fit_oscillation(data: HistogramDataset) -> OscillationFit:
    """Fit the per-time mean and second moment of the histograms.

    The mean follows amp * sin^2(pi f t) + off and the second moment a
    quartic in sin(pi f t) at the same frequency.  The frequency is
    selected on the joint residual of both fits (a coarse scan with
    per-frequency linear least squares, then a local nonlinear
    refinement); schedules that sample only a small part of the first
    oscillation arc leave (amp, f) poorly conditioned, so cover a good
    fraction of the half period for reliable frequency recovery.
    """
    if len(data) < 3:
        raise FitConvergenceError("need at least 3 distinct times to fit the oscillation")
    t = data.times_us
    means = np.array([h.mean() for h in data.histograms])
    seconds = np.array([h.second_moment() for h in data.histograms])
    scale_m = np.sqrt(max(float(np.var(means)), 1e-12))
    scale_s = np.sqrt(max(float(np.var(seconds)), 1e-12))

    dt = np.diff(t)
    f_hi = 0.5 / (dt.min() * 1e-3)           # Nyquist, kHz
    f_grid = np.linspace(f_hi / 2000.0, f_hi, 3000)
    ones = np.ones_like(t)
    best = None
    for f in f_grid:
        # sin^2(pi f t) = 1/2 - cos(2 pi f t)/2: linear in [1, cos]
        a_mat = np.stack([ones, np.cos(2.0 * np.pi * 1e-3 * f * t)], axis=1)
        coef, _, _, _ = np.linalg.lstsq(a_mat, means, rcond=None)
        r_m = means - a_mat @ coef
        _, r_s = _quartic_fit(t, f, seconds)
        score = float(r_m @ r_m) / scale_m**2 + float(r_s @ r_s) / scale_s**2
        if best is None or score < best[0]:
            best = (score, f, coef)
    _, f0, coef0 = best
    amp0 = max(-2.0 * coef0[1], 1e-6)
    off0 = coef0[0] + coef0[1]

    def residual(params):
        amp, f_khz, off = params
        r_m = (_mean_model(t, amp, f_khz, off) - means) / scale_m
        _, r_s = _quartic_fit(t, f_khz, seconds)
        return np.concatenate([r_m, r_s / scale_s])

    sol = least_squares(
        residual,
        x0=[amp0, f0, off0],
        bounds=([0.0, 0.0, -np.inf], [np.inf, f_hi * 1.5, np.inf]),
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
    )
    if not sol.success:
        raise FitConvergenceError(
            f"oscillation fit failed ({sol.message}); residuals {sol.fun}"
        )
    amp, f_khz, off = sol.x
    if amp <= 0:
        raise FitConvergenceError(f"non-positive oscillation amplitude {amp:.3g}")
    mean_residual = float(np.sqrt(np.mean((sol.fun[: t.size] * scale_m) ** 2)))

    b_coeffs, _ = _quartic_fit(t, f_khz, seconds)
    dn_sq = float(b_coeffs[4]) - float(amp) ** 2
    dn = float(np.sqrt(dn_sq)) if dn_sq > 0 else 0.0

    return OscillationFit(
        n_mean=float(amp),
        offset=float(off),
        freq_khz=float(f_khz),
        dn=dn,
        b_coeffs=np.asarray(b_coeffs, dtype=float),
        mean_residual=mean_residual,
    )


def _infer_n_max(data: HistogramDataset, fit: OscillationFit) -> int:
    """Reconstruction dimension: the data's largest count, extended so the
    fitted atom-number distribution is representable."""
    spread = max(fit.dn, np.sqrt(max(fit.n_mean, 1.0)))
    return int(max(data.observed_max_count(), np.ceil(fit.n_mean + 4.0 * spread)))


#: Bracket for the starting width of the state guess, in units of
#: sqrt(fitted mean).  The quartic-coefficient width estimate carries a
#: shot-noise variance comparable to its value, so it is clipped to the
#: Poissonian preparation scale.  The bracket errs slightly wide: the
#: response matrix can only add spread, never remove it, so a guess narrower
#: than the truth pushes the optimization into a basin where the response
#: matrix absorbs the missing state width as spurious detector blur, while a
#: much-too-wide guess drags the frequency and scale off along the
#: sampling-noise ridge before the width corrects.
INIT_WIDTH_FLOOR = 1.05
INIT_WIDTH_CAP = 1.15


def random_stochastic_matrix(size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random entries, columns normalized to unit sum."""
    m = rng.uniform(0.0, 1.0, size=(size, size))
    return m / m.sum(axis=0)


def init_from_fits(
    data: HistogramDataset,
    rng_seed: int = 0,
    n_max: int | None = None,
) -> tuple[DiagonalState, RabiParams, DetectorMatrix]:
    """Starting point for the reconstruction.

    Gaussian state and coupling frequency come from the oscillation fits;
    the response matrix starts uniformly random and column-normalized.
    The quartic-coefficient width estimate is both degenerate for
    Poissonian number fluctuations (its exact value is Var(N) - <N>) and
    shot-noise dominated, so the starting width is clipped to the bracket
    [INIT_WIDTH_FLOOR, INIT_WIDTH_CAP] * sqrt(<N>); see those constants.
    """
    fit = fit_oscillation(data)
    if n_max is None:
        n_max = _infer_n_max(data, fit)
    scale = float(np.sqrt(fit.n_mean))
    width = float(np.clip(fit.dn, INIT_WIDTH_FLOOR * scale, INIT_WIDTH_CAP * scale))
    state = DiagonalState.gaussian(fit.n_mean, width, n_max=n_max)
    params = RabiParams(fit.omega_r)
    rng = np.random.default_rng(rng_seed)
    v0 = DetectorMatrix(random_stochastic_matrix(n_max + 1, rng))
    return state, params, v0


# ---------------------------------------------------------------------------
# cost and gradients on plain arrays (engine internals and property tests)
# ---------------------------------------------------------------------------


def binom_tensor(size: int, probs: np.ndarray) -> np.ndarray:
    """B[j, N, m] = Binomial(m; N, p_j) for N, m = 0..size-1."""
    n = np.arange(size)
    out = np.empty((len(probs), size, size))
    for j, p in enumerate(probs):
        out[j] = binom.pmf(n[None, :], n[:, None], p)
    return out


def _diag_smoothness(v: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared variation of the response along matrix diagonals.

    Physical responses have nearly identical offset profiles in neighboring
    columns, i.e. V[n, m] ~ V[n+1, m+1]; this measures departures from that.
    """
    d = v[:-1, :-1] - v[1:, 1:]
    pen = float(np.sum(d * d))
    grad = np.zeros_like(v)
    grad[:-1, :-1] += 2.0 * d
    grad[1:, 1:] -= 2.0 * d
    return pen, grad


def _cost_terms(y: np.ndarray, q: np.ndarray, kind: str) -> tuple[float, np.ndarray]:
    """Cost and its elementwise gradient with respect to the model values y."""
    y_safe = np.maximum(y, PROB_FLOOR)
    if kind == "hellinger":
        cost = float(np.sum((np.sqrt(np.clip(y, 0.0, None)) - np.sqrt(q)) ** 2))
        grad = 1.0 - np.sqrt(q / y_safe)
    else:  # kl: sum q log(q/y)
        mask = q > 0
        cost = float(np.sum(q[mask] * np.log(q[mask] / y_safe[mask])))
        grad = np.where(mask, -q / y_safe, 0.0)
    return cost, grad


def cost_arrays(
    v: np.ndarray,
    rho: np.ndarray,
    omega: float,
    times_us: np.ndarray,
    hists: np.ndarray,
    kind: str = "hellinger",
) -> float:
    """Summed statistical distance over times, all inputs as plain arrays."""
    probs = np.sin(omega * times_us * US / 2.0) ** 2
    b = binom_tensor(v.shape[0], probs)
    p_id = np.einsum("N,jNm->jm", rho, b)
    y = p_id @ v.T
    cost, _ = _cost_terms(y, hists, kind)
    return cost


def cost_gradients_arrays(
    v: np.ndarray,
    rho: np.ndarray,
    omega: float,
    times_us: np.ndarray,
    hists: np.ndarray,
    kind: str = "hellinger",
) -> tuple[np.ndarray, np.ndarray, float]:
    """Analytic gradient of the cost with respect to (v, rho, omega)."""
    t_s = times_us * US
    probs = np.sin(omega * t_s / 2.0) ** 2
    b = binom_tensor(v.shape[0], probs)
    p_id = np.einsum("N,jNm->jm", rho, b)
    y = p_id @ v.T
    _, g = _cost_terms(y, hists, kind)

    grad_v = g.T @ p_id
    m_stack = np.matmul(v[None, :, :], b.transpose(0, 2, 1))  # (J, n, N)
    grad_rho = np.einsum("jnN,jn->N", m_stack, g)
    dp_dom = (t_s / 2.0) * np.sin(omega * t_s)
    grad_om = 0.0
    for j in range(len(t_s)):
        dpid = binomial_mixture_dp(rho, probs[j]) * dp_dom[j]
        grad_om += float(g[j] @ (v @ dpid))
    return grad_v, grad_rho, grad_om


def cost(v: DetectorMatrix, rho: DiagonalState, omega: float, data: HistogramDataset) -> float:
    """Summed squared Hellinger distance between model and data histograms."""
    dim = v.n_max + 1
    if rho.n_max + 1 > dim:
        tail = rho.rho[dim:].sum()
        if tail > 1e-12:
            raise ValueError("state support exceeds detector range")
    rho_arr = np.zeros(dim)
    rho_arr[: min(dim, rho.rho.size)] = rho.rho[:dim]
    size = max(dim, data.n_max + 1)
    hists = data.padded_matrix(size)
    probs = np.sin(omega * data.times_us * US / 2.0) ** 2
    b = binom_tensor(dim, probs)
    p_id = np.einsum("N,jNm->jm", rho_arr, b)
    y = p_id @ v.v.T
    if size > dim:
        y = np.pad(y, ((0, 0), (0, size - dim)))
    c, _ = _cost_terms(y, hists, "hellinger")
    return c


# ---------------------------------------------------------------------------
# block-coordinate descent engine
# ---------------------------------------------------------------------------


class _LineSearch:
    """Backtracking step-size memory: halve until the cost decreases (max 30
    halvings), grow gently after every accepted step."""

    MAX_HALVINGS = 30

    def __init__(self, step: float):
        self.step = step

    def run(self, trial_cost, current_cost: float):
        alpha = self.step
        for _ in range(self.MAX_HALVINGS):
            candidate, c_new = trial_cost(alpha)
            if c_new < current_cost:
                self.step = alpha * 1.4
                return candidate, c_new
            alpha *= 0.5
        return None, current_cost


class _Workspace:
    """Mutable optimization state over plain arrays."""

    #: The frequency block refines within this relative bracket around the
    #: fitted value: the oscillation fit pins the frequency to a fraction of
    #: a percent, and wider excursions only trade the frequency against the
    #: state scale along the sampling-noise ridge.
    OMEGA_BRACKET = 0.015
    #: The state block keeps the number spread within this bracket, in units
    #: of sqrt(mean): the calibration state is prepared with projection-noise
    #: dominated fluctuations, and runaway narrowing (the response matrix
    #: re-absorbing the spread as fake blur) or widening are pure
    #: noise-chasing modes.
    WIDTH_BRACKET = (0.75, 1.4)

    def __init__(self, data: HistogramDataset, config: TomographyConfig, dim: int,
                 v: np.ndarray, rho: np.ndarray, omega: float):
        self.config = config
        self.dim = dim
        self.t_s = data.times_us * US
        self.q = data.padded_matrix(dim)
        self.v = v
        self.rho = rho
        self.omega = omega
        self.omega_bounds = (omega * (1.0 - self.OMEGA_BRACKET), omega * (1.0 + self.OMEGA_BRACKET))
        scale = float(np.sqrt(np.arange(dim) @ rho))
        self.width_bounds = (self.WIDTH_BRACKET[0] * scale, self.WIDTH_BRACKET[1] * scale)
        self.b = None
        self.refresh_tensor()

    def refresh_tensor(self) -> None:
        probs = np.sin(self.omega * self.t_s / 2.0) ** 2
        self.b = binom_tensor(self.dim, probs)

    # -- shared pieces ----------------------------------------------------
    def p_id(self) -> np.ndarray:
        return np.einsum("N,jNm->jm", self.rho, self.b)

    def current_cost(self) -> float:
        y = self.p_id() @ self.v.T
        c, _ = _cost_terms(y, self.q, self.config.cost_kind)
        return c

    # -- V block -----------------------------------------------------------
    def v_block(self, search: _LineSearch, iters: int, cost_now: float) -> float:
        """Accelerated projected gradient on the response columns.

        Momentum with restart on objective increase; per-column arrival
        weights precondition the metric so weakly fed columns keep pace.

        The block optimizes the data term plus a small diagonal-smoothness
        penalty.  At realistic shot counts the data leave a family of
        response matrices statistically equivalent near the stopping value,
        differing by high-frequency column-to-column noise; physical
        detector responses vary smoothly with the arrival number, so the
        penalty selects the smooth member of that family.  The returned
        value is the pure data term.
        """
        p = self.p_id()
        weights = p.mean(axis=0)
        weights = np.maximum(weights, 1e-9 * max(weights.max(), PROB_FLOOR))
        kind = self.config.cost_kind
        lam = self.config.smooth_weight

        def eval_at(v_mat):
            c_pure, g = _cost_terms(p @ v_mat.T, self.q, kind)
            pen, g_pen = _diag_smoothness(v_mat)
            grad = g.T @ p + lam * g_pen
            return c_pure, c_pure + lam * pen, grad

        step = min(max(search.step, 1e-12), 1e4)
        v_cur = self.v
        _, r_cur, _ = eval_at(v_cur)
        v_best, c_best, r_best = v_cur, cost_now, r_cur
        z = v_cur
        tk = 1.0
        for _ in range(iters):
            _, r_z, grad = eval_at(z)
            direction = grad / weights[None, :]
            halvings = 0
            accepted = False
            while halvings <= 2 * _LineSearch.MAX_HALVINGS:
                v_new = simplex_project_raw(z - step * direction)
                c_new, r_new, _ = eval_at(v_new)
                diff = v_new - z
                bound = r_z + np.sum(grad * diff) + np.sum(weights[None, :] * diff**2) / (2.0 * step)
                if r_new <= bound + 1e-15:
                    accepted = True
                    break
                step *= 0.5
                halvings += 1
            if not accepted:
                break
            t_next = (1.0 + np.sqrt(1.0 + 4.0 * tk * tk)) / 2.0
            z = v_new + ((tk - 1.0) / t_next) * (v_new - v_cur)
            if r_new > r_cur:  # restart momentum when the objective backslides
                z = v_new
                t_next = 1.0
            v_cur, r_cur, tk = v_new, r_new, t_next
            if r_new < r_best:
                v_best, c_best, r_best = v_new, c_new, r_new
            if halvings == 0:
                step = min(step * 1.25, 1e4)
        search.step = step
        self.v = v_best
        return c_best

    # -- rho block ----------------------------------------------------------
    def rho_block(self, search: _LineSearch, iters: int, cost_now: float) -> float:
        m_stack = np.matmul(self.v[None, :, :], self.b.transpose(0, 2, 1))
        kind = self.config.cost_kind
        n_vals = np.arange(self.dim, dtype=float)
        for _ in range(iters):
            y = np.einsum("jnN,N->jn", m_stack, self.rho)
            _, g = _cost_terms(y, self.q, kind)
            direction = -np.einsum("jnN,jn->N", m_stack, g)

            def trial(alpha, direction=direction):
                rho_new = simplex_project_raw(self.rho + alpha * direction)
                mean_new = float(n_vals @ rho_new)
                width_new = float(np.sqrt((n_vals - mean_new) ** 2 @ rho_new))
                if not self.width_bounds[0] <= width_new <= self.width_bounds[1]:
                    return None, np.inf  # spread excursion: reject, halve
                c_new, _ = _cost_terms(np.einsum("jnN,N->jn", m_stack, rho_new), self.q, kind)
                return rho_new, c_new

            rho_new, c_new = search.run(trial, cost_now)
            if rho_new is None:
                break
            self.rho, cost_now = rho_new, c_new
        return cost_now

    # -- omega block ---------------------------------------------------------
    def omega_block(self, search: _LineSearch, iters: int, cost_now: float) -> float:
        kind = self.config.cost_kind
        for _ in range(iters):
            probs = np.sin(self.omega * self.t_s / 2.0) ** 2
            y = self.p_id() @ self.v.T
            _, g = _cost_terms(y, self.q, kind)
            dp_dom = (self.t_s / 2.0) * np.sin(self.omega * self.t_s)
            grad_om = 0.0
            for j in range(len(self.t_s)):
                dpid = binomial_mixture_dp(self.rho, probs[j]) * dp_dom[j]
                grad_om += float(g[j] @ (self.v @ dpid))
            grad_u = grad_om * self.omega  # log-space parameterization
            if grad_u == 0.0:
                break

            def trial(alpha, grad_u=grad_u):
                # refinement only: the fitted starting frequency is already
                # close, and larger jumps just chase sampling noise
                delta = np.clip(-alpha * grad_u, -0.003, 0.003)
                om_new = float(np.clip(self.omega * np.exp(delta), *self.omega_bounds))
                probs_new = np.sin(om_new * self.t_s / 2.0) ** 2
                b_new = binom_tensor(self.dim, probs_new)
                y_new = np.einsum("N,jNm->jm", self.rho, b_new) @ self.v.T
                c_new, _ = _cost_terms(y_new, self.q, kind)
                return (om_new, b_new), c_new

            accepted, c_new = search.run(trial, cost_now)
            if accepted is None:
                break
            self.omega, self.b = accepted
            cost_now = c_new
        return cost_now

    # -- unconstrained-column cleanup ----------------------------------------
    def reset_unconstrained_columns(self) -> None:
        mass = self.p_id().mean(axis=0)
        total = mass.sum()
        if total <= 0:
            return
        idle = mass / total < UNCONSTRAINED_COLUMN_MASS
        if np.any(idle):
            cols = np.where(idle)[0]
            self.v[:, cols] = 0.0
            self.v[cols, cols] = 1.0


def reconstruct(data: HistogramDataset, config: TomographyConfig | None = None) -> TomographyResult:
    """Run the block-coordinate descent until the cost cutoff is reached.

    Non-convergence is reported through ``converged=False`` with the full
    cost trace rather than an exception.
    """
    config = config or TomographyConfig()
    state0, params0, v0 = init_from_fits(data, rng_seed=config.rng_seed)
    dim = v0.n_max + 1
    ws = _Workspace(data, config, dim, v0.v.copy(), state0.rho.copy(), params0.omega_r)

    search_v = _LineSearch(config.step_v)
    search_rho = _LineSearch(config.step_rho)
    search_om = _LineSearch(config.step_omega)

    c = ws.current_cost()
    trace = [c]
    converged = False
    stagnant = 0
    for _ in range(config.max_outer_iters):
        snapshot = (ws.v.copy(), ws.rho.copy(), ws.omega)
        c_before = c
        c = ws.v_block(search_v, config.inner_iters_v, c)
        if c > config.cost_cutoff:
            # state and frequency refinements run while the residual is far
            # from the cutoff or once the response block has stalled; close
            # to the cutoff they would only chase sampling noise along the
            # amplitude-frequency ridge
            v_gain = c_before - c
            if c > 2.0 * config.cost_cutoff or v_gain < 0.1 * (c - config.cost_cutoff):
                c = ws.rho_block(search_rho, config.inner_iters_rho, c)
                c = ws.omega_block(search_om, config.inner_iters_omega, c)
        if c > trace[-1]:
            # the smoothness tie-breaker may no longer buy pure-cost
            # improvement: restore and stop
            ws.v, ws.rho, ws.omega = snapshot
            ws.refresh_tensor()
            c = trace[-1]
            break
        improvement = trace[-1] - c
        trace.append(c)
        if c <= config.cost_cutoff:
            ws.reset_unconstrained_columns()
            c = ws.current_cost()
            if c <= config.cost_cutoff:
                converged = True
                break
        if improvement < max(1e-12, 1e-3 * (c - config.cost_cutoff)):
            stagnant += 1
            if stagnant >= 5:
                break
        else:
            stagnant = 0

    if not converged:
        ws.reset_unconstrained_columns()
        c = ws.current_cost()
        converged = c <= config.cost_cutoff

    return TomographyResult(
        v=DetectorMatrix(ws.v),
        rho=DiagonalState(ws.rho),
        omega_r=float(ws.omega),
        final_cost=float(c),
        cost_trace=np.asarray(trace),
        converged=bool(converged),
    )


def predicted_distribution(result: TomographyResult, t_us: float) -> ProbVector:
    """Model histogram P(n | t) at the reconstructed parameters."""
    p = np.sin(result.omega_r * t_us * US / 2.0) ** 2
    n = np.arange(result.rho.rho.size)
    p_id = result.rho.rho @ binom.pmf(n[None, :], n[:, None], p)
    return ProbVector(result.v.v @ p_id)


def fidelity_per_time(result: TomographyResult, data: HistogramDataset) -> np.ndarray:
    return np.array(
        [
            fidelity(predicted_distribution(result, float(t)), h)
            for t, h in zip(data.times_us, data.histograms)
        ]
    )


def learning_test(data: HistogramDataset, index: int, config: TomographyConfig | None = None) -> float:
    """Reconstruct without time ``index`` and score the held-out histogram.

    Returns the statistical overlap between the predicted and held-out
    distributions.
    """
    if len(data) < 3:
        raise ValueError("learning test needs at least 3 times")
    loo = data.without_time(index)
    result = reconstruct(loo, config)
    predicted = predicted_distribution(result, float(data.times_us[index]))
    return fidelity(predicted, data.histograms[index])


def _bootstrap_replica(args) -> TomographyResult:
    result, data, config, k = args
    replica_seed = config.rng_seed + k
    histograms = []
    for j, t in enumerate(data.times_us):
        dist = predicted_distribution(result, float(t))
        rng = np.random.default_rng([replica_seed, 1 + j])
        counts = rng.multinomial(int(data.shot_counts[j]), dist.entries)
        histograms.append(ProbVector(counts))
    replica_data = HistogramDataset(
        times_us=data.times_us,
        histograms=tuple(histograms),
        shot_counts=data.shot_counts,
    )
    return reconstruct(replica_data, replace(config, rng_seed=replica_seed))


def bootstrap(
    result: TomographyResult,
    data: HistogramDataset,
    config: TomographyConfig | None = None,
    jobs: int = 1,
) -> BootstrapEnsemble:
    """Parametric resampling of the fitted model at the original shot counts.

    Each replica dataset is drawn from the reconstructed distributions and
    refit from scratch with seed ``rng_seed + k``; summary statistics are
    assembled deterministically by replica index.
    """
    if not result.converged:
        raise ValueError("bootstrap requires a converged reconstruction")
    config = config or TomographyConfig()
    tasks = [(result, data, config, k) for k in range(config.bootstrap_replicas)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            replicas = list(pool.map(_bootstrap_replica, tasks))
    else:
        replicas = [_bootstrap_replica(t) for t in tasks]

    from .analysis import resolution_stats

    dim = max(r.v.n_max + 1 for r in replicas)
    omegas = np.array([r.omega_r for r in replicas])
    costs = np.array([r.final_cost for r in replicas])
    sigmas, diags = [], []
    for r in replicas:
        stats = resolution_stats(r.v, r.rho, RabiParams(r.omega_r), data.times_us)
        sigmas.append(stats.sigma)
        diags.append(stats.diagonal_mass)
    sigmas = np.array(sigmas)
    diags = np.array(diags)

    def padded_v(r: TomographyResult) -> np.ndarray:
        out = np.zeros((dim, dim))
        d = r.v.n_max + 1
        out[:d, :d] = r.v.v
        return out

    def padded_rho(r: TomographyResult) -> np.ndarray:
        out = np.zeros(dim)
        out[: r.rho.rho.size] = r.rho.rho
        return out

    v_stack = np.stack([padded_v(r) for r in replicas])
    rho_stack = np.stack([padded_rho(r) for r in replicas])
    summary = {
        "omega_r": (float(omegas.mean()), float(omegas.std())),
        "sigma": (float(sigmas.mean()), float(sigmas.std())),
        "diagonal_mass": (float(diags.mean()), float(diags.std())),
        "final_cost": (float(costs.mean()), float(costs.std())),
        "v_mean": v_stack.mean(axis=0),
        "v_std": v_stack.std(axis=0),
        "rho_mean": rho_stack.mean(axis=0),
        "rho_std": rho_stack.std(axis=0),
        "n_converged": int(sum(r.converged for r in replicas)),
    }
    return BootstrapEnsemble(replicas=tuple(replicas), summary=summary)


# ---------------------------------------------------------------------------
# result directory IO
# ---------------------------------------------------------------------------


def save_result(
    result: TomographyResult,
    out_dir: str | Path,
    data: HistogramDataset | None = None,
    config: TomographyConfig | None = None,
    extra: dict | None = None,
) -> None:
    """Write v.csv, rho.csv and report.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "v.csv", result.v.v, fmt="%.12g", delimiter=",")
    np.savetxt(out / "rho.csv", result.rho.rho, fmt="%.12g")
    report = {
        "omega_r_rad_per_s": result.omega_r,
        "final_cost": result.final_cost,
        "converged": result.converged,
        "cost_trace": [float(c) for c in result.cost_trace],
        "n_max": result.v.n_max,
    }
    if config is not None:
        report["config"] = asdict(config)
        report["seed"] = config.rng_seed
    if data is not None:
        report["times_us"] = [float(t) for t in data.times_us]
        report["fidelity_per_time"] = [float(f) for f in fidelity_per_time(result, data)]
    if extra:
        report.update(extra)
    (out / "report.json").write_text(json.dumps(report, indent=1) + "\n")


def load_result(result_dir: str | Path) -> tuple[TomographyResult, dict]:
    """Read a result directory back into a TomographyResult and its report."""
    result_dir = Path(result_dir)
    v = np.loadtxt(result_dir / "v.csv", delimiter=",")
    rho = np.loadtxt(result_dir / "rho.csv")
    report = json.loads((result_dir / "report.json").read_text())
    result = TomographyResult(
        v=DetectorMatrix(v),
        rho=DiagonalState(rho),
        omega_r=float(report["omega_r_rad_per_s"]),
        final_cost=float(report["final_cost"]),
        cost_trace=np.asarray(report.get("cost_trace", []), dtype=float),
        converged=bool(report["converged"]),
    )
    return result, report
