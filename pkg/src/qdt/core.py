"""Shared value types and probability primitives.

All types are immutable after construction (arrays are locked), so they can
be shared freely across worker processes.  Construction renormalizes within
a fixed tolerance and rejects anything that is not a valid distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Normalization tolerance enforced after construction or projection.
NORM_TOL = 1e-9


def _locked(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _pad_pair(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad the shorter of two vectors to a common length."""
    n = max(p.size, q.size)
    if p.size < n:
        p = np.pad(p, (0, n - p.size))
    if q.size < n:
        q = np.pad(q, (0, n - q.size))
    return p, q


@dataclass(frozen=True)
class ProbVector:
    """Probability distribution over counts n = 0, 1, ..., len-1.

    Entries must be non-negative; the vector is renormalized to unit sum on
    construction.  Tiny negative entries (>= -1e-9, numerical dust from
    upstream linear algebra) are clipped to zero.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.entries, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("probability vector must be a non-empty 1-d array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("probability vector contains non-finite entries")
        if arr.min() < -NORM_TOL:
            raise ValueError(f"negative probability entry: min = {arr.min():.3e}")
        arr = np.clip(arr, 0.0, None)
        total = arr.sum()
        if total <= 0.0:
            raise ValueError("probability vector sums to zero")
        object.__setattr__(self, "entries", _locked(arr / total))

    def __len__(self) -> int:
        return self.entries.size

    def padded(self, size: int) -> np.ndarray:
        """Entries zero-padded (or validated-truncated) to ``size``."""
        if size >= self.entries.size:
            return np.pad(self.entries, (0, size - self.entries.size))
        tail = self.entries[size:].sum()
        if tail > NORM_TOL:
            raise ValueError(f"cannot truncate: tail mass {tail:.3e} beyond size {size}")
        return self.entries[:size].copy()

    def mean(self) -> float:
        return float(np.arange(self.entries.size) @ self.entries)

    def second_moment(self) -> float:
        return float((np.arange(self.entries.size) ** 2) @ self.entries)


@dataclass(frozen=True)
class DetectorMatrix:
    """Column-stochastic response matrix.

    ``v[n, m]`` is the probability of reading out n counts when m particles
    arrive.  Columns are renormalized on construction; negative entries are
    rejected beyond the usual dust tolerance.
    """

    v: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.v, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"response matrix must be square, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("response matrix contains non-finite entries")
        if arr.min() < -NORM_TOL:
            raise ValueError(f"negative matrix entry: min = {arr.min():.3e}")
        arr = np.clip(arr, 0.0, None)
        sums = arr.sum(axis=0)
        if np.any(sums <= 0.0):
            raise ValueError("every column must carry positive mass")
        object.__setattr__(self, "v", _locked(arr / sums))

    @property
    def n_max(self) -> int:
        return self.v.shape[0] - 1

    @classmethod
    def identity(cls, n_max: int) -> "DetectorMatrix":
        return cls(np.eye(n_max + 1))

    def apply(self, p: ProbVector) -> ProbVector:
        """Propagate an arrival distribution through the detector."""
        return ProbVector(self.v @ p.padded(self.v.shape[1]))


@dataclass(frozen=True)
class DiagonalState:
    """Weights rho[N] of a number-diagonal many-body state."""

    rho: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho", ProbVector(self.rho).entries)

    @property
    def n_max(self) -> int:
        return self.rho.size - 1

    def mean(self) -> float:
        return float(np.arange(self.rho.size) @ self.rho)

    def var(self) -> float:
        n = np.arange(self.rho.size)
        mu = n @ self.rho
        return float((n - mu) ** 2 @ self.rho)

    @classmethod
    def gaussian(cls, mean: float, std: float, n_max: int | None = None) -> "DiagonalState":
        """Discretized Gaussian over N >= 0, truncated at mean + 6*std.

        ``std = 0`` collapses to a point mass at ``round(mean)``.
        """
        if mean < 0:
            raise ValueError("mean atom number must be >= 0")
        if std < 0:
            raise ValueError("atom-number spread must be >= 0")
        if n_max is None:
            n_max = int(np.ceil(mean + 6.0 * std))
        n = np.arange(n_max + 1)
        if std == 0.0:
            target = int(round(mean))
            if target > n_max:
                raise ValueError(f"point mass at N={target} exceeds n_max={n_max}")
            rho = np.zeros(n_max + 1)
            rho[target] = 1.0
        else:
            rho = np.exp(-0.5 * ((n - mean) / std) ** 2)
        return cls(rho)

    @classmethod
    def delta(cls, n_atoms: int, n_max: int | None = None) -> "DiagonalState":
        if n_max is None:
            n_max = n_atoms
        rho = np.zeros(n_max + 1)
        rho[n_atoms] = 1.0
        return cls(rho)


@dataclass(frozen=True)
class HistogramDataset:
    """Per-pulse-duration count histograms with their shot counts.

    Times are in microseconds and must be distinct; entries are sorted by
    time on construction.  Histograms are relative frequencies.
    """

    times_us: np.ndarray
    histograms: tuple[ProbVector, ...]
    shot_counts: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times_us, dtype=float)
        shots = np.asarray(self.shot_counts, dtype=int)
        hists = tuple(self.histograms)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("dataset needs at least one time")
        if not (len(hists) == times.size == shots.size):
            raise ValueError("times, histograms and shot counts must align")
        if np.any(times < 0):
            raise ValueError("pulse durations must be >= 0")
        if np.any(shots < 1):
            raise ValueError("shot counts must be >= 1")
        if not all(isinstance(h, ProbVector) for h in hists):
            raise ValueError("histograms must be ProbVector instances")
        order = np.argsort(times, kind="stable")
        times = times[order]
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be distinct (merge duplicate rows first)")
        sc = np.ascontiguousarray(shots[order])
        sc.setflags(write=False)
        object.__setattr__(self, "times_us", _locked(times))
        object.__setattr__(self, "histograms", tuple(hists[i] for i in order))
        object.__setattr__(self, "shot_counts", sc)

    def __len__(self) -> int:
        return self.times_us.size

    @property
    def n_max(self) -> int:
        return max(len(h) for h in self.histograms) - 1

    def observed_max_count(self) -> int:
        """Largest count with nonzero frequency anywhere in the dataset."""
        top = 0
        for h in self.histograms:
            nz = np.nonzero(h.entries)[0]
            if nz.size:
                top = max(top, int(nz[-1]))
        return top

    def padded_matrix(self, size: int) -> np.ndarray:
        """Histogram rows stacked into a (n_times, size) array."""
        return np.stack([h.padded(size) for h in self.histograms])

    def without_time(self, index: int) -> "HistogramDataset":
        """Leave-one-out copy with time ``index`` removed."""
        if not 0 <= index < len(self):
            raise IndexError(f"time index {index} out of range")
        keep = [j for j in range(len(self)) if j != index]
        return HistogramDataset(
            times_us=self.times_us[keep],
            histograms=tuple(self.histograms[j] for j in keep),
            shot_counts=self.shot_counts[keep],
        )


def hellinger_sq(p: ProbVector, q: ProbVector) -> float:
    """Squared Hellinger-type distance sum_n (sqrt(p_n) - sqrt(q_n))^2 in [0, 2]."""
    a, b = _pad_pair(p.entries, q.entries)
    return float(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2))


def fidelity(p: ProbVector, q: ProbVector) -> float:
    """Bhattacharyya overlap sum_n sqrt(p_n q_n) in [0, 1]."""
    a, b = _pad_pair(p.entries, q.entries)
    return float(np.sum(np.sqrt(a * b)))


def simplex_project(x: np.ndarray) -> ProbVector:
    """Euclidean projection of a real vector onto the probability simplex."""
    return ProbVector(simplex_project_raw(np.asarray(x, dtype=float)))


def simplex_project_raw(x: np.ndarray) -> np.ndarray:
    """Projection onto the simplex as a plain array (no ProbVector wrapping).

    Sort-and-threshold construction; entry order is preserved.  Accepts a
    vector or a matrix whose columns are projected independently.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot project non-finite values")
    single = x.ndim == 1
    cols = x[:, None] if single else x
    u = np.sort(cols, axis=0)[::-1]
    css = np.cumsum(u, axis=0) - 1.0
    idx = np.arange(1, cols.shape[0] + 1)[:, None]
    cond = u - css / idx > 0
    k = cols.shape[0] - 1 - np.argmax(cond[::-1], axis=0)
    tau = css[k, np.arange(cols.shape[1])] / (k + 1.0)
    out = np.clip(cols - tau, 0.0, None)
    return out[:, 0] if single else out
