"""Synthetic detectors, finite-shot dataset generation, and dataset file IO.

Dataset files come in two equivalent formats:

* CSV with header ``time_us,n,count`` and one row per (time, count value)
  carrying raw integer counts;
* JSON ``{"times_us": [...], "counts": [[...], ...]}`` with ``counts[j][n]``.

Both are emitted and ingested without loss.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DetectorMatrix, DiagonalState, HistogramDataset, ProbVector
from .rabi import DarkCountModel, RabiParams, discrete_gaussian_probs, ideal_distribution, poisson_pmf_vector

US = 1e-6


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed or validated."""


@dataclass(frozen=True)
class SyntheticDetectorSpec:
    """Noise model of a synthetic counting detector.

    sigma is the std of the Gaussian counting noise (integrated over unit
    bins), dark the Poisson mean of spurious counts, loss the per-atom
    detection loss probability.
    """

    sigma: float
    dark: DarkCountModel
    loss: float
    n_max: int

    def __post_init__(self) -> None:
        if not isinstance(self.dark, DarkCountModel):
            object.__setattr__(self, "dark", DarkCountModel(float(self.dark)))
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss must lie in [0, 1]")
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")


@dataclass(frozen=True)
class ExperimentPlan:
    """Measurement schedule for synthetic data generation."""

    times_us: np.ndarray
    shots_per_time: int
    rabi: RabiParams
    state: DiagonalState
    rng_seed: int

    def __post_init__(self) -> None:
        times = np.asarray(self.times_us, dtype=float)
        if times.size == 0:
            raise ValueError("plan needs at least one time")
        if self.shots_per_time < 1:
            raise ValueError("shots_per_time must be >= 1")
        object.__setattr__(self, "times_us", times)


def build_detector(spec: SyntheticDetectorSpec) -> DetectorMatrix:
    """Ground-truth response matrix for a synthetic detector.

    Column m applies binomial loss thinning, then the discrete-Gaussian
    counting blur, then the dark-count convolution.  Mass above n_max is
    folded into the n_max row so every column stays stochastic.
    """
    dim = spec.n_max + 1
    dark_pmf = poisson_pmf_vector(spec.dark.mean_dark)
    ext = dim + int(np.ceil(6.0 * spec.sigma)) + dark_pmf.size + 2

    # loss thinning: (ext, dim), k <= m surviving atoms
    from scipy.stats import binom

    m_cols = np.arange(dim)
    k_rows = np.arange(ext)
    if spec.loss == 0.0:
        loss_mat = np.eye(ext, dim)
    else:
        loss_mat = binom.pmf(k_rows[:, None], m_cols[None, :], 1.0 - spec.loss)

    # blur: (ext, ext) bin-integrated Gaussian around each surviving count
    if spec.sigma == 0.0:
        blur_mat = np.eye(ext)
    else:
        blur_mat = np.stack(
            [discrete_gaussian_probs(center, spec.sigma, ext) for center in range(ext)], axis=1
        )

    # dark counts: lower-triangular Toeplitz with the tail folded into the last row
    dark_mat = np.zeros((ext, ext))
    for shift, weight in enumerate(dark_pmf):
        dark_mat += weight * np.eye(ext, k=-shift)
    col_deficit = 1.0 - dark_mat.sum(axis=0)
    dark_mat[-1, :] += col_deficit

    full = dark_mat @ (blur_mat @ loss_mat)
    v = np.zeros((dim, dim))
    v[: dim - 1, :] = full[: dim - 1, :]
    v[dim - 1, :] = full[dim - 1 :, :].sum(axis=0)
    return DetectorMatrix(v)


def model_distribution(v: DetectorMatrix, state: DiagonalState, rabi: RabiParams, t_us: float) -> ProbVector:
    """Detected count distribution at pulse duration t_us (microseconds)."""
    if state.n_max > v.n_max:
        raise ValueError(
            f"state support (N <= {state.n_max}) exceeds detector range (n_max = {v.n_max})"
        )
    return v.apply(ideal_distribution(state, rabi, t_us * US))


def sample_dataset(plan: ExperimentPlan, v: DetectorMatrix) -> HistogramDataset:
    """Draw finite-shot histograms from the detector model.

    Each time uses its own RNG stream derived from (rng_seed, time index),
    so repeated calls with the same seed are bit-identical.
    """
    histograms = []
    for j, t_us in enumerate(plan.times_us):
        dist = model_distribution(v, plan.state, plan.rabi, float(t_us))
        rng = np.random.default_rng([plan.rng_seed, j])
        counts = rng.multinomial(plan.shots_per_time, dist.entries)
        histograms.append(ProbVector(counts))
    shots = np.full(plan.times_us.size, plan.shots_per_time, dtype=int)
    return HistogramDataset(times_us=plan.times_us, histograms=tuple(histograms), shot_counts=shots)


def _counts_from_histogram(hist: ProbVector, shots: int) -> np.ndarray:
    counts = np.rint(hist.entries * shots).astype(int)
    return counts


def write_dataset_csv(dataset: HistogramDataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_us", "n", "count"])
        for t, hist, shots in zip(dataset.times_us, dataset.histograms, dataset.shot_counts):
            counts = _counts_from_histogram(hist, int(shots))
            for n, c in enumerate(counts):
                writer.writerow([f"{t:.12g}", n, int(c)])


def write_dataset_json(dataset: HistogramDataset, path: str | Path) -> None:
    payload = {
        "times_us": [float(t) for t in dataset.times_us],
        "counts": [
            [int(c) for c in _counts_from_histogram(hist, int(shots))]
            for hist, shots in zip(dataset.histograms, dataset.shot_counts)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def _dataset_from_count_map(count_map: dict[float, dict[int, int]]) -> HistogramDataset:
    times = sorted(count_map)
    histograms = []
    shots = []
    for t in times:
        per_n = count_map[t]
        size = max(per_n) + 1
        counts = np.zeros(size)
        for n, c in per_n.items():
            counts[n] += c
        total = counts.sum()
        if total < 1:
            raise DatasetFormatError(f"time {t:g} carries no counts")
        histograms.append(ProbVector(counts))
        shots.append(int(total))
    return HistogramDataset(
        times_us=np.array(times), histograms=tuple(histograms), shot_counts=np.array(shots)
    )


def _ingest_csv(path: Path) -> HistogramDataset:
    count_map: dict[float, dict[int, int]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["time_us", "n", "count"]:
            raise DatasetFormatError(f"{path}: line 1: expected header 'time_us,n,count'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise DatasetFormatError(f"{path}: line {lineno}: expected 3 columns, got {len(row)}")
            try:
                t = float(row[0])
                n = int(row[1])
                c = int(row[2])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from exc
            if t < 0:
                raise DatasetFormatError(f"{path}: line {lineno}: negative time {t:g}")
            if n < 0:
                raise DatasetFormatError(f"{path}: line {lineno}: negative count value n={n}")
            if c < 0:
                raise DatasetFormatError(f"{path}: line {lineno}: negative count {c}")
            count_map.setdefault(t, {}).setdefault(n, 0)
            count_map[t][n] += c
    if not count_map:
        raise DatasetFormatError(f"{path}: no data rows")
    return _dataset_from_count_map(count_map)


def _ingest_json(path: Path) -> HistogramDataset:
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "times_us" not in payload or "counts" not in payload:
        raise DatasetFormatError(f"{path}: expected keys 'times_us' and 'counts'")
    times = payload["times_us"]
    counts = payload["counts"]
    if len(times) != len(counts):
        raise DatasetFormatError(f"{path}: {len(times)} times but {len(counts)} count rows")
    count_map: dict[float, dict[int, int]] = {}
    for j, (t, row) in enumerate(zip(times, counts)):
        t = float(t)
        if t < 0:
            raise DatasetFormatError(f"{path}: entry {j}: negative time {t:g}")
        per_n = count_map.setdefault(t, {})
        for n, c in enumerate(row):
            if c < 0 or int(c) != c:
                raise DatasetFormatError(f"{path}: entry {j}: bad count {c!r} at n={n}")
            per_n.setdefault(n, 0)
            per_n[n] += int(c)
    return _dataset_from_count_map(count_map)


def ingest(path: str | Path) -> HistogramDataset:
    """Read and validate a dataset file (CSV or JSON, by extension)."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"{path}: no such file")
    if path.suffix.lower() == ".json":
        return _ingest_json(path)
    return _ingest_csv(path)
