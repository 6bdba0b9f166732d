"""Command-line pipeline: simulate -> reconstruct -> analyze -> metrology.

Commands compose through files only.  Frequencies are entered in cyclic kHz
(converted to angular rad/s internally); every command is deterministic
under a fixed --seed, with QDT_SEED as the environment fallback.

Exit codes: 0 success, 1 usage or IO error, 2 reconstruction did not
converge.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import DiagonalState
from .rabi import DarkCountModel, RabiParams
from .simulate import (
    DatasetFormatError,
    ExperimentPlan,
    SyntheticDetectorSpec,
    build_detector,
    ingest,
    sample_dataset,
    write_dataset_csv,
    write_dataset_json,
)
from .tomography import (
    TomographyConfig,
    bootstrap,
    learning_test,
    load_result,
    reconstruct,
    save_result,
)

KHZ_TO_RAD_S = 2.0 * np.pi * 1e3


class _CliError(Exception):
    """Usage or IO failure; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise _CliError(message)


def _default_seed() -> int:
    env = os.environ.get("QDT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise _CliError(f"QDT_SEED must be an integer, got {env!r}") from exc


def _parse_times(spec: str) -> np.ndarray:
    """Either 'start:stop:count' (inclusive linspace) or a comma list."""
    try:
        if ":" in spec:
            start, stop, count = spec.split(":")
            return np.linspace(float(start), float(stop), int(count))
        return np.array([float(x) for x in spec.split(",")])
    except ValueError as exc:
        raise _CliError(f"cannot parse times {spec!r}: {exc}") from exc


def _parse_grid(spec: str, log: bool = False) -> np.ndarray:
    try:
        if ":" in spec:
            start, stop, count = spec.split(":")
            if log:
                return np.geomspace(float(start), float(stop), int(count))
            return np.linspace(float(start), float(stop), int(count))
        return np.array([float(x) for x in spec.split(",")])
    except ValueError as exc:
        raise _CliError(f"cannot parse grid {spec!r}: {exc}") from exc


def _write_manifest(out_dir: Path, command: str, params: dict, seed: int | None,
                    inputs: list[str], outputs: list[str], started: float) -> None:
    """Append a run record to the directory's manifest."""
    path = out_dir / "manifest.json"
    records = []
    if path.exists():
        records = json.loads(path.read_text())
    records.append(
        {
            "command": command,
            "tool_version": __version__,
            "params": params,
            "seed": seed,
            "inputs": inputs,
            "outputs": outputs,
            "duration_s": round(time.monotonic() - started, 3),
            "created_unix": time.time(),
        }
    )
    path.write_text(json.dumps(records, indent=1, default=str) + "\n")


def _out_dir(path_str: str) -> Path:
    out = Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    np.savetxt(path, matrix, fmt="%.12g", delimiter=",")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    started = time.monotonic()
    times = _parse_times(args.times)
    if args.shots < 1:
        raise _CliError("--shots must be >= 1")
    state = DiagonalState.gaussian(args.n_mean, args.n_std)
    rabi = RabiParams(args.omega_khz * KHZ_TO_RAD_S)
    spec = SyntheticDetectorSpec(
        sigma=args.sigma,
        dark=DarkCountModel(args.dark),
        loss=args.loss,
        n_max=state.n_max,
    )
    detector = build_detector(spec)
    plan = ExperimentPlan(
        times_us=times, shots_per_time=args.shots, rabi=rabi, state=state, rng_seed=args.seed
    )
    dataset = sample_dataset(plan, detector)

    out = _out_dir(args.out)
    write_dataset_csv(dataset, out / "dataset.csv")
    write_dataset_json(dataset, out / "dataset.json")
    _save_matrix_csv(out / "v_true.csv", detector.v)
    _write_manifest(
        out,
        "simulate",
        {
            "times_us": [float(t) for t in times],
            "shots": args.shots,
            "omega_khz": args.omega_khz,
            "n_mean": args.n_mean,
            "n_std": args.n_std,
            "sigma": args.sigma,
            "dark": args.dark,
            "loss": args.loss,
        },
        args.seed,
        [],
        ["dataset.csv", "dataset.json", "v_true.csv"],
        started,
    )
    return 0


def _engine_config(args) -> TomographyConfig:
    return TomographyConfig(
        cost_cutoff=args.cutoff,
        max_outer_iters=args.max_outer,
        rng_seed=args.seed,
        cost_kind=args.cost_kind,
    )


def _cmd_reconstruct(args) -> int:
    started = time.monotonic()
    data = ingest(args.data)
    config = _engine_config(args)
    result = reconstruct(data, config)

    extra: dict = {}
    if args.learn_test is not None:
        if not 0 <= args.learn_test < len(data):
            raise _CliError(f"--learn-test index must be in 0..{len(data) - 1}")
        extra["learn_test"] = {
            "held_out_index": args.learn_test,
            "held_out_time_us": float(data.times_us[args.learn_test]),
            "fidelity": learning_test(data, args.learn_test, config),
        }
    if args.bootstrap:
        ensemble = bootstrap(result, data, config, jobs=args.jobs)
        summary = ensemble.summary
        extra["bootstrap"] = {
            "replicas": len(ensemble.replicas),
            "omega_r_mean_rad_per_s": summary["omega_r"][0],
            "omega_r_std_rad_per_s": summary["omega_r"][1],
            "sigma_mean": summary["sigma"][0],
            "sigma_std": summary["sigma"][1],
            "diagonal_mass_mean": summary["diagonal_mass"][0],
            "diagonal_mass_std": summary["diagonal_mass"][1],
            "n_converged": summary["n_converged"],
        }

    out = _out_dir(args.out)
    save_result(result, out, data=data, config=config, extra=extra)
    _write_manifest(
        out,
        "reconstruct",
        {"cutoff": args.cutoff, "max_outer": args.max_outer, "cost_kind": args.cost_kind,
         "bootstrap": args.bootstrap, "learn_test": args.learn_test},
        args.seed,
        [args.data],
        ["v.csv", "rho.csv", "report.json"],
        started,
    )
    if not result.converged:
        print(f"reconstruction did not converge: final cost {result.final_cost:.4g}", file=sys.stderr)
        return 2
    return 0


def _cmd_learn_test(args) -> int:
    started = time.monotonic()
    data = ingest(args.data)
    config = _engine_config(args)
    indices = range(len(data)) if args.index is None else [args.index]
    rows = []
    for j in indices:
        if not 0 <= j < len(data):
            raise _CliError(f"--index must be in 0..{len(data) - 1}")
        rows.append(
            {
                "held_out_index": int(j),
                "held_out_time_us": float(data.times_us[j]),
                "fidelity": learning_test(data, int(j), config),
            }
        )
    out = _out_dir(args.out)
    (out / "learn_test.json").write_text(json.dumps(rows, indent=1) + "\n")
    _write_manifest(
        out,
        "learn-test",
        {"index": args.index, "cutoff": args.cutoff, "max_outer": args.max_outer},
        args.seed,
        [args.data],
        ["learn_test.json"],
        started,
    )
    return 0


def _cmd_analyze(args) -> int:
    from .analysis import (
        assignment_fidelity,
        default_phase_grid,
        fisher_sweep,
        povm_from_matrix,
        resolution_stats,
        wigner,
        wigner_negativity,
    )

    started = time.monotonic()
    result_dir = Path(args.result)
    if not (result_dir / "v.csv").exists():
        raise _CliError(f"missing result file {result_dir / 'v.csv'}")
    result, report = load_result(result_dir)
    if "times_us" not in report:
        raise _CliError("report.json lacks times_us; re-run reconstruct on the dataset")
    times = np.asarray(report["times_us"], dtype=float)
    rabi = RabiParams(result.omega_r)
    out = _out_dir(args.out)

    povm = povm_from_matrix(result.v)
    axis = default_phase_grid()
    wigner_minima = {}
    outputs = []
    for n in args.wigner_n:
        if n > result.v.n_max:
            raise _CliError(f"--wigner-n {n} beyond detector range {result.v.n_max}")
        grid = wigner(povm, n, axis, axis)
        rows = np.column_stack(
            [
                np.repeat(axis, axis.size),
                np.tile(axis, axis.size),
                grid.values.reshape(-1),
            ]
        )
        name = f"wigner_n{n}.csv"
        np.savetxt(out / name, rows, fmt="%.12g", delimiter=",", header="x,p,value", comments="")
        wigner_minima[str(n)] = wigner_negativity(grid)
        outputs.append(name)

    thetas = np.linspace(args.theta_min, args.theta_max, args.theta_points)
    state = result.rho
    v_used = result.v if not args.ideal else None
    if v_used is None:
        from .core import DetectorMatrix

        v_used = DetectorMatrix.identity(state.n_max)
    f_vals = fisher_sweep(v_used, state, thetas)
    mean_n = state.mean()
    f_ideal = mean_n * np.cos(thetas / 2.0) ** 2
    np.savetxt(
        out / "fisher.csv",
        np.column_stack([thetas, f_vals, f_ideal]),
        fmt="%.12g",
        delimiter=",",
        header="theta,F,F_ideal",
        comments="",
    )
    outputs.append("fisher.csv")

    stats = resolution_stats(result.v, result.rho, rabi, times)
    analysis = {
        "diagonal_mass": stats.diagonal_mass,
        "sigma": stats.sigma,
        "offset_dist": {
            "k": [int(k) for k in stats.offsets],
            "p": [float(p) for p in stats.offset_dist],
        },
        "assignment_fidelity": {
            str(m): assignment_fidelity(result.v, m)
            for m in range(min(16, result.v.n_max + 1))
        },
        "wigner_min": wigner_minima,
        "mean_atom_number": mean_n,
    }
    (out / "analysis.json").write_text(json.dumps(analysis, indent=1) + "\n")
    outputs.append("analysis.json")
    _write_manifest(
        out,
        "analyze",
        {"wigner_n": args.wigner_n, "ideal": args.ideal},
        None,
        [str(result_dir)],
        outputs,
        started,
    )
    return 0


def _load_detector(args, needed_n_max: int):
    """Detector source: reconstructed v.csv, synthetic spec, or ideal."""
    from .core import DetectorMatrix

    if args.ideal:
        return None, "ideal"
    if args.detector is not None:
        v = np.loadtxt(args.detector, delimiter=",")
        return DetectorMatrix(v), f"file:{args.detector}"
    spec = SyntheticDetectorSpec(
        sigma=args.sigma, dark=DarkCountModel(args.dark), loss=args.loss, n_max=needed_n_max
    )
    return build_detector(spec), f"synthetic(sigma={args.sigma},dark={args.dark},loss={args.loss})"


def _cmd_metrology(args) -> int:
    from .metrology import gain_map, gain_scaling

    started = time.monotonic()
    out = _out_dir(args.out)
    outputs = []
    report: dict = {}

    modes = [m for m, on in (("map", args.map), ("vs-s", args.vs_s), ("scaling", args.scaling)) if on]
    if not modes:
        raise _CliError("choose at least one of --map, --vs-s, --scaling")

    if args.map or args.vs_s:
        s_axis = _parse_grid(args.s_grid, log=True)
        dn_axis = _parse_grid(args.dn_grid) if args.map else np.array([args.dn])
        support = int(np.ceil(args.n_mean + 6 * max(float(dn_axis.max()), 1.0)))
        detector, detector_desc = _load_detector(args, support)
        grid = gain_map(args.n_mean, detector, s_axis, dn_axis)
        if args.map:
            rows = [
                (s, dn, grid.gain[i, j])
                for i, s in enumerate(s_axis)
                for j, dn in enumerate(dn_axis)
            ]
            np.savetxt(out / "gain_map.csv", rows, fmt="%.12g", delimiter=",",
                       header="s,dn,G", comments="")
            outputs.append("gain_map.csv")
            report["map"] = {
                "detector": detector_desc,
                "n_mean": args.n_mean,
                "max_gain": float(grid.gain.max()),
                "theta_opt": grid.theta_opt.tolist(),
            }
        if args.vs_s:
            j = int(np.argmin(np.abs(dn_axis - args.dn)))
            np.savetxt(
                out / "gain_vs_s.csv",
                np.column_stack([s_axis, grid.gain[:, j]]),
                fmt="%.12g",
                delimiter=",",
                header="s,G",
                comments="",
            )
            outputs.append("gain_vs_s.csv")
            report["vs_s"] = {
                "detector": detector_desc,
                "n_mean": args.n_mean,
                "dn": float(dn_axis[j]),
                "theta_opt": grid.theta_opt[:, j].tolist(),
            }

    if args.scaling:
        n_axis = _parse_grid(args.n_grid, log=True)
        support = int(np.ceil(n_axis.max() + 6 * np.sqrt(n_axis.max())))
        ideal_curve = gain_scaling(None, n_axis)
        if args.ideal or (args.detector is None and args.sigma == 0 and args.dark == 0):
            noisy_curve = ideal_curve
            detector_desc = "ideal"
        else:
            detector, detector_desc = _load_detector(args, support)
            noisy_curve = gain_scaling(detector, n_axis) if detector is not None else ideal_curve
        np.savetxt(
            out / "gain_scaling.csv",
            np.column_stack([n_axis, ideal_curve.gain, noisy_curve.gain]),
            fmt="%.12g",
            delimiter=",",
            header="n_mean,G_ideal,G_noisy",
            comments="",
        )
        outputs.append("gain_scaling.csv")
        report["scaling"] = {
            "detector": detector_desc,
            "s_opt_ideal": ideal_curve.s_opt.tolist(),
            "theta_opt_ideal": ideal_curve.theta_opt.tolist(),
            "s_opt_noisy": noisy_curve.s_opt.tolist(),
        }

    (out / "metrology_report.json").write_text(json.dumps(report, indent=1) + "\n")
    outputs.append("metrology_report.json")
    _write_manifest(out, "metrology", {"modes": modes}, args.seed, [], outputs, started)
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_engine_flags(p: _Parser) -> None:
    p.add_argument("--cutoff", type=float, default=0.01, help="stopping value of the summed distance")
    p.add_argument("--max-outer", type=int, default=500, help="outer iteration budget")
    p.add_argument("--cost-kind", choices=["hellinger", "kl"], default="hellinger")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for bootstrap replicas")


def build_parser() -> _Parser:
    parser = _Parser(prog="qdt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"qdt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with a known detector")
    p.add_argument("--times", default="0:56:8",
                   help="pulse durations in us: 'start:stop:count' or comma list")
    p.add_argument("--shots", type=int, default=1106)
    p.add_argument("--omega-khz", type=float, default=8.2,
                   help="cyclic coupling frequency in kHz (angular = 2*pi*1e3*this)")
    p.add_argument("--n-mean", type=float, default=35.4)
    p.add_argument("--n-std", type=float, default=6.4)
    p.add_argument("--sigma", type=float, default=0.4, help="counting noise std, atoms")
    p.add_argument("--dark", type=float, default=0.27, help="mean dark counts per shot")
    p.add_argument("--loss", type=float, default=0.0, help="per-atom detection loss probability")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct detector, state, and frequency")
    p.add_argument("--data", required=True, help="dataset CSV or JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--bootstrap", type=int, default=0, metavar="K",
                   help="resample K replica datasets for error bars")
    p.add_argument("--learn-test", type=int, default=None, metavar="J",
                   help="also score the held-out time index J")
    _add_engine_flags(p)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("learn-test", help="leave-one-out prediction fidelity")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", type=int, default=None, help="held-out time index (default: all)")
    p.add_argument("--seed", type=int, default=None)
    _add_engine_flags(p)
    p.set_defaults(func=_cmd_learn_test)

    p = sub.add_parser("analyze", help="operator, resolution, and information analysis")
    p.add_argument("--result", required=True, help="reconstruction output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--wigner-n", type=lambda s: [int(x) for x in s.split(",")],
                   default=[0, 1, 5, 10])
    p.add_argument("--ideal", action="store_true",
                   help="information sweep with an ideal (identity) detector")
    p.add_argument("--theta-min", type=float, default=0.1)
    p.add_argument("--theta-max", type=float, default=3.0)
    p.add_argument("--theta-points", type=int, default=59)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("metrology", help="phase-sensitivity gain studies")
    p.add_argument("--detector", default=None, help="path to a response matrix CSV")
    p.add_argument("--ideal", action="store_true", help="ideal detection (no response matrix)")
    p.add_argument("--sigma", type=float, default=0.4)
    p.add_argument("--dark", type=float, default=0.27)
    p.add_argument("--loss", type=float, default=0.0)
    p.add_argument("--n-mean", type=float, default=36.0)
    p.add_argument("--dn", type=float, default=6.0)
    p.add_argument("--s-grid", default="0.01:1:16", help="squeezing grid (log spaced)")
    p.add_argument("--dn-grid", default="0:6:13", help="number-fluctuation grid")
    p.add_argument("--n-grid", default="30:300:8", help="mean-number grid for --scaling")
    p.add_argument("--map", action="store_true", help="gain over (s, dn) grid")
    p.add_argument("--vs-s", action="store_true", help="gain versus s at fixed dn")
    p.add_argument("--scaling", action="store_true", help="gain versus mean number")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_metrology)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
