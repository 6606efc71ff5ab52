"""Command-line entry point: ``rydcycles <subcommand>``.

Exit codes: 0 success, 2 I/O or configuration problem, 3 simulation-quality
flag (too many aborted trajectories), 4 mismatched analysis inputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, resolve
from .exact import evolve_exact, product_state
from .meanfield import (MFState, NotPeriodic, classify_phases, evolve_mf, limit_cycle_metrics,
                        phase_row)
from .model import AllToAll, CollectiveCoupling, build_coupling_matrix, chain_coupling
from .observables import (NotApplicable, SeriesTooShort, fit_envelope, first_peak_lag,
                          fourier_spectrum, relative_fraction_of_means, scaling_collapse,
                          two_time_correlation)
from .twa import run_ensemble, worker_count

EXIT_OK, EXIT_IO, EXIT_QUALITY, EXIT_MISMATCH = 0, 2, 3, 4
PHASE_COLUMNS = ["omega", "delta_r", "phase_label", "re_lambda0", "im_lambda0",
                 "quasicycle_ratio", "T", "t_rs"]


class InputMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# output helpers


def _prepare_dir(path: str | Path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path: Path, header: list[str], columns: list) -> None:
    """CSV with a header row; floats at full precision so reruns are byte-identical."""
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def read_table(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_provenance(out: Path, cfg: RunConfig | None, extra: dict, name: str = "metadata.json") -> None:
    meta = {"version": __version__, "argv": sys.argv[1:]}
    if cfg is not None:
        meta["config"] = cfg.resolved()
        (out / "config.resolved").write_text(cfg.to_text())
    meta.update(extra)
    (out / name).write_text(json.dumps(meta, indent=2, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _json_float(x: float):
    return None if not np.isfinite(x) else float(x)


# ---------------------------------------------------------------------------
# mean field


def parse_range(text: str) -> np.ndarray:
    """``lo:hi:step`` inclusive of ``hi``, or a comma-separated list."""
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad range {text!r}")
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return np.round(lo + step * np.arange(n), 10)
    return np.array([float(x) for x in text.split(",")])


def _collective(cfg: RunConfig) -> CollectiveCoupling:
    if not isinstance(cfg.interaction, AllToAll):
        raise ConfigError("mean-field commands need interaction = all_to_all")
    return cfg.interaction.collective()


def _grid_key(omega: float, delta_r: float) -> tuple[str, str]:
    return f"{omega:.10g}", f"{delta_r:.10g}"


def _scan_chunk(job):
    base, chi, points, t_total = job
    params = [replace(base, omega_s=om, omega_r=om, delta_r=dr) for om, dr in points]
    labels = classify_phases(params, chi, t_total=t_total)
    return [phase_row(om, dr, lab) for (om, dr), lab in zip(points, labels)]


def cmd_mf_scan(args, cfg: RunConfig) -> int:
    omegas = parse_range(args.omega)
    deltas = parse_range(args.delta_r)
    if len(omegas) < 2 or len(deltas) < 2:
        raise ConfigError("the scan grid needs at least 2 x 2 points")
    out = _prepare_dir(args.out)
    table = out / "phase_diagram.csv"
    chi = _collective(cfg)
    grid = [(float(om), float(dr)) for om in omegas for dr in deltas]
    done = {}
    if table.exists():
        with open(table, newline="") as fh:
            for row in csv.DictReader(fh):
                done[_grid_key(float(row["omega"]), float(row["delta_r"]))] = row
    todo = [p for p in grid if _grid_key(*p) not in done]
    if not todo:
        return EXIT_OK
    chunks = [todo[i:i + args.chunk] for i in range(0, len(todo), args.chunk)]
    jobs = [(cfg.params, chi, chunk, args.t_total) for chunk in chunks]
    new_file = not table.exists()
    with open(table, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PHASE_COLUMNS)
        if new_file:
            writer.writeheader()
        workers = min(worker_count(), len(jobs))
        pool = ProcessPoolExecutor(workers) if workers > 1 else None
        try:
            results = pool.map(_scan_chunk, jobs) if pool else map(_scan_chunk, jobs)
            for rows in results:
                for row in rows:
                    row = {k: _fmt(v) for k, v in row.items()}
                    writer.writerow(row)
                    done[_grid_key(float(row["omega"]), float(row["delta_r"]))] = row
                fh.flush()
        finally:
            if pool:
                pool.shutdown()
    # canonical grid order, so interrupted and uninterrupted scans end byte-identical
    with open(table, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PHASE_COLUMNS)
        writer.writeheader()
        for p in grid:
            writer.writerow(done[_grid_key(*p)])
    write_provenance(out, cfg, {"omega_grid": omegas, "delta_r_grid": deltas,
                                "t_total": args.t_total})
    return EXIT_OK


def cmd_mf_evolve(args, cfg: RunConfig) -> int:
    out = _prepare_dir(args.out)
    t_end = args.t_end if args.t_end is not None else cfg.twa.t_end
    traj = evolve_mf(MFState.ground(), cfg.params, _collective(cfg), t_end,
                     sample_dt=cfg.twa.record_dt)
    write_table(out / "mf_trajectory.csv", ["time", "n_s", "n_r"], [traj.t, traj.n_s, traj.n_r])
    extra = {}
    try:
        m = limit_cycle_metrics(traj)
        extra["cycle_metrics"] = {"T": m.period, "t_rs": m.t_rs, "dT_rs": m.dT_rs,
                                  "amplitude_s": m.amplitude_s, "amplitude_r": m.amplitude_r}
    except NotPeriodic as exc:
        extra["cycle_metrics"] = None
        extra["cycle_note"] = str(exc)
    write_provenance(out, cfg, extra)
    return EXIT_OK


# ---------------------------------------------------------------------------
# exact oracle


def cmd_exact_run(args, cfg: RunConfig) -> int:
    out = _prepare_dir(args.out)
    n = args.n_atoms or cfg.n_atoms
    couplings = (chain_coupling(n, cfg.interaction) if n
                 else build_coupling_matrix(cfg.lattice, cfg.interaction))
    n = couplings.N
    t_end = args.t_end if args.t_end is not None else cfg.twa.t_end
    traj = evolve_exact(product_state(n), cfg.params, couplings, t_end, dt=cfg.twa.dt,
                        sample_dt=cfg.twa.record_dt)
    nt = len(traj.t)
    write_table(out / "exact.csv", ["time", "site", "n_s", "n_r"],
                [np.repeat(traj.t, n), np.tile(np.arange(n), nt), traj.n_s.ravel(), traj.n_r.ravel()])
    write_provenance(out, cfg, {"n_atoms": n, "geometry": "chain" if (args.n_atoms or cfg.n_atoms)
                                else "lattice"})
    return EXIT_OK


# ---------------------------------------------------------------------------
# OSDTWA


def _write_ensemble(out: Path, cfg: RunConfig, res) -> None:
    write_table(out / "ensemble.csv", ["time", "n_s", "n_r", "f_rs"], [res.t, res.n_s, res.n_r, res.f_rs])
    n_ok, nt = res.traj_n_s.shape
    ok_index = [i for i in range(res.n_traj) if i not in set(res.aborted)]
    header = ["trajectory", "time", "n_s", "n_r"]
    cols = [np.repeat(ok_index, nt), np.tile(res.t, n_ok), res.traj_n_s.ravel(), res.traj_n_r.ravel()]
    if res.window_n_s is not None:
        header += ["window_n_s", "window_n_r"]
        cols += [res.window_n_s.ravel(), res.window_n_r.ravel()]
        wf = relative_fraction_of_means(np.clip(res.window_n_s.mean(0), 0, 1),
                                        np.clip(res.window_n_r.mean(0), 0, 1))
        write_table(out / "window.csv", ["time", "n_s", "n_r", "f_rs"],
                    [res.t, res.window_n_s.mean(0), res.window_n_r.mean(0), wf])
    write_table(out / "trajectories.csv", header, cols)
    if res.snapshots:
        coords = cfg.lattice.coords()
        rows_i, rows_j, vals, times = [], [], [], []
        for snap in res.snapshots:
            rows_i.append(coords[:, 0])
            rows_j.append(coords[:, 1])
            vals.append(snap.f_rs)
            times.append(np.full(len(coords), snap.time))
        write_table(out / "snapshots.csv", ["site_i", "site_j", "f_rs_l", "time"],
                    [np.concatenate(rows_i), np.concatenate(rows_j), np.concatenate(vals),
                     np.concatenate(times)])


def cmd_twa_run(args, cfg: RunConfig) -> int:
    base = _prepare_dir(args.out)
    sizes = [int(x) for x in args.sizes.split(",")] if args.sizes else list(cfg.sizes)
    runs = [(cfg.with_size(L), base / f"L{L}") for L in sizes] if sizes else [(cfg, base)]
    flagged = False
    for run_cfg, out in runs:
        out = _prepare_dir(out)
        res = run_ensemble(run_cfg)
        _write_ensemble(out, run_cfg, res)
        write_provenance(out, run_cfg, {"ensemble": res.metadata()})
        if res.unreliable:
            print(f"warning: {res.n_aborted}/{res.n_traj} trajectories aborted in {out}",
                  file=sys.stderr)
            flagged = True
    return EXIT_QUALITY if flagged else EXIT_OK


# ---------------------------------------------------------------------------
# analysis


class _Run:
    """Per-trajectory series of one OSDTWA output directory (or trajectories.csv)."""

    def __init__(self, path: str, window: bool):
        p = Path(path)
        self.table = p / "trajectories.csv" if p.is_dir() else p
        if not self.table.exists():
            raise FileNotFoundError(f"no trajectories table at {self.table}")
        meta_path = self.table.parent / "metadata.json"
        self.meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        cols = read_table(self.table)
        traj = cols["trajectory"]
        ids = np.unique(traj)
        t = cols["time"][traj == ids[0]]
        self.dt = float(t[1] - t[0])
        if not np.allclose(np.diff(t), self.dt, rtol=1e-9, atol=1e-12):
            raise InputMismatch(f"non-uniform time grid in {self.table}")
        key_s, key_r = ("window_n_s", "window_n_r") if window else ("n_s", "n_r")
        if key_s not in cols:
            raise InputMismatch(f"{self.table} has no {key_s} column")
        self.n_s = cols[key_s].reshape(len(ids), -1)
        self.n_r = cols[key_r].reshape(len(ids), -1)
        self.t = t
        self.hashes = {str(self.table): file_hash(self.table)}
        if meta_path.exists():
            self.hashes[str(meta_path)] = file_hash(meta_path)
        ens = self.meta.get("ensemble", {})
        cfg = self.meta.get("config", {})
        self.n_atoms = ens.get("n_atoms")
        if window and cfg.get("subsystem_window"):
            self.n_atoms = cfg["subsystem_window"] ** 2
        self.t_transient = cfg.get("t_transient", 0.0)


def _common_dt(runs) -> float:
    dts = {round(r.dt, 12) for r in runs}
    if len(dts) > 1:
        raise InputMismatch(f"inputs have different time steps: {sorted(dts)}")
    return runs[0].dt


def _correlations(run: "_Run", dt: float, t_transient: float, t_max_lag: float):
    kw = dict(dt=dt, t_transient=t_transient, t_max_lag=t_max_lag)
    return {
        "rr": two_time_correlation(run.n_r, run.n_r, labels=("r", "r"), **kw),
        "rs": two_time_correlation(run.n_r, run.n_s, labels=("r", "s"), **kw),
        "ss": two_time_correlation(run.n_s, run.n_s, labels=("s", "s"), **kw),
    }


def _lag_defaults(args, run: "_Run") -> tuple[float, float]:
    transient = args.t_transient if args.t_transient is not None else run.t_transient
    duration = run.t[-1] - run.t[0]
    lag = args.t_max_lag if args.t_max_lag is not None else (duration - transient) / 10.0
    return transient, lag


def _envelope(corr) -> dict:
    try:
        fit = fit_envelope(corr)
    except NotApplicable as exc:
        return {"A": None, "tau": None, "note": str(exc)}
    return {"A": fit.amplitude, "tau": _json_float(fit.tau), "residual": fit.residual,
            "decaying": fit.decaying, "n_peaks": fit.n_peaks}


def cmd_analyze(args, cfg: RunConfig | None) -> int:
    out = _prepare_dir(args.out)
    mode = args.mode
    if mode == "cycle-metrics":
        if len(args.inputs) != 1:
            raise InputMismatch("cycle-metrics takes exactly one trajectory table")
        path = Path(args.inputs[0])
        cols = read_table(path)
        t = cols["time"]
        if not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=1e-12):
            raise InputMismatch(f"non-uniform time grid in {path}")
        start = np.searchsorted(t, args.t_transient or 0.0)
        m = limit_cycle_metrics(t[start:], cols["n_s"][start:], cols["n_r"][start:])
        result = {"T": m.period, "t_rs": m.t_rs, "dT_rs": m.dT_rs,
                  "amplitude_s": m.amplitude_s, "amplitude_r": m.amplitude_r}
        write_provenance(out, None, {"inputs": {str(path): file_hash(path)}, "cycle_metrics": result},
                         "analysis.json")
        return EXIT_OK

    runs = [_Run(p, args.window) for p in args.inputs]
    dt = _common_dt(runs)
    hashes = {k: v for r in runs for k, v in r.hashes.items()}

    if mode in ("correlate", "spectrum"):
        if len(runs) != 1:
            raise InputMismatch(f"{mode} takes exactly one run")
        run = runs[0]
        transient, lag = _lag_defaults(args, run)
        corr = _correlations(run, dt, transient, lag)
        result = {"t_transient": transient, "t_max_lag": lag, "n_traj": corr["rr"].n_traj}
        if mode == "correlate":
            write_table(out / "correlation.csv", ["lag", "G_rr", "G_rs", "G_ss"],
                        [corr["rr"].lags, corr["rr"].values, corr["rs"].values, corr["ss"].values])
            try:
                result["first_peak_G_rs"] = first_peak_lag(corr["rs"])
            except NotApplicable as exc:
                result["first_peak_G_rs"] = None
                result["note"] = str(exc)
            result["envelope_G_rr"] = _envelope(corr["rr"])
        else:
            spec_r = fourier_spectrum(corr["rr"], args.taper, run.n_atoms)
            spec_s = fourier_spectrum(corr["ss"], args.taper, run.n_atoms)
            w, mag_r = spec_r.half()
            write_table(out / "spectrum.csv", ["omega", "F_r", "F_s"], [w, mag_r, spec_s.half()[1]])
            try:
                peak_w, peak_h = spec_r.peak(args.omega_min)
                result.update(peak_omega=peak_w, peak_height=peak_h,
                              harmonics=spec_r.harmonics(peak_w))
            except NotApplicable as exc:
                result.update(peak_omega=None, note=str(exc))
            result["resolution"] = spec_r.resolution
            result["taper"] = args.taper
            result["envelope_G_rr"] = _envelope(corr["rr"])
        write_provenance(out, None, {"inputs": hashes, mode: result}, "analysis.json")
        return EXIT_OK

    if mode == "collapse":
        spectra = []
        for run in runs:
            if run.n_atoms is None:
                raise InputMismatch(f"{run.table}: system size unknown (metadata.json missing)")
            transient, lag = _lag_defaults(args, run)
            corr = two_time_correlation(run.n_r, run.n_r, dt, transient, lag)
            spectra.append((run.n_atoms, fourier_spectrum(corr, args.taper, run.n_atoms)))
        lags = {round(s.omega[1], 12) for _, s in spectra}
        if len(lags) > 1:
            raise InputMismatch("inputs give different frequency grids; pass --t-max-lag")
        report = scaling_collapse(spectra, omega_min=args.omega_min)
        write_provenance(out, None, {"inputs": hashes, "collapse_report": report.as_dict()},
                         "analysis.json")
        print(report.verdict)
        return EXIT_OK
    raise ValueError(f"unknown analysis mode {mode!r}")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rydcycles", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", help="key = value configuration file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a configuration key (repeatable; wins over the file)")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("mf-scan", help="mean-field phase diagram over an Omega x Delta_r grid")
    common(p)
    p.add_argument("--omega", default="0.5:4:0.1", help="lo:hi:step or a comma list")
    p.add_argument("--delta-r", default="0:6:0.1", help="lo:hi:step or a comma list")
    p.add_argument("--t-total", type=float, default=200.0, help="integration time per start")
    p.add_argument("--chunk", type=int, default=64, help="grid points per batch")
    p.set_defaults(func=cmd_mf_scan)

    p = sub.add_parser("mf-evolve", help="mean-field trajectory from the ground state")
    common(p)
    p.add_argument("--t-end", type=float)
    p.set_defaults(func=cmd_mf_evolve)

    p = sub.add_parser("exact-run", help="exact Lindblad evolution for a few atoms")
    common(p)
    p.add_argument("--n-atoms", type=int, help="atoms on a unit-spaced chain (default: the lattice)")
    p.add_argument("--t-end", type=float)
    p.set_defaults(func=cmd_exact_run)

    p = sub.add_parser("twa-run", help="OSDTWA ensemble on the configured lattice")
    common(p)
    p.add_argument("--sizes", help="comma list of edge lengths L; one subdirectory per size")
    p.set_defaults(func=cmd_twa_run)

    p = sub.add_parser("analyze", help="correlations, spectra, scaling collapse, cycle metrics")
    p.add_argument("mode", choices=["correlate", "spectrum", "collapse", "cycle-metrics"])
    p.add_argument("inputs", nargs="+", help="twa-run output directories (mf trajectory CSV for cycle-metrics)")
    common(p, needs_config=False)
    p.add_argument("--t-transient", type=float)
    p.add_argument("--t-max-lag", type=float)
    p.add_argument("--taper", choices=["none", "cosine"], default="none")
    p.add_argument("--omega-min", type=float, default=0.5, help="lower edge of the peak search band")
    p.add_argument("--window", action="store_true", help="use the subsystem-window series")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args.config, args.set) if hasattr(args, "config") else None
        return args.func(args, cfg)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InputMismatch, SeriesTooShort, NotApplicable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
