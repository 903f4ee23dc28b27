"""Batch driver: simulate -> tomo -> fit -> report.

Every stage reads its inputs from the output directory and refuses inputs
stamped with a different config hash unless ``--force`` is given, so
``pipeline`` is exactly the four stages run in sequence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load
from .dstsfit import FitConvergenceError, FitResult, fit, read_fit_log, write_fit_log
from .engine import (
    TruncationError,
    cycle_average,
    default_initial_state,
    read_snapshot_archive,
    read_trajectory_csv,
    run_engine,
    trajectory_from_columns,
    write_snapshot_archive,
    write_trajectory_csv,
)
from .hilbert import partial_trace
from .thermo import report_from_fit, report_from_trajectory, write_report_csv
from .tomography import CoverageError, read_dataset_csv, rescale_raw, scan, write_dataset_csv

log = logging.getLogger("spinflywheel")

OUT_ENV = "SPINFLYWHEEL_OUT"
TRAJECTORY_CSV = "trajectory.csv"
SNAPSHOTS = "snapshots.bin"
FIT_LOG = "fits.jsonl"
REPORT_CSV = "thermo.csv"
SIM_REPORT_CSV = "thermo_simulation.csv"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class StageMismatch(ConfigError):
    """An input file was produced under a different configuration."""


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash, "version": __version__}


def _check_hash(found: str, cfg: RunConfig, what, force: bool):
    if found != cfg.config_hash:
        msg = f"{what} was produced with config hash {found!r}, current config is {cfg.config_hash!r}"
        if not force:
            raise StageMismatch(msg + " (use --force to override)")
        log.warning("%s; continuing because of --force", msg)


def _tag(t_us: float) -> str:
    return f"{t_us:06.2f}us"


def _map(func, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(x) for x in items]


def cmd_simulate(cfg: RunConfig, force: bool = False, jobs: int = 1):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    eng = cfg.engine
    t_he = cfg.t_he_seconds
    log.info("simulating %.2f us at dim %d (%s)", t_he[-1] * 1e6, eng.dim, eng.model)
    traj = run_engine(
        eng,
        t_he[-1],
        snapshot_every=eng.period / cfg.snapshots_per_period,
        initial=default_initial_state(eng, cfg.initial_nbar),
        store_states=t_he,
    )
    write_trajectory_csv(traj, out / TRAJECTORY_CSV, _stamp(cfg))
    flywheel = [np.asarray(partial_trace(s, "fock")) for s in traj.states]
    times = [round(t / eng.dt) * eng.dt for t in t_he]
    write_snapshot_archive(out / SNAPSHOTS, times, flywheel, cfg.config_hash)
    return traj


def _tomo_one(job):
    rho, i, cfg = job
    seed = (cfg.tomo_seed, i)
    raw = scan(rho, cfg.n_rings, cfg.base_angles, cfg.shots, cfg.readout, seed=seed, r_max=cfg.r_max)
    return raw, rescale_raw(raw)


def cmd_tomo(cfg: RunConfig, force: bool = False, jobs: int = 1):
    out = cfg.out_dir
    times, states, h = read_snapshot_archive(out / SNAPSHOTS)
    _check_hash(h, cfg, SNAPSHOTS, force)
    if len(states) != len(cfg.t_he):
        raise StageMismatch(f"{SNAPSHOTS} holds {len(states)} snapshots, sweep has {len(cfg.t_he)}")
    tomo = out / "tomo"
    tomo.mkdir(exist_ok=True)
    results = _map(_tomo_one, [(np.asarray(s), i, cfg) for i, s in enumerate(states)], jobs)
    for t_us, (raw, data) in zip(cfg.t_he, results):
        meta = dict(_stamp(cfg), t_he_us=repr(t_us))
        write_dataset_csv(raw, tomo / f"q_raw_{_tag(t_us)}.csv", meta)
        write_dataset_csv(data, tomo / f"q_{_tag(t_us)}.csv", meta)
    return [d for _, d in results]


def _fit_one(job):
    data, i, cfg = job
    return fit(data, dim=cfg.fit_dim, n_starts=cfg.n_starts, seed=cfg.fit_seed + i)


def _load_datasets(cfg, force):
    sets = []
    for t_us in cfg.t_he:
        data, head = read_dataset_csv(cfg.out_dir / "tomo" / f"q_{_tag(t_us)}.csv")
        _check_hash(head.get("config_hash", ""), cfg, f"tomography data at {t_us} us", force)
        sets.append(data)
    return sets


def cmd_fit(cfg: RunConfig, force: bool = False, jobs: int = 1):
    sets = _load_datasets(cfg, force)
    fits = _map(_fit_one, [(d, i, cfg) for i, d in enumerate(sets)], jobs)
    records = [f.record(t_he_us=t, **_stamp(cfg)) for t, f in zip(cfg.t_he, fits)]
    write_fit_log(records, cfg.out_dir / FIT_LOG)
    return fits


def _simulation_curves(traj, omega_t):
    ca = cycle_average(traj, omega_t)
    n = ca.observables["n"]
    var = np.maximum(traj.observables["n2"] - traj.observables["n"] ** 2, 0.0)
    de = np.where(n > 0, np.sqrt(var) / np.where(n > 0, n, 1.0), 0.0)
    return {"t": traj.times, "energy": n, "ergotropy": ca.observables["ergotropy"], "dE_over_E": de}


def cmd_report(cfg: RunConfig, force: bool = False, jobs: int = 1):
    out = cfg.out_dir
    records = read_fit_log(out / FIT_LOG)
    for rec in records:
        _check_hash(rec.get("config_hash", ""), cfg, FIT_LOG, force)
    rows = [report_from_fit(FitResult.from_record(r), r["t_he_us"] * 1e-6) for r in records]
    if cfg.emit_csv:
        write_report_csv(rows, out / REPORT_CSV, _stamp(cfg))

    traj = None
    if (out / TRAJECTORY_CSV).exists():
        meta, cols = read_trajectory_csv(out / TRAJECTORY_CSV)
        _check_hash(meta.get("config_hash", ""), cfg, TRAJECTORY_CSV, force)
        traj = trajectory_from_columns(cols, cfg.engine)
        sim_rows = [report_from_trajectory(traj, t, cfg.engine.omega_t) for t in cfg.t_he_seconds]
        if cfg.emit_csv:
            write_report_csv(sim_rows, out / SIM_REPORT_CSV, _stamp(cfg))

    if cfg.emit_heatmaps or cfg.emit_curves:
        from .plotting import plot_energetics, plot_q_heatmap

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        if cfg.emit_heatmaps:
            sets = _load_datasets(cfg, force)
            for t_us, data, rec in zip(cfg.t_he, sets, records):
                plot_q_heatmap(
                    data,
                    fig_dir / f"q_{_tag(t_us)}.png",
                    FitResult.from_record(rec).params,
                    title=rf"$t_{{HE}}$ = {t_us:g} $\mu$s",
                    stamp=cfg.config_hash,
                )
        if cfg.emit_curves:
            sim = None if traj is None else _simulation_curves(traj, cfg.engine.omega_t)
            plot_energetics(rows, fig_dir / "energetics.png", sim, stamp=cfg.config_hash)
    return rows


def cmd_pipeline(cfg: RunConfig, force: bool = False, jobs: int = 1):
    cmd_simulate(cfg, force, jobs)
    cmd_tomo(cfg, force, jobs)
    cmd_fit(cfg, force, jobs)
    return cmd_report(cfg, force, jobs)


COMMANDS = {
    "simulate": cmd_simulate,
    "tomo": cmd_tomo,
    "fit": cmd_fit,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def build_parser():
    p = argparse.ArgumentParser(prog="spinflywheel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path, help="run configuration file")
        sp.add_argument("--out", type=Path, help=f"output directory (overrides ${OUT_ENV} and the config)")
        sp.add_argument("--seed", type=int, help="override the tomography and fit seeds")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for the t_HE sweep")
        sp.add_argument("--force", action="store_true", help="accept inputs with a different config hash")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load(args.config)
        out = args.out or os.environ.get(OUT_ENV)
        cfg = cfg.with_overrides(seed=args.seed, out_dir=out)
        COMMANDS[args.command](cfg, force=args.force, jobs=max(1, args.jobs))
    except ConfigError as exc:
        key = f" [{exc.key}]" if getattr(exc, "key", None) else ""
        print(f"config error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TruncationError, FitConvergenceError, CoverageError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
