"""Command-line drivers: each subcommand runs one pipeline and writes CSV files.

Every CSV starts with a comment line echoing the configuration digest, the
seeds and the scenario name, followed by a header row. Floats are written with
17 significant digits so identical invocations give identical bytes.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .assimilation import Observations, run_filter
from .calibration import (CalibrationProblem, UniformPrior, map_search, sigma_f_grid,
                          system_maker)
from .config import ScenarioConfig, load_config
from .errors import ConfigError, StatFemError
from .forward import forward_run
from .oracle import mc_forward
from .scenarios import Scenario, make_truth

log = logging.getLogger("statfem")


def _fmt(x) -> str:
    return "%.17g" % x


def write_csv(path: str, header: Sequence[str], rows, echo: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {echo}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_observations(path: str) -> Observations:
    """Read a ``time,s1,...,sn`` file; lines starting with '#' are skipped."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise StatFemError(f"{path}: no header row")
    header = lines[0].split(",")
    if header[0] != "time" or len(header) < 2:
        raise StatFemError(f"{path}: header must read time,s1,...,sn")
    try:
        data = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise StatFemError(f"{path}: {exc}") from None
    if data.size == 0:
        return Observations(np.empty(0), np.empty((0, len(header) - 1)))
    if data.shape[1] != len(header):
        raise StatFemError(f"{path}: rows do not match the header")
    return Observations(data[:, 0], data[:, 1:])


def _echo(cfg: ScenarioConfig) -> str:
    s = cfg.seeds
    name = cfg.scenario.name or cfg.scenario.kind
    return f"config={cfg.digest()} seeds=truth:{s.truth},noise:{s.noise},mc:{s.mc} scenario={name}"


def _probe_matrix(sc: Scenario) -> np.ndarray:
    rows = sc.probe_rows
    return np.hstack([rows, np.zeros_like(rows)])


def _probe_names(n: int) -> list:
    return [f"p{i + 1}" for i in range(n)]


def cmd_forward(sc: Scenario, out: str, args) -> None:
    res = forward_run(sc.system(), sc.n_steps, probes=_probe_matrix(sc))
    names = _probe_names(res.probe_means.shape[1])
    header = ["time"] + [f"{c}_{p}" for p in names for c in ("mean", "std")]
    std = np.sqrt(np.clip(res.probe_variances, 0.0, None))
    rows = (np.concatenate([[t], np.column_stack([m, s]).ravel()])
            for t, m, s in zip(res.times, res.probe_means, std))
    write_csv(os.path.join(out, "forward.csv"), header, rows, _echo(sc.config))


def _data_for(sc: Scenario, args):
    truth = make_truth(sc)
    if args.data:
        return truth, read_observations(args.data), sc.config.sensors.sigma_e or truth.sigma_e
    return truth, truth.observations, truth.sigma_e


def cmd_filter(sc: Scenario, out: str, args) -> None:
    truth, data, sigma_e = _data_for(sc, args)
    P = _probe_matrix(sc)
    res = run_filter(sc.system(), sc.observation_model(sigma_e), data, sc.n_steps,
                     update_material=not args.no_material_update, start_time=sc.burn_in_time,
                     stop_time=sc.stop_time, probes=P)
    names = _probe_names(P.shape[0])
    header = ["time"] + [f"{c}_{p}" for p in names for c in ("mean", "std", "true")]
    std = np.sqrt(np.clip(res.probe_variances, 0.0, None))
    true = truth.trajectory @ P.T
    rows = (np.concatenate([[t], np.column_stack([m, s, x]).ravel()])
            for t, m, s, x in zip(res.times, res.probe_means, std, true))
    echo = _echo(sc.config)
    write_csv(os.path.join(out, "filter.csv"), header, rows, echo)
    g = res.final
    cent = sc.mesh.centroids()
    coord_names = ["x", "y", "z"][:cent.shape[1]]
    mat = np.column_stack([cent, g.kappa_mean, np.sqrt(np.clip(np.diag(g.C_kk), 0.0, None)),
                           truth.kappa])
    write_csv(os.path.join(out, "material.csv"),
              coord_names + ["kappa_mean", "kappa_std", "kappa_true"], mat, echo)


def cmd_calibrate(sc: Scenario, out: str, args) -> None:
    c = sc.config.calibration
    for key in ("grid_min", "grid_max"):
        if getattr(c, key) is None:
            raise ConfigError("required by the calibrate command", f"calibration.{key}")
    truth, data, sigma_e = _data_for(sc, args)
    priors = {}
    if c.prior_lower is not None and c.prior_upper is not None:
        priors["sigma_f"] = UniformPrior(c.prior_lower, c.prior_upper)
    grid = sigma_f_grid(c.grid_min, c.grid_max, c.grid_points, c.spacing, priors)
    update_material = c.update_material == "yes" and not args.no_material_update
    problem = CalibrationProblem(system_maker(sc.system, sc.observation_model(sigma_e)), data,
                                 sc.n_steps, sc.burn_in_time, sc.stop_time, update_material)
    star, values = map_search(grid, problem)
    write_csv(os.path.join(out, "objective.csv"), ["theta_value", "objective"],
              zip([t.sigma_f for t in grid], values), _echo(sc.config))
    print(f"sigma_f MAP = {star.sigma_f:.6g}")


def cmd_mc(sc: Scenario, out: str, args) -> None:
    cfg = sc.config
    stats = mc_forward(sc.system(), sc.n_steps, cfg.montecarlo.samples, cfg.seeds.mc,
                       probes=_probe_matrix(sc))
    names = _probe_names(stats.mean.shape[1])
    header = ["time"] + [f"{c}_{p}" for p in names for c in ("mean", "std")]
    rows = (np.concatenate([[t], np.column_stack([m, s]).ravel()])
            for t, m, s in zip(stats.times, stats.mean, stats.std))
    write_csv(os.path.join(out, "mc.csv"), header, rows, _echo(cfg))


def cmd_make_data(sc: Scenario, out: str, args) -> None:
    truth = make_truth(sc)
    echo = _echo(sc.config)
    obs = truth.observations
    n_s = obs.values.shape[1]
    write_csv(os.path.join(out, "observations.csv"),
              ["time"] + [f"s{i + 1}" for i in range(n_s)],
              np.column_stack([obs.times, obs.values]), echo)
    P = _probe_matrix(sc)
    write_csv(os.path.join(out, "truth.csv"), ["time"] + _probe_names(P.shape[0]),
              np.column_stack([truth.times, truth.trajectory @ P.T]), echo)
    cent = sc.mesh.centroids()
    write_csv(os.path.join(out, "truth_material.csv"),
              ["x", "y", "z"][:cent.shape[1]] + ["kappa", "coefficient"],
              np.column_stack([cent, truth.kappa, truth.coefficients]), echo)


COMMANDS = {
    "forward": cmd_forward,
    "filter": cmd_filter,
    "calibrate": cmd_calibrate,
    "mc": cmd_mc,
    "make-data": cmd_make_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="statfem",
                                     description="Statistical finite elements for transient dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario configuration file")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the truth seed (the Monte Carlo seed for 'mc')")
        p.add_argument("--no-material-update", action="store_true",
                       help="keep the material prior fixed during filtering")
        p.add_argument("--data", default=None,
                       help="observation CSV (time,s1,...,sn) instead of synthetic data")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            key = "mc" if args.command == "mc" else "truth"
            cfg = cfg.replace("seeds", **{key: args.seed})
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](Scenario(cfg), args.out, args)
    except (StatFemError, OSError) as exc:
        print(f"statfem {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
