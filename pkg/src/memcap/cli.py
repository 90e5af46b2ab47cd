"""``memcap`` command-line tool.

    memcap check|capacity|joint|sweep|converge --spec FILE [--grid N]
           [--log nats|bits] [--out DIR] [--oracle]

Exit codes: 0 ok, 2 infeasible, 3 inadmissible spec, 4 no convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .channel_model import ChannelSpec, check_admissibility
from .errors import (
    AllModesSingular,
    NoConvergence,
    NoiseIndefinite,
    NoiseSingular,
    SpecError,
)
from .joint_solver import ConstraintSet, JointOptions, solve_joint
from .oracles import OracleReport, dense_bisection_capacity, grid_search_joint, write_reports
from .spectral import trapezoid_grid, uniform_grid, whiten_grid
from .specfile import emit_spec, load_spec, spec_hash
from .waterfill import solve_tpc

__all__ = ["RunConfig", "run_sweep", "run_converge", "main"]

logger = logging.getLogger("memcap")

EXIT_OK, EXIT_INFEASIBLE, EXIT_INADMISSIBLE, EXIT_NOCONV = 0, 2, 3, 4
COMMANDS = ("check", "capacity", "joint", "sweep", "converge")


@dataclass
class RunConfig:
    spec_path: Path
    command: str
    N: int = 256
    log_base: str = "nats"
    out_dir: Path = Path(".")
    oracle: bool = False
    water_tol: float = 1e-12
    gap_tol: float = 1e-5
    max_iter: int = 5000
    singular_tol: float = 1e-10
    powers: List[float] = field(default_factory=lambda: [0.5, 1, 2, 4, 8])
    grids: List[int] = field(default_factory=lambda: [64, 128, 256, 512])

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.N < 1:
            raise ValueError("grid size must be >= 1")
        if self.log_base not in ("nats", "bits"):
            raise ValueError("log base must be 'nats' or 'bits'")

    @property
    def unit_scale(self) -> float:
        return 1.0 / math.log(2) if self.log_base == "bits" else 1.0

    def tolerances(self) -> dict:
        return {
            "water_level_power": self.water_tol,
            "duality_gap_rel": self.gap_tol,
            "singular_rel": self.singular_tol,
            "max_iter": self.max_iter,
        }


# ---------------------------------------------------------------- library-level runs


def run_sweep(spec: ChannelSpec, P_list, N: int, tol: float = 1e-12):
    """Capacity-vs-power table (nats): rows ``(P, capacity, mu, active_fraction)``."""
    P_list = [float(p) for p in P_list]
    if any(b <= a for a, b in zip(P_list, P_list[1:])):
        raise ValueError("power list must be strictly increasing")
    grid = uniform_grid(N)
    samples = whiten_grid(spec, grid)
    rows = []
    for P in P_list:
        r = solve_tpc(samples, grid, P, tol=tol)
        rows.append((P, r.capacity_nats, r.water_level, r.active_fraction))
    return rows


def concavity_defects(P, C):
    """Increase in slope between consecutive segments (positive means non-concave)."""
    P, C = np.asarray(P, float), np.asarray(C, float)
    slopes = np.diff(C) / np.diff(P)
    return np.diff(slopes)


def run_converge(spec: ChannelSpec, cons: ConstraintSet, N_list, opts: Optional[JointOptions] = None):
    """Capacity on a ladder of midpoint grids: rows ``(N, capacity, |C_N - C_prev|)``."""
    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("grid sizes must be strictly increasing")
    rows, prev = [], None
    for N in N_list:
        grid = uniform_grid(N)
        samples = whiten_grid(spec, grid)
        if cons.tpc_only:
            cap = solve_tpc(samples, grid, cons.tpc).capacity_nats
        else:
            res = solve_joint(cons, samples, grid, opts)
            if res.status == "infeasible":
                raise SpecError("constraints are infeasible")
            cap = res.capacity_nats
        rows.append((N, cap, math.nan if prev is None else abs(cap - prev)))
        prev = cap
    return rows


# ---------------------------------------------------------------- output helpers


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: dict, columns, rows) -> str:
    buf = io.StringIO()
    for key, val in header.items():
        buf.write(f"# {key}: {json.dumps(val, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _psd_rows(grid, psd, scale=1.0):
    n = psd.shape[-1]
    cols = ["theta"]
    for i in range(n):
        for j in range(n):
            cols += [f"r{i}{j}_re", f"r{i}{j}_im"]
    rows = []
    for th, R in zip(grid.nodes, psd):
        row = [float(th)]
        for z in R.ravel():
            row += [float(z.real), float(z.imag)]
        rows.append(row)
    return cols, rows


class _Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.spec, self.cons, grid_N = load_spec(cfg.spec_path)
        self.doc = emit_spec(self.spec, self.cons, grid_N)
        if cfg.N is None:
            cfg.N = grid_N or 256
        run = {"command": cfg.command, "N": cfg.N, "log": cfg.log_base, "tol": cfg.tolerances()}
        self.header = {
            "memcap_version": __version__,
            "command": cfg.command,
            "config_hash": spec_hash(self.doc, run),
            "grid_N": cfg.N,
            "units": f"{cfg.log_base} per channel use",
            "tolerances": cfg.tolerances(),
        }
        self.out = Path(cfg.out_dir)

    def write_json(self, name, payload):
        body = {"header": self.header}
        body.update(payload)
        _atomic_write(self.out / name, json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def write_csv(self, name, columns, rows):
        _atomic_write(self.out / name, _csv_text(self.header, columns, rows))

    def write_oracle(self, reports):
        buf = io.StringIO()
        write_reports(reports, buf)
        _atomic_write(self.out / "oracle.jsonl", buf.getvalue())


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def _admissibility(run: _Run):
    # closed grid containing the midpoint nodes and both band edges
    grid = trapezoid_grid(2 * run.cfg.N)
    return check_admissibility(run.spec, grid, run.cfg.singular_tol)


# ---------------------------------------------------------------- commands


def cmd_check(run: _Run) -> int:
    report = _admissibility(run)
    run.write_json("admissibility.json", report.to_dict())
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_capacity(run: _Run) -> int:
    cfg = run.cfg
    if run.cons.tpc is None:
        raise SpecError("'capacity' needs a tpc budget; use 'joint' for per-antenna-only problems")
    if not run.cons.tpc_only:
        logger.warning("capacity: only the total power budget is used; run 'joint' for the full set")
    report = _admissibility(run)
    grid = uniform_grid(cfg.N)
    samples = whiten_grid(run.spec, grid, cfg.singular_tol)
    res = solve_tpc(samples, grid, run.cons.tpc, tol=cfg.water_tol)
    cap = res.capacity_nats * cfg.unit_scale
    run.write_json("capacity.json", {
        "capacity": cap,
        "water_level": res.water_level,
        "power_used": res.power_used,
        "power_budget": res.power_budget,
        "status": "optimal",
        "admissibility": report.to_dict(),
    })
    run.write_csv("psd.csv", *_psd_rows(grid, res.psd))
    if cfg.oracle:
        ref = dense_bisection_capacity(run.spec, run.cons.tpc) * cfg.unit_scale
        run.write_oracle([OracleReport.compare("capacity_tpc", ref, cap, 1e-6)])
    print(f"capacity = {cap:.12g} {cfg.log_base}/use (water level {res.water_level:.12g})")
    return EXIT_OK


def cmd_joint(run: _Run) -> int:
    cfg = run.cfg
    report = _admissibility(run)
    grid = uniform_grid(cfg.N)
    samples = whiten_grid(run.spec, grid, cfg.singular_tol)
    res = solve_joint(run.cons, samples, grid, JointOptions(max_iter=cfg.max_iter, gap_tol=cfg.gap_tol))
    payload = res.to_dict()
    payload["capacity"] = res.capacity_nats * cfg.unit_scale
    payload["duality_gap"] = res.duality_gap * cfg.unit_scale
    payload["admissibility"] = report.to_dict()
    run.write_json("capacity.json", payload)
    if res.status == "infeasible":
        print(f"infeasible: constraint {res.witness} cannot be met")
        return EXIT_INFEASIBLE
    run.write_csv("psd.csv", *_psd_rows(grid, res.psd))
    if cfg.oracle:
        reports = []
        if run.cons.tpc_only:
            ref = dense_bisection_capacity(run.spec, run.cons.tpc) * cfg.unit_scale
            reports.append(OracleReport.compare("joint_vs_dense_tpc", ref, payload["capacity"], 1e-6))
        elif run.spec.n_tx <= 2 and cfg.N <= 2:
            ref = grid_search_joint(run.spec, run.cons, cfg.N, resolution=15, levels=6) * cfg.unit_scale
            reports.append(OracleReport.compare("joint_vs_grid_search", ref, payload["capacity"], 1e-3, relative=False))
        else:
            logger.warning("no oracle available for this instance size")
        run.write_oracle(reports)
    print(f"capacity = {payload['capacity']:.12g} {cfg.log_base}/use, status {res.status}, gap {payload['duality_gap']:.3g}")
    return EXIT_OK if res.status == "optimal" else EXIT_NOCONV


def cmd_sweep(run: _Run) -> int:
    cfg = run.cfg
    _admissibility(run)
    rows = run_sweep(run.spec, cfg.powers, cfg.N, tol=cfg.water_tol)
    scaled = [(P, C * cfg.unit_scale, mu, f) for P, C, mu, f in rows]
    run.write_csv("sweep.csv", ["P", "capacity", "mu", "active_fraction"], scaled)
    if cfg.oracle:
        run.write_oracle([
            OracleReport.compare(f"sweep_P={P:g}", dense_bisection_capacity(run.spec, P) * cfg.unit_scale, C, 1e-6)
            for P, C, _, _ in scaled
        ])
    defects = concavity_defects([r[0] for r in rows], [r[1] for r in rows]) if len(rows) > 2 else []
    if np.any(np.asarray(defects) > 1e-9):
        logger.warning("sweep: capacity curve is not concave to 1e-9")
    for P, C, mu, f in scaled:
        print(f"P={P:<10g} C={C:.12g} mu={mu:.12g} active={f:.3f}")
    return EXIT_OK


def cmd_converge(run: _Run) -> int:
    cfg = run.cfg
    _admissibility(run)
    rows = run_converge(run.spec, run.cons, cfg.grids, JointOptions(max_iter=cfg.max_iter, gap_tol=cfg.gap_tol))
    cols = ["N", "capacity", "abs_diff_prev"]
    out = [(N, C * cfg.unit_scale, d * cfg.unit_scale) for N, C, d in rows]
    if cfg.oracle and run.cons.tpc_only:
        ref = dense_bisection_capacity(run.spec, run.cons.tpc) * cfg.unit_scale
        cols.append("abs_err_oracle")
        out = [r + (abs(r[1] - ref),) for r in out]
        run.write_oracle([OracleReport.compare(f"converge_N={out[-1][0]}", ref, out[-1][1], 1e-6)])
    run.write_csv("converge.csv", cols, out)
    for r in out:
        print("  ".join(str(x) for x in r))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memcap", description="Capacity of Gaussian MIMO channels with memory")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--spec", required=True, type=Path, help="JSON channel/constraint spec")
    p.add_argument("--grid", type=int, default=None, help="number of midpoint frequency nodes (default: spec grid.N or 256)")
    p.add_argument("--log", choices=("nats", "bits"), default="nats")
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--oracle", action="store_true", help="cross-check against brute-force references")
    p.add_argument("--powers", type=str, default="0.5,1,2,4,8", help="comma-separated budgets for sweep")
    p.add_argument("--grids", type=str, default="64,128,256,512", help="comma-separated N ladder for converge")
    p.add_argument("--gap-tol", type=float, default=1e-5)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(
            spec_path=args.spec,
            command=args.command,
            N=args.grid if args.grid is not None else 1,
            log_base=args.log,
            out_dir=args.out,
            oracle=args.oracle,
            gap_tol=args.gap_tol,
            max_iter=args.max_iter,
            powers=[float(x) for x in args.powers.split(",") if x.strip()],
            grids=[int(x) for x in args.grids.split(",") if x.strip()],
        )
        if args.grid is None:
            cfg.N = None
        run = _Run(cfg)
        handler = globals()[f"cmd_{args.command}"]
        return handler(run)
    except (SpecError, NoiseSingular, NoiseIndefinite, AllModesSingular, FileNotFoundError) as exc:
        print(f"memcap: inadmissible spec: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except NoConvergence as exc:
        print(f"memcap: no convergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except ValueError as exc:
        print(f"memcap: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE


if __name__ == "__main__":
    sys.exit(main())
