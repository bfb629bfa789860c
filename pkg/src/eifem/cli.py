"""Command-line front end: single solves, convergence studies, and
preconditioner benchmarks.

Configuration is a flat key=value file; every key can be overridden by a
command-line flag.  Unknown config keys are rejected.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List

import numpy as np

from . import linalg
from .analysis import (
    NonHalvingSequence,
    convergence_study,
    run_case,
)
from .assembly import AssemblyParams, assemble
from .flux import recover_flux
from .ifem_space import build_space
from .mesh import build_mesh, classify_mesh
from .problems import circle_benchmark
from .solver import NotConverged, PrecondParams, solve_system
from .vtk_io import write_flux_vtk, write_solution_vtk

COMMANDS = ("solve", "convergence", "precond-bench")
FORMATS = ("csv", "md", "vtk")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = "solve"
    problem: str = "circle"
    beta_minus: float = 1.0
    beta_plus: float = 1.0
    mesh: List[int] = field(default_factory=lambda: [32])
    theta: float = -1.0
    kappa: float = 10.0
    ngs: int = 1
    cycles: int = 5
    rtol: float = 1e-7
    maxit: int = 500
    out: str = "."
    formats: List[str] = field(default_factory=lambda: ["csv", "md"])
    seed: int = 0
    cases: str = ""              # precond-bench: "bm:bp,bm:bp,..."
    dump_system: bool = False

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.problem != "circle":
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.beta_minus <= 0 or self.beta_plus <= 0:
            raise ConfigError("beta values must be positive")
        if any(n < 2 for n in self.mesh):
            raise ConfigError("mesh sizes must be >= 2")
        if self.kappa <= 0 or self.rtol <= 0 or self.maxit < 1:
            raise ConfigError("kappa, rtol must be positive; maxit >= 1")
        if self.ngs < 0 or self.cycles < 1:
            raise ConfigError("ngs must be >= 0 and cycles >= 1")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise ConfigError(f"unknown output formats: {bad}")
        return self


_LIST_KEYS = {"mesh": int, "formats": str}
_SCALAR_KEYS = {
    "command": str, "problem": str, "beta_minus": float, "beta_plus": float,
    "theta": float, "kappa": float, "ngs": int, "cycles": int, "rtol": float,
    "maxit": int, "out": str, "seed": int, "cases": str,
}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def load_config(path) -> RunConfig:
    """Parse a flat key=value file (blank lines and # comments ignored)."""
    cfg = RunConfig()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg = _set_key(cfg, key, value, f"{path}:{lineno}")
    return cfg


def _set_key(cfg: RunConfig, key: str, value: str, where: str) -> RunConfig:
    if key in _LIST_KEYS:
        conv = _LIST_KEYS[key]
        try:
            items = [conv(s.strip()) for s in value.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {value!r}") from exc
        return replace(cfg, **{key: items})
    if key == "dump_system":
        return replace(cfg, dump_system=_parse_bool(value))
    if key in _SCALAR_KEYS:
        conv = _SCALAR_KEYS[key]
        try:
            return replace(cfg, **{key: conv(value)})
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {value!r}") from exc
    raise ConfigError(f"{where}: unknown key {key!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="eifem",
        description="Enriched immersed finite elements for elliptic interface "
                    "problems with conservative flux recovery.",
    )
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--problem", type=str, default=None)
    p.add_argument("--beta-minus", type=float, default=None)
    p.add_argument("--beta-plus", type=float, default=None)
    p.add_argument("--mesh", type=str, default=None, help="comma-separated N list")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--ngs", type=int, default=None)
    p.add_argument("--cycles", type=int, default=None)
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--maxit", type=int, default=None)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--formats", type=str, default=None, help="csv,md,vtk")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cases", type=str, default=None,
                   help="precond-bench beta pairs, e.g. 1:1,1:10,1:100")
    p.add_argument("--dump-system", action="store_true", default=False)
    return p


def config_from_args(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = replace(cfg, command=args.command)
    overrides = {
        "problem": args.problem, "beta_minus": args.beta_minus,
        "beta_plus": args.beta_plus, "theta": args.theta, "kappa": args.kappa,
        "ngs": args.ngs, "cycles": args.cycles, "rtol": args.rtol,
        "maxit": args.maxit, "out": args.out, "seed": args.seed,
        "cases": args.cases,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg = replace(cfg, **{key: value})
    if args.mesh is not None:
        cfg = _set_key(cfg, "mesh", args.mesh, "--mesh")
    if args.formats is not None:
        cfg = _set_key(cfg, "formats", args.formats, "--formats")
    if args.dump_system:
        cfg = replace(cfg, dump_system=True)
    return cfg.validate()


def _make_problem(cfg: RunConfig, beta_minus=None, beta_plus=None):
    bm = cfg.beta_minus if beta_minus is None else beta_minus
    bp = cfg.beta_plus if beta_plus is None else beta_plus
    return circle_benchmark(bm, bp)


def _params(cfg: RunConfig):
    return (
        AssemblyParams(theta=cfg.theta, kappa=cfg.kappa),
        PrecondParams(n_gs=cfg.ngs, amg_cycles=cfg.cycles),
    )


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    problem = _make_problem(cfg)
    params, precond = _params(cfg)
    n = cfg.mesh[0]
    row = run_case(problem, n, params, precond, cfg.rtol, cfg.maxit)
    objs = row.pop("_objects")
    print(f"problem={problem.name} N={n} dofs={objs['system'].n_free}")
    print(f"iterations={row['iterations']} "
          f"final_residual={objs['stats'].residuals[-1]:.3e}")
    print(f"l2={row['l2']:.6e} energy={row['energy']:.6e} "
          f"flux_l2={row['flux_l2']:.6e} flux_div={row['flux_div']:.6e}")
    print(f"max_conservation={row['max_conservation']:.3e} "
          f"wall_time={row['wall_time']:.2f}s")
    if "csv" in cfg.formats:
        path = out / f"solve_{problem.name}_N{n}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            keys = sorted(k for k in row if not k.startswith("_"))
            writer.writerow(keys)
            writer.writerow([row[k] for k in keys])
        print(f"wrote {path}")
    if "vtk" in cfg.formats:
        full = objs["system"].expand(objs["solution"])
        p1 = out / f"solution_{problem.name}_N{n}.vtk"
        p2 = out / f"flux_{problem.name}_N{n}.vtk"
        write_solution_vtk(p1, objs["space"], full)
        write_flux_vtk(p2, objs["flux"])
        print(f"wrote {p1}\nwrote {p2}")
    if cfg.dump_system:
        system = objs["system"]
        linalg.write_matrix_market(out / f"matrix_N{n}.mtx", system.matrix)
        linalg.write_vector(out / f"rhs_N{n}.txt", system.rhs)
        print(f"wrote {out / f'matrix_N{n}.mtx'}")
    return 0


def cmd_convergence(cfg: RunConfig, out: Path) -> int:
    problem = _make_problem(cfg)
    params, precond = _params(cfg)
    try:
        report = convergence_study(
            problem, cfg.mesh, params, precond, cfg.rtol, cfg.maxit,
            keep_objects=cfg.formats.count("vtk") > 0,
        )
    except NotConverged as exc:
        print(f"warning: PCG stalled ({exc}); partial results discarded",
              file=sys.stderr)
        return 1
    ratios_ok = all(
        abs(cfg.mesh[k + 1] / cfg.mesh[k] - 2.0) < 1e-12
        for k in range(len(cfg.mesh) - 1)
    )
    if not ratios_ok:
        print("warning: mesh list is not halving-refined; orders omitted",
              file=sys.stderr)
    stem = f"convergence_{problem.name}"
    if "csv" in cfg.formats:
        (out / f"{stem}.csv").write_text(report.to_csv(), encoding="utf-8")
        print(f"wrote {out / f'{stem}.csv'}")
    if "md" in cfg.formats:
        (out / f"{stem}.md").write_text(report.to_markdown(), encoding="utf-8")
        print(f"wrote {out / f'{stem}.md'}")
    if "vtk" in cfg.formats:
        for row in report.rows:
            objs = row.pop("_objects", None)
            if objs is None:
                continue
            n = row["inv_h"]
            full = objs["system"].expand(objs["solution"])
            write_solution_vtk(out / f"solution_{problem.name}_N{n}.vtk",
                               objs["space"], full)
            write_flux_vtk(out / f"flux_{problem.name}_N{n}.vtk", objs["flux"])
        print(f"wrote VTK files for {len(report.rows)} meshes")
    print(report.to_markdown())
    return 0


def _parse_cases(spec: str) -> List[tuple]:
    if not spec:
        return [(1.0, 1.0), (1.0, 10.0), (1.0, 100.0), (1.0, 1000.0)]
    cases = []
    for item in spec.split(","):
        try:
            bm, bp = (float(s) for s in item.split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad case {item!r}; expected bm:bp") from exc
        cases.append((bm, bp))
    return cases


def cmd_precond_bench(cfg: RunConfig, out: Path) -> int:
    params, precond = _params(cfg)
    cases = _parse_cases(cfg.cases)
    rows = []
    for bm, bp in cases:
        problem = _make_problem(cfg, bm, bp)
        for n in cfg.mesh:
            t0 = time.perf_counter()
            mesh = build_mesh(n, bounds=problem.bounds)
            cls = classify_mesh(mesh, problem.level_set)
            space = build_space(mesh, cls, bm, bp)
            system = assemble(space, problem, params)
            setup = time.perf_counter() - t0
            t0 = time.perf_counter()
            try:
                x, stats = solve_system(system, precond, rtol=cfg.rtol,
                                        maxiter=cfg.maxit)
                iters, converged = stats.iterations, True
                final = stats.residuals[-1]
            except NotConverged as exc:
                iters, converged = exc.iterations, False
                final = exc.residual
            solve = time.perf_counter() - t0
            rows.append({
                "beta_minus": bm, "beta_plus": bp, "inv_h": n,
                "iterations": iters, "converged": converged,
                "final_residual": final, "setup_time": setup,
                "solve_time": solve,
            })
            print(f"beta=({bm:g},{bp:g}) N={n}: iterations={iters} "
                  f"converged={converged} solve={solve:.2f}s")
    keys = ["beta_minus", "beta_plus", "inv_h", "iterations", "converged",
            "final_residual", "setup_time", "solve_time"]
    if "csv" in cfg.formats:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(keys)
        for row in rows:
            writer.writerow([row[k] for k in keys])
        (out / "precond_bench.csv").write_text(buf.getvalue(), encoding="utf-8")
        print(f"wrote {out / 'precond_bench.csv'}")
    if "md" in cfg.formats:
        lines = ["| " + " | ".join(keys) + " |",
                 "|" + "|".join(["---"] * len(keys)) + "|"]
        for row in rows:
            lines.append("| " + " | ".join(str(row[k]) for k in keys) + " |")
        (out / "precond_bench.md").write_text("\n".join(lines) + "\n",
                                              encoding="utf-8")
        print(f"wrote {out / 'precond_bench.md'}")
    return 0 if all(r["converged"] for r in rows) else 1


def main(argv=None) -> int:
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    np.random.seed(cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = {
        "solve": cmd_solve,
        "convergence": cmd_convergence,
        "precond-bench": cmd_precond_bench,
    }[cfg.command]
    try:
        return handler(cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
