"""Command-line front end: solve, trace and bench.

Exit codes: 0 success, 1 mesh/input parse error, 2 assembly error,
3 solver non-convergence, 4 no usable field-line start points.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import fixtures
from .assembly import AssemblyError, assemble, save_matrix
from .config import Config, default_workers
from .mesh import MeshError, load_mesh
from .postprocess import (
    TraceError,
    eval_efield,
    load_ionization_model,
    pick_start_points,
    surface_field_magnitudes,
    trace_fieldline,
    streamer_integral,
    write_fieldline_csv,
)
from .solver import SolverError, Solution, solve

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_ASSEMBLY = 2
EXIT_SOLVER = 3
EXIT_NO_START = 4

SOLUTION_FORMAT = "hvbem-solution 1"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except AssemblyError as exc:
        print(f"assembly error: {exc}", file=sys.stderr)
        return EXIT_ASSEMBLY
    except SolverError as exc:
        print(
            f"solver did not converge: {exc} "
            f"(best residual {exc.best_residual:.3e})",
            file=sys.stderr,
        )
        return EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvbem",
        description="Boundary-element electrostatics with breakdown checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="assemble, solve and write fields")
    p_solve.add_argument("--mesh", required=True, help="mesh file")
    p_solve.add_argument("--config", default=None, help="key = value config file")
    p_solve.add_argument("--out", required=True, help="output directory")
    p_solve.add_argument("--workers", type=int, default=None,
                         help="row-parallel workers (default: HVBEM_WORKERS or CPU count)")
    p_solve.add_argument("--blocks", type=int, default=1, help="matrix row blocks")
    p_solve.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a config key")
    p_solve.add_argument("--dump-matrix", action="store_true",
                         help="also write the assembled matrix (binary)")
    p_solve.set_defaults(func=cmd_solve)

    p_trace = sub.add_parser("trace", help="trace field lines and evaluate the "
                                           "streamer criterion")
    p_trace.add_argument("--case", required=True, help="directory written by solve")
    p_trace.add_argument("--gas", required=True, help="ionization table file")
    p_trace.add_argument("--top-k", type=int, default=None,
                         help="trace from the k strongest surface points")
    p_trace.add_argument("--starts", default=None,
                         help="file with explicit start points: x y z [orientation]")
    p_trace.add_argument("--mesh", default=None, help="override the stored mesh path")
    p_trace.add_argument("--out", default=None, help="output directory (default: case)")
    p_trace.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_trace.set_defaults(func=cmd_trace)

    p_bench = sub.add_parser("bench", help="assembly/solve scaling ladder")
    p_bench.add_argument("--fixture", default="sphere", choices=["sphere"])
    p_bench.add_argument("--levels", default="2,3",
                         help="comma-separated icosphere levels or node counts")
    p_bench.add_argument("--workers", type=int, default=None)
    p_bench.add_argument("--blocks", type=int, default=1)
    p_bench.add_argument("--speedup", action="store_true",
                         help="also time the largest rung with 1 worker")
    p_bench.add_argument("--out", default=None, help="write bench.json here")
    p_bench.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_bench.set_defaults(func=cmd_bench)

    return parser


# --------------------------------------------------------------------------
# solve
# --------------------------------------------------------------------------


def cmd_solve(args) -> int:
    cfg = Config.load(args.config, args.set)
    workers = args.workers if args.workers else default_workers()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    mesh_path = Path(args.mesh)
    t0 = time.perf_counter()
    mesh = load_mesh(mesh_path)
    t_load = time.perf_counter() - t0

    t0 = time.perf_counter()
    matrix, rhs = assemble(
        mesh, cfg.quad(), n_blocks=args.blocks, workers=workers,
        precision=cfg["assembly.precision"],
    )
    t_assembly = time.perf_counter() - t0

    t0 = time.perf_counter()
    solution = solve(matrix, rhs, cfg.solver(workers=workers))
    t_solve = time.perf_counter() - t0

    t0 = time.perf_counter()
    surface_e = surface_field_magnitudes(mesh, solution, cfg=cfg.quad(),
                                         workers=workers)
    t_surface = time.perf_counter() - t0

    timings = {
        "mesh_load": t_load,
        "assembly": t_assembly,
        "solve": t_solve,
        "surface_field": t_surface,
        "total": t_load + t_assembly + t_solve + t_surface,
    }
    _write_solution(out_dir, mesh_path, mesh, solution, surface_e, cfg,
                    timings, workers, args.blocks)
    _write_surface_csv(out_dir / "surface_field.csv", mesh, surface_e)
    _write_surface_vtk(out_dir / "surface_field.vtk", mesh, surface_e)
    if args.dump_matrix:
        save_matrix(matrix, out_dir / "matrix.bin")

    print(f"solved {mesh_path.name}: n={mesh.n_collocation} "
          f"floating={mesh.n_floating} iters={solution.iterations} "
          f"residual={solution.residual:.2e}")
    for phase in ("assembly", "solve", "surface_field"):
        print(f"  {phase:14s} {timings[phase]:8.2f} s")
    print(f"  {'total':14s} {timings['total']:8.2f} s")
    return EXIT_OK


def _write_solution(out_dir, mesh_path, mesh, solution, surface_e, cfg,
                    timings, workers, blocks):
    # run metadata (timings, worker counts) stays out of solution.json so the
    # solution file is bit-identical across reruns and worker counts
    payload = {
        "format": SOLUTION_FORMAT,
        "mesh_path": str(Path(mesh_path).resolve()),
        "n": mesh.n_collocation,
        "n_floating": mesh.n_floating,
        "u": [float(v) for v in solution.u],
        "V": [float(v) for v in solution.V],
        "iterations": solution.iterations,
        "residual": float(solution.residual),
        "surface_e": [float(v) for v in surface_e],
        "config": cfg.snapshot(),
    }
    with open(out_dir / "solution.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump({"workers": workers, "blocks": blocks, "timings": timings},
                  fh, indent=1)


def _write_surface_csv(path, mesh, surface_e):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vertex_id,x,y,z,E\n")
        for i in range(mesh.n_collocation):
            vid = int(mesh.colloc_vertex_ids[i])
            x, y, z = (float(c) for c in mesh.colloc_points[i])
            fh.write(f"{vid},{x!r},{y!r},{z!r},{float(surface_e[i])!r}\n")


def _write_surface_vtk(path, mesh, surface_e):
    """Legacy-VTK polydata with |E| point data on the corner triangles."""
    n = mesh.n_collocation
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("hvbem surface field\n")
        fh.write("ASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {n} double\n")
        for p in mesh.colloc_points:
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        nt = mesh.n_triangles
        fh.write(f"POLYGONS {nt} {4 * nt}\n")
        for cols in mesh.tri_corner_cols:
            fh.write(f"3 {cols[0]} {cols[1]} {cols[2]}\n")
        fh.write(f"POINT_DATA {n}\n")
        fh.write("SCALARS E_magnitude double 1\nLOOKUP_TABLE default\n")
        for v in surface_e:
            fh.write(f"{float(v)!r}\n")


def load_solution(case_dir) -> tuple[dict, Solution]:
    with open(Path(case_dir) / "solution.json", "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != SOLUTION_FORMAT:
        raise ValueError(f"{case_dir}: unknown solution format")
    solution = Solution(
        u=np.array(payload["u"], dtype=float),
        V=np.array(payload["V"], dtype=float),
        iterations=payload["iterations"],
        residual=payload["residual"],
    )
    return payload, solution


# --------------------------------------------------------------------------
# trace
# --------------------------------------------------------------------------


def cmd_trace(args) -> int:
    case_dir = Path(args.case)
    payload, solution = load_solution(case_dir)
    cfg = Config.load(None, args.set)
    for key, value in payload.get("config", {}).items():
        if key in cfg.values and not any(s.startswith(key + "=") for s in args.set):
            cfg.values[key] = value
    mesh_path = Path(args.mesh) if args.mesh else Path(payload["mesh_path"])
    mesh = load_mesh(mesh_path)
    model = load_ionization_model(args.gas)
    out_dir = Path(args.out) if args.out else case_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    params = cfg.trace_params()

    starts = []
    if args.starts:
        with open(args.starts, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) not in (3, 4):
                    raise ValueError(
                        f"{args.starts}:{lineno}: expected 'x y z [orientation]'"
                    )
                point = np.array([float(v) for v in parts[:3]])
                orient = int(parts[3]) if len(parts) == 4 else +1
                starts.append((point, orient))
    else:
        k = args.top_k if args.top_k else cfg["trace.top_k"]
        surface_e = payload.get("surface_e")
        surface_e = np.array(surface_e) if surface_e else None
        seeds, indices, _ = pick_start_points(
            mesh, solution, k, offset_frac=cfg["trace.start_offset_frac"],
            cfg=cfg.quad(), surface_e=surface_e,
        )
        for s, i in zip(seeds, indices):
            e = eval_efield(solution, mesh, s, cfg=cfg.quad())
            orient = 1 if e @ mesh.colloc_normals[i] >= 0 else -1
            starts.append((s, orient))

    rows = []
    traced = 0
    for lid, (point, orient) in enumerate(starts):
        try:
            line = trace_fieldline(solution, mesh, point, orient,
                                   params=params, cfg=cfg.quad())
        except TraceError as exc:
            print(f"line {lid}: {exc}", file=sys.stderr)
            rows.append((lid, math.nan, math.nan, False, "BelowFloor"))
            continue
        value, inception = streamer_integral(line, model)
        write_fieldline_csv(line, model, out_dir / f"line_{lid}.csv")
        rows.append((lid, line.length, value, inception, line.termination))
        traced += 1

    with open(out_dir / "trace_summary.csv", "w", encoding="utf-8") as fh:
        fh.write("line,length,integral,inception,termination\n")
        for lid, length, value, inception, term in rows:
            fh.write(f"{lid},{length!r},{value!r},{inception},{term}\n")

    for lid, length, value, inception, term in rows:
        print(f"line {lid}: length={length:.4g} integral={value:.4g} "
              f"inception={inception} ({term})")
    if traced == 0:
        print("no start point had |E| above the weak-field floor",
              file=sys.stderr)
        return EXIT_NO_START
    return EXIT_OK


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------


def cmd_bench(args) -> int:
    cfg = Config.load(None, args.set)
    workers = args.workers if args.workers else default_workers()
    levels = _parse_levels(args.levels)

    rungs = []
    for level in levels:
        mesh = fixtures.sphere_mesh(level)
        t0 = time.perf_counter()
        matrix, rhs = assemble(mesh, cfg.quad(), n_blocks=args.blocks,
                               workers=workers)
        t_asm = time.perf_counter() - t0
        t0 = time.perf_counter()
        solution = solve(matrix, rhs, cfg.solver(workers=workers))
        t_solve = time.perf_counter() - t0
        n = mesh.n_collocation
        rungs.append({"level": level, "n": n, "assembly_s": t_asm,
                      "solve_s": t_solve, "iterations": solution.iterations})
        print(f"level {level}: n={n:6d} assembly={t_asm:8.2f}s "
              f"solve={t_solve:6.2f}s iters={solution.iterations}")

    exponent = fit_scaling_exponent([(r["n"], r["assembly_s"]) for r in rungs])
    if exponent is None:
        print("scaling exponent: n/a (need at least two rungs)")
    else:
        print(f"scaling exponent (assembly vs N): {exponent:.2f}")

    speedup = None
    if args.speedup and workers > 1:
        level = levels[-1]
        mesh = fixtures.sphere_mesh(level)
        t0 = time.perf_counter()
        assemble(mesh, cfg.quad(), n_blocks=args.blocks, workers=1)
        t_serial = time.perf_counter() - t0
        speedup = t_serial / rungs[-1]["assembly_s"]
        print(f"speedup on level {level}: {speedup:.2f}x "
              f"({workers} workers vs 1)")

    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {"rungs": rungs, "exponent": exponent,
                   "workers": workers, "speedup": speedup}
        with open(out_dir / "bench.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
    return EXIT_OK


def _parse_levels(arg: str) -> list[int]:
    by_nodes = {n: lev for lev, n in fixtures.sphere_levels().items()}
    levels = []
    for token in arg.split(","):
        value = int(token.strip())
        if value in by_nodes:
            levels.append(by_nodes[value])
        elif 0 <= value <= 6:
            levels.append(value)
        else:
            raise ValueError(
                f"level token {value} is neither an icosphere level (0..6) "
                f"nor a node count {sorted(by_nodes)}"
            )
    return levels


def fit_scaling_exponent(pairs) -> float | None:
    """Least-squares slope of log(time) against log(N)."""
    pts = [(n, t) for n, t in pairs if t > 0.0]
    if len(pts) < 2:
        return None
    logs = np.log([[n, t] for n, t in pts])
    slope, _ = np.polyfit(logs[:, 0], logs[:, 1], 1)
    return float(slope)


if __name__ == "__main__":
    sys.exit(main())
