"""Field evaluation, field-line tracing and the streamer-inception check.

Potential and field evaluations reuse the assembly row machinery: every
triangle is classified against the evaluation point, so points close to a
surface automatically get the graded near-singular rules.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .assembly import KERNEL_E, KERNEL_SL, assemble_kernel_row
from .mesh import SurfaceMesh, map_reference
from .quadrature import QuadConfig, closest_point_flat
from .solver import Solution

__all__ = [
    "IonizationModel",
    "FieldLine",
    "TraceParams",
    "TraceError",
    "eval_potential",
    "eval_efield",
    "trace_fieldline",
    "streamer_integral",
    "surface_field_magnitudes",
    "pick_start_points",
    "load_ionization_model",
    "write_fieldline_csv",
]

VERTEX_PROXIMITY = 1e-12

SURFACE_HIT = "SurfaceHit"
WEAK_FIELD = "WeakField"
MAX_LENGTH = "MaxLength"
LEFT_DOMAIN = "LeftDomain"


class TraceError(ValueError):
    """Field-line tracing could not start (weak field at the start point)."""


@dataclass(frozen=True)
class IonizationModel:
    """Effective ionization coefficient versus field strength plus the
    streamer constant.  Linear interpolation, constant beyond the table."""

    e_values: np.ndarray  # V/m, strictly increasing
    alpha_values: np.ndarray  # 1/m
    k_str: float

    def __post_init__(self):
        e = np.asarray(self.e_values, dtype=float)
        a = np.asarray(self.alpha_values, dtype=float)
        if e.ndim != 1 or e.shape != a.shape or len(e) == 0:
            raise ValueError("ionization table must be two equal 1-d columns")
        if np.any(np.diff(e) <= 0.0):
            raise ValueError("ionization table must be strictly increasing in |E|")
        object.__setattr__(self, "e_values", e)
        object.__setattr__(self, "alpha_values", a)

    def alpha(self, e_mag) -> np.ndarray:
        return np.interp(e_mag, self.e_values, self.alpha_values)


@dataclass
class FieldLine:
    points: np.ndarray  # (m, 3)
    e_magnitudes: np.ndarray  # (m,)
    arc_lengths: np.ndarray  # (m,), strictly increasing from 0
    termination: str

    def __post_init__(self):
        if not (len(self.points) == len(self.e_magnitudes) == len(self.arc_lengths)):
            raise ValueError("points, |E| samples and arc lengths must align")
        if np.any(np.diff(self.arc_lengths) <= 0.0):
            raise ValueError("arc lengths must increase strictly")

    @property
    def length(self) -> float:
        return float(self.arc_lengths[-1])


@dataclass(frozen=True)
class TraceParams:
    rel_tol: float = 1e-6
    h_min_frac: float = 1e-6  # of bounding-box diagonal
    h_max_frac: float = 0.05
    surface_tol_frac: float = 0.1  # of the nearest triangle's circumradius
    e_floor: float = 0.0  # V/m
    max_length_frac: float = 4.0  # of bounding-box diagonal
    bbox_factor: float = 1.5


# --------------------------------------------------------------------------
# Point evaluation
# --------------------------------------------------------------------------


def _check_point(mesh: SurfaceMesh, x: np.ndarray):
    d = np.linalg.norm(mesh.vertices - x[None, :], axis=1)
    if d.min() < VERTEX_PROXIMITY:
        raise ValueError(
            f"evaluation point coincides with mesh vertex {int(d.argmin())}"
        )


def eval_potential(solution: Solution, mesh: SurfaceMesh, x,
                   cfg: QuadConfig | None = None) -> float:
    """Single-layer potential of the solved density at x (volts)."""
    x = np.asarray(x, dtype=float)
    _check_point(mesh, x)
    cfg = cfg or QuadConfig()
    row, _ = assemble_kernel_row(
        mesh, mesh.tables(cfg.regular_order), x, None, KERNEL_SL, cfg=cfg
    )
    return float(row @ solution.u)


def eval_efield(solution: Solution, mesh: SurfaceMesh, x,
                cfg: QuadConfig | None = None) -> np.ndarray:
    """Electric field of the solved density at x (V/m)."""
    x = np.asarray(x, dtype=float)
    _check_point(mesh, x)
    cfg = cfg or QuadConfig()
    rows, _ = assemble_kernel_row(
        mesh, mesh.tables(cfg.regular_order), x, None, KERNEL_E, cfg=cfg
    )
    return solution.u @ rows


# --------------------------------------------------------------------------
# Surface field
# --------------------------------------------------------------------------


def surface_field_magnitudes(mesh: SurfaceMesh, solution: Solution,
                             cfg: QuadConfig | None = None,
                             side: float = +1.0,
                             workers: int = 1) -> np.ndarray:
    """|E| at every collocation point, taken on the side the vertex normal
    points into: E = E_pv + side * (u_i / 2) n_i, where E_pv is the
    principal-value field of the density at the vertex."""
    cfg = cfg or QuadConfig()
    tables = mesh.tables(cfg.regular_order)
    out = np.empty(mesh.n_collocation)

    def one(i: int):
        rows, _ = assemble_kernel_row(
            mesh, tables, mesh.colloc_points[i],
            int(mesh.colloc_vertex_ids[i]), KERNEL_E, cfg=cfg,
        )
        e_pv = solution.u @ rows
        e = e_pv + side * 0.5 * solution.u[i] * mesh.colloc_normals[i]
        out[i] = np.linalg.norm(e)

    indices = range(mesh.n_collocation)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, indices))
    else:
        for i in indices:
            one(i)
    return out


def pick_start_points(mesh: SurfaceMesh, solution: Solution, k: int,
                      offset_frac: float = 0.25,
                      cfg: QuadConfig | None = None,
                      surface_e: np.ndarray | None = None):
    """Trace seeds at the k strongest surface-field collocation points,
    offset along the vertex normal to clear the surface-hit band.

    Returns (starts (k, 3), collocation indices (k,), surface_e)."""
    if surface_e is None:
        surface_e = surface_field_magnitudes(mesh, solution, cfg=cfg)
    order = np.argsort(surface_e)[::-1][:k]
    starts = []
    for i in order:
        local = _local_circumradius(mesh, mesh.colloc_points[i])
        starts.append(
            mesh.colloc_points[i] + offset_frac * local * mesh.colloc_normals[i]
        )
    return np.array(starts), order, surface_e


# --------------------------------------------------------------------------
# Distance to surface
# --------------------------------------------------------------------------


def _surface_distance(mesh: SurfaceMesh, x: np.ndarray,
                      candidates: int = 12) -> tuple[float, float]:
    """(approximate distance to the curved surface, local circumradius).

    Candidates are ranked by the circumcircle lower bound |x - cc| - R;
    for each, the flat closest point is mapped through the quadratic
    parametrization, so the curvature sagitta does not bias the distance."""
    d_cc = np.linalg.norm(mesh.circumcenters - x[None, :], axis=1)
    lower = d_cc - mesh.circumradii
    order = np.argsort(lower)[:candidates]
    best = np.inf
    local_r = mesh.circumradii[order[0]]
    for ti in order:
        corners = mesh.tri_nodes[ti, :3]
        u, v = closest_point_flat(x, corners)
        p = map_reference(mesh.triangles[ti], np.array([u, v]))
        d = np.linalg.norm(x - p)
        if d < best:
            best = d
            local_r = mesh.circumradii[ti]
    return float(best), float(local_r)


def _local_circumradius(mesh: SurfaceMesh, x: np.ndarray) -> float:
    return _surface_distance(mesh, x)[1]


# --------------------------------------------------------------------------
# Field-line tracing (Dormand-Prince RK45 on the unit tangent field)
# --------------------------------------------------------------------------

_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def trace_fieldline(solution: Solution, mesh: SurfaceMesh, start,
                    orientation: int = +1,
                    params: TraceParams | None = None,
                    cfg: QuadConfig | None = None) -> FieldLine:
    """Integrate dx/ds = orientation * E/|E| from `start` until the line
    hits a surface, the field drops below the floor, the length budget runs
    out, or the line leaves 1.5x the mesh bounding box."""
    p = params or TraceParams()
    cfg = cfg or QuadConfig()
    lo, hi = mesh.bounding_box()
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * p.bbox_factor
    diag = float(np.linalg.norm(hi - lo))
    h_min = p.h_min_frac * diag
    h_max = p.h_max_frac * diag
    l_max = p.max_length_frac * diag
    sign = 1.0 if orientation >= 0 else -1.0

    def efield(x):
        return eval_efield(solution, mesh, x, cfg=cfg)

    def tangent(x):
        e = efield(x)
        mag = np.linalg.norm(e)
        if mag <= p.e_floor or mag == 0.0:
            return None, mag
        return sign * e / mag, mag

    x = np.asarray(start, dtype=float)
    t0, mag0 = tangent(x)
    if t0 is None:
        raise TraceError(
            f"|E| = {mag0:.3e} V/m at the start point is not above the "
            f"weak-field floor {p.e_floor:.3e}"
        )

    points = [x.copy()]
    mags = [mag0]
    arcs = [0.0]
    termination = MAX_LENGTH

    h = h_max
    s = 0.0
    k1 = t0
    # surface hits only arm once the line has cleared the launching surface
    armed = False
    while True:
        d_surf, local_r = _surface_distance(mesh, x)
        hit_tol = p.surface_tol_frac * local_r
        if d_surf > 2.0 * hit_tol:
            armed = True
        if armed and d_surf < hit_tol:
            termination = SURFACE_HIT
            # snap the endpoint onto the surface along the current tangent
            x_end = x + k1 * d_surf
            points[-1] = x_end
            arcs[-1] += d_surf
            try:
                mags[-1] = float(np.linalg.norm(efield(x_end)))
            except ValueError:
                pass
            break
        if s >= l_max:
            termination = MAX_LENGTH
            break
        if np.any(np.abs(x - center) > half):
            termination = LEFT_DOMAIN
            break
        # do not step across nearby surfaces
        h_cap = h_max if d_surf > 4.0 * h_max else max(h_min, 0.45 * d_surf)
        h = min(h, h_cap, l_max - s + h_min)

        # one adaptive Dormand-Prince step (FSAL first stage = k1)
        ks = [k1]
        failed = False
        for stage in range(1, 7):
            xi = x + h * sum(a * k for a, k in zip(_DP_A[stage], ks))
            ti, mag = tangent(xi)
            if ti is None:
                termination = WEAK_FIELD
                failed = True
                break
            ks.append(ti)
        if failed:
            break
        ks = np.array(ks)
        x5 = x + h * (_DP_B5 @ ks)
        x4 = x + h * (_DP_B4 @ ks)
        err = np.linalg.norm(x5 - x4)
        tol = p.rel_tol * max(1.0, np.linalg.norm(x5) / diag) * diag
        if err <= tol or h <= h_min * 1.0000001:
            # accept
            x = x5
            s += h
            t_new, mag_new = tangent(x)
            if t_new is None:
                points.append(x.copy())
                mags.append(mag_new)
                arcs.append(s)
                termination = WEAK_FIELD
                break
            k1 = t_new
            points.append(x.copy())
            mags.append(mag_new)
            arcs.append(s)
        factor = 0.9 * (tol / err) ** 0.2 if err > 0.0 else 2.0
        h = float(np.clip(h * np.clip(factor, 0.2, 2.0), h_min, h_max))

    return FieldLine(
        points=np.array(points),
        e_magnitudes=np.array(mags),
        arc_lengths=np.array(arcs),
        termination=termination,
    )


# --------------------------------------------------------------------------
# Streamer criterion
# --------------------------------------------------------------------------


def streamer_integral(line: FieldLine, model: IonizationModel) -> tuple[float, bool]:
    """Trapezoidal integral of alpha_eff(|E|) along the line and whether it
    exceeds the streamer constant."""
    if len(line.points) < 2:
        raise ValueError("field line needs at least two points")
    alpha = model.alpha(line.e_magnitudes)
    value = float(
        np.sum(0.5 * (alpha[1:] + alpha[:-1]) * np.diff(line.arc_lengths))
    )
    return value, value > model.k_str


def load_ionization_model(path) -> IonizationModel:
    """Read `<E> <alpha>` lines plus one `kstr <value>` line."""
    e_vals, a_vals = [], []
    k_str = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "kstr":
                k_str = float(parts[1])
                continue
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected '<E> <alpha>'")
            e_vals.append(float(parts[0]))
            a_vals.append(float(parts[1]))
    if k_str is None:
        raise ValueError(f"{path}: missing 'kstr <value>' line")
    return IonizationModel(np.array(e_vals), np.array(a_vals), k_str)


def write_fieldline_csv(line: FieldLine, model: IonizationModel | None, path):
    """CSV columns: x,y,z,s,|E|,alpha,cumulative_integral."""
    alpha = (
        model.alpha(line.e_magnitudes)
        if model is not None
        else np.zeros_like(line.e_magnitudes)
    )
    cumulative = np.concatenate(
        [[0.0], np.cumsum(
            0.5 * (alpha[1:] + alpha[:-1]) * np.diff(line.arc_lengths)
        )]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "s", "E", "alpha", "cumulative_integral"])
        for i in range(len(line.points)):
            writer.writerow(
                [
                    repr(float(line.points[i][0])),
                    repr(float(line.points[i][1])),
                    repr(float(line.points[i][2])),
                    repr(float(line.arc_lengths[i])),
                    repr(float(line.e_magnitudes[i])),
                    repr(float(alpha[i])),
                    repr(float(cumulative[i])),
                ]
            )
