"""Dense collocation-system assembly.

The matrix has one row per collocation point plus one charge-neutrality row
per floating conductor, and one column per density coefficient plus one per
floating potential.  Rows are assembled independently (thread-per-row) in
two passes: pass 1 sweeps all triangles in index order, integrating regular
pairs with the cached Gauss tables and singular pairs with corner-anchored
Duffy rules, while near-singular pairs are parked on a deferred list;
pass 2 walks the deferred pairs with the graded composite rules.  Rows are
grouped into contiguous blocks that own their storage, so blocks can live
on different workers and the matrix-vector product runs block-parallel.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mesh import (
    EPS0,
    Dirichlet,
    FloatingDirichlet,
    SurfaceMesh,
    shape_functions,
    shape_gradients,
)
from .quadrature import QuadConfig, duffy_rule, near_singular_rule

__all__ = [
    "AssemblyError",
    "Neutrality",
    "RowBlock",
    "SystemMatrix",
    "TriangleTables",
    "assemble",
    "partition_rows",
    "matvec",
    "charge_row",
    "save_matrix",
    "load_matrix",
]

FOUR_PI = 4.0 * np.pi

KERNEL_SL = "sl"
KERNEL_ADL = "adl"
KERNEL_E = "efield"


class AssemblyError(RuntimeError):
    """Mesh admits no consistent system (missing/empty floating surface...)."""


@dataclass(frozen=True)
class Neutrality:
    """Charge-neutrality row of floating surface `index`; sheets integrate
    field contributions from both sides."""

    index: int
    sheet: bool
    eps_plus: float
    eps_minus: float


# --------------------------------------------------------------------------
# Precomputed per-mesh quadrature tables
# --------------------------------------------------------------------------


class TriangleTables:
    """Regular-rule sample data for every triangle of a mesh: mapped points,
    weight*Jacobian products and linear-hat values, laid out for one-shot
    row evaluation."""

    def __init__(self, mesh: SurfaceMesh, order: int):
        from .quadrature import regular_rule

        self.mesh = mesh
        self.order = order
        rule = regular_rule(order)
        self.rule = rule
        nq = len(rule)
        uv = rule.nodes
        n_sh = shape_functions(uv)  # (nq, 6)
        du, dv = shape_gradients(uv)

        nodes = mesh.tri_nodes  # (nt, 6, 3)
        pts = np.einsum("qk,tkd->tqd", n_sh, nodes)
        tu = np.einsum("qk,tkd->tqd", du, nodes)
        tv = np.einsum("qk,tkd->tqd", dv, nodes)
        cross = np.cross(tu, tv)
        jac = np.linalg.norm(cross, axis=2)  # (nt, nq)

        self.points_flat = pts.reshape(-1, 3)  # (nt*nq, 3)
        self.jw = rule.weights[None, :] * jac  # (nt, nq)
        self.normals = cross / jac[..., None]  # (nt, nq, 3)
        self.hats = np.column_stack(
            [1.0 - uv[:, 0] - uv[:, 1], uv[:, 0], uv[:, 1]]
        )  # (nq, 3)
        self.nq = nq

    # cached Duffy shape data per (corner, n1d)
    _duffy_shapes: dict = {}

    @classmethod
    def duffy_shape(cls, corner: int, n1d: int):
        key = (corner, n1d)
        hit = cls._duffy_shapes.get(key)
        if hit is None:
            rule = duffy_rule(corner, n1d)
            uv = rule.nodes
            hats = np.column_stack([1.0 - uv[:, 0] - uv[:, 1], uv[:, 0], uv[:, 1]])
            hit = (rule, shape_functions(uv), *shape_gradients(uv), hats)
            cls._duffy_shapes[key] = hit
        return hit


# --------------------------------------------------------------------------
# Row evaluation
# --------------------------------------------------------------------------


def _kernel_values(kernel: str, d: np.ndarray, r: np.ndarray, n_x):
    """Kernel samples for difference vectors d = x - y with |d| = r."""
    if kernel == KERNEL_SL:
        return 1.0 / (FOUR_PI * r)
    if kernel == KERNEL_ADL:
        return (d @ n_x) / (FOUR_PI * r ** 3)
    return d / (FOUR_PI * r ** 3)[:, None]


def row_pass1(
    mesh: SurfaceMesh,
    tables: TriangleTables,
    x: np.ndarray,
    vertex_id,
    kernel: str,
    n_x=None,
    cfg: QuadConfig | None = None,
):
    """Pass 1 for one row: regular + singular contributions and the list of
    deferred near-singular triangle indices.

    Returns (coeffs, deferred, counts) where coeffs has shape (n,) for
    scalar kernels or (n, 3) for the field kernel.
    """
    cfg = cfg or QuadConfig()
    n = mesh.n_collocation
    nt = mesh.n_triangles
    nq = tables.nq

    # classification against all triangles at once
    dist_cc = np.linalg.norm(x[None, :] - mesh.circumcenters, axis=1)
    regular = dist_cc > cfg.eta * mesh.circumradii
    singular_pairs = []
    if vertex_id is not None:
        for ti, corner in mesh.vertex_corners[vertex_id]:
            regular[ti] = False
            singular_pairs.append((ti, corner))
    singular_set = {ti for ti, _ in singular_pairs}
    deferred = [
        int(ti)
        for ti in np.nonzero(~regular)[0]
        if int(ti) not in singular_set
    ]

    vector = kernel == KERNEL_E
    coeffs = np.zeros((n, 3)) if vector else np.zeros(n)

    # regular part, swept in triangle chunks that keep temporaries in cache
    chunk = 2048
    jw_flat = tables.jw
    for t0 in range(0, nt, chunk):
        t1 = min(t0 + chunk, nt)
        d = x[None, :] - tables.points_flat[t0 * nq: t1 * nq]
        r = np.sqrt(np.einsum("md,md->m", d, d))
        if vector:
            ker = _kernel_values(kernel, d, r, n_x)  # (m, 3)
            ker = ker * jw_flat[t0:t1].reshape(-1)[:, None]
            ker = ker.reshape(t1 - t0, nq, 3)
            ker[~regular[t0:t1]] = 0.0
            contrib = np.einsum("tqd,qc->tcd", ker, tables.hats)
            cols = mesh.tri_corner_cols[t0:t1]
            for axis in range(3):
                coeffs[:, axis] += np.bincount(
                    cols.ravel(), weights=contrib[:, :, axis].ravel(), minlength=n
                )
        else:
            ker = _kernel_values(kernel, d, r, n_x) * jw_flat[t0:t1].reshape(-1)
            ker = ker.reshape(t1 - t0, nq)
            ker[~regular[t0:t1]] = 0.0
            contrib = ker @ tables.hats  # (chunk, 3)
            coeffs += np.bincount(
                mesh.tri_corner_cols[t0:t1].ravel(),
                weights=contrib.ravel(),
                minlength=n,
            )

    # singular pairs: Duffy anchored at the matching corner, one batch
    if singular_pairs:
        shapes = [
            TriangleTables.duffy_shape(corner, cfg.duffy_points)
            for _, corner in singular_pairs
        ]
        tri_idx = np.array([ti for ti, _ in singular_pairs], dtype=np.intp)
        w_stack = np.stack([s[0].weights for s in shapes])  # (p, m)
        n_stack = np.stack([s[1] for s in shapes])  # (p, m, 6)
        du_stack = np.stack([s[2] for s in shapes])
        dv_stack = np.stack([s[3] for s in shapes])
        hats_stack = np.stack([s[4] for s in shapes])  # (p, m, 3)
        nodes = mesh.tri_nodes[tri_idx]  # (p, 6, 3)
        pts = n_stack @ nodes  # (p, m, 3)
        jac = np.linalg.norm(np.cross(du_stack @ nodes, dv_stack @ nodes), axis=2)
        d = x[None, None, :] - pts
        r = np.sqrt(np.einsum("pmd,pmd->pm", d, d))
        wj = w_stack * jac
        cols = mesh.tri_corner_cols[tri_idx]  # (p, 3)
        if vector:
            ker = d * (wj / (FOUR_PI * r ** 3))[..., None]  # (p, m, 3)
            contrib = np.einsum("pmd,pmc->pcd", ker, hats_stack)
            for p_i in range(len(tri_idx)):
                for c in range(3):
                    coeffs[cols[p_i, c]] += contrib[p_i, c]
        else:
            if kernel == KERNEL_SL:
                ker = wj / (FOUR_PI * r)
            else:
                ker = np.einsum("pmd,d->pm", d, n_x) * wj / (FOUR_PI * r ** 3)
            contrib = np.einsum("pm,pmc->pc", ker, hats_stack)
            for p_i in range(len(tri_idx)):
                for c in range(3):
                    coeffs[cols[p_i, c]] += contrib[p_i, c]

    counts = {
        "regular": int(np.count_nonzero(regular)),
        "singular": len(singular_pairs),
        "near": len(deferred),
    }
    return coeffs, deferred, counts


def row_pass2(
    mesh: SurfaceMesh,
    coeffs: np.ndarray,
    x: np.ndarray,
    deferred: list[int],
    kernel: str,
    n_x=None,
    cfg: QuadConfig | None = None,
):
    """Pass 2: integrate the deferred near-singular pairs of one row with
    the graded composite rules, batched over all pairs."""
    if not deferred:
        return
    cfg = cfg or QuadConfig()
    uv_parts, w_parts, tri_parts = [], [], []
    for ti in deferred:
        rule = near_singular_rule(x, mesh.triangles[ti], cfg)
        uv_parts.append(rule.nodes)
        w_parts.append(rule.weights)
        tri_parts.append(np.full(len(rule), ti, dtype=np.intp))
    uv = np.vstack(uv_parts)
    w = np.concatenate(w_parts)
    tri_idx = np.concatenate(tri_parts)

    n_sh = shape_functions(uv)
    du, dv = shape_gradients(uv)
    hats = np.column_stack([1.0 - uv[:, 0] - uv[:, 1], uv[:, 0], uv[:, 1]])
    nodes = mesh.tri_nodes[tri_idx]  # (m, 6, 3)
    pts = np.einsum("mk,mkd->md", n_sh, nodes)
    tu = np.einsum("mk,mkd->md", du, nodes)
    tv = np.einsum("mk,mkd->md", dv, nodes)
    jac = np.linalg.norm(np.cross(tu, tv), axis=1)

    d = x[None, :] - pts
    r = np.sqrt(np.einsum("md,md->m", d, d))
    cols = mesh.tri_corner_cols[tri_idx]  # (m, 3)
    n = mesh.n_collocation
    if kernel == KERNEL_E:
        ker = _kernel_values(kernel, d, r, n_x) * (w * jac)[:, None]  # (m, 3)
        for axis in range(3):
            vals = ker[:, axis][:, None] * hats
            coeffs[:, axis] += np.bincount(
                cols.ravel(), weights=vals.ravel(), minlength=n
            )
    else:
        ker = _kernel_values(kernel, d, r, n_x) * (w * jac)
        vals = ker[:, None] * hats
        coeffs += np.bincount(cols.ravel(), weights=vals.ravel(), minlength=n)


def assemble_kernel_row(mesh, tables, x, vertex_id, kernel, n_x=None, cfg=None):
    """Full (pass 1 + pass 2) kernel row for one evaluation point."""
    coeffs, deferred, counts = row_pass1(
        mesh, tables, x, vertex_id, kernel, n_x=n_x, cfg=cfg
    )
    row_pass2(mesh, coeffs, x, deferred, kernel, n_x=n_x, cfg=cfg)
    return coeffs, counts


# --------------------------------------------------------------------------
# Matrix container
# --------------------------------------------------------------------------


@dataclass
class RowBlock:
    start: int
    stop: int
    data: np.ndarray  # ((stop - start), N) dense storage

    def __len__(self):
        return self.stop - self.start


@dataclass
class SystemMatrix:
    """Row-partitioned dense system.

    Columns 0..n-1 are density coefficients, n..n+n_floating-1 floating
    potentials.  Row i < n is the collocation equation of point i; row
    n + k is the neutrality equation of floating surface k.
    """

    n: int
    n_floating: int
    blocks: list[RowBlock]
    diagnostics: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        size = self.n + self.n_floating
        return (size, size)

    @property
    def size(self) -> int:
        return self.n + self.n_floating

    def row(self, i: int) -> np.ndarray:
        for b in self.blocks:
            if b.start <= i < b.stop:
                return b.data[i - b.start]
        raise IndexError(i)

    def diagonal(self) -> np.ndarray:
        diag = np.empty(self.size)
        for b in self.blocks:
            idx = np.arange(b.start, b.stop)
            diag[idx] = b.data[np.arange(len(b)), idx]
        return diag

    def toarray(self) -> np.ndarray:
        return np.vstack([b.data for b in self.blocks])

    def matvec(self, v: np.ndarray, workers: int = 1) -> np.ndarray:
        return matvec(self, v, workers=workers)


def partition_rows(total: int, n_blocks: int) -> list[tuple[int, int]]:
    """Contiguous row ranges with sizes differing by at most one."""
    if n_blocks < 1 or n_blocks > total:
        raise ValueError(f"need 1 <= n_blocks <= {total}, got {n_blocks}")
    base, rem = divmod(total, n_blocks)
    ranges = []
    start = 0
    for b in range(n_blocks):
        size = base + (1 if b < rem else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


def matvec(matrix: SystemMatrix, v: np.ndarray, workers: int = 1) -> np.ndarray:
    """Dense block-parallel product.

    Each row is reduced by its own dot product, whose accumulation pattern
    depends only on the (fixed) column count, so the result is bitwise
    identical for any block partition or worker count."""
    v = np.asarray(v)
    if v.shape != (matrix.size,):
        raise ValueError(f"vector of length {len(v)} against size {matrix.size}")
    out = np.empty(matrix.size)

    def run(b: RowBlock):
        vc = v if b.data.dtype == v.dtype else v.astype(b.data.dtype)
        data = b.data
        seg = out[b.start:b.stop]
        for i in range(len(b)):
            seg[i] = data[i] @ vc

    if workers > 1 and len(matrix.blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, matrix.blocks))
    else:
        for b in matrix.blocks:
            run(b)
    return out


# --------------------------------------------------------------------------
# Assembly driver
# --------------------------------------------------------------------------


def _row_equation(mesh: SurfaceMesh, cfg: QuadConfig, tables, row: int):
    """Dense row + rhs entry for global row index `row`."""
    n = mesh.n_collocation
    size = n + mesh.n_floating
    out = np.zeros(size)
    counts = {"regular": 0, "singular": 0, "near": 0}

    if row < n:
        kind = mesh.row_kinds[row]
        x = mesh.colloc_points[row]
        if isinstance(kind, (Dirichlet, FloatingDirichlet)):
            coeffs, c = assemble_kernel_row(
                mesh, tables, x, int(mesh.colloc_vertex_ids[row]), KERNEL_SL,
                cfg=cfg,
            )
            out[:n] = coeffs
            counts = c
            if isinstance(kind, FloatingDirichlet):
                out[n + kind.index] = -1.0
                rhs = 0.0
            else:
                rhs = kind.v0
        else:  # DielectricJump
            n_x = mesh.colloc_normals[row]
            coeffs, counts = assemble_kernel_row(
                mesh, tables, x, int(mesh.colloc_vertex_ids[row]), KERNEL_ADL,
                n_x=n_x, cfg=cfg,
            )
            out[:n] = (kind.eps_plus - kind.eps_minus) * coeffs
            out[row] += 0.5 * (kind.eps_plus + kind.eps_minus)
            rhs = 0.0
        return out, rhs, counts

    # neutrality row of floating surface k
    k = row - n
    members = mesh.floating_collocation(k)
    sheet = False
    eps_plus = EPS0
    eps_minus = EPS0
    for p in mesh.patches.values():
        if p.is_floating and p.index == k:
            if p.kind == "sheet":
                sheet = True
                eps_plus, eps_minus = p.eps_plus, p.eps_minus
    if sheet:
        adl_scale = eps_plus - eps_minus
        id_scale = 0.5 * (eps_plus + eps_minus)
    else:
        adl_scale = eps_plus
        id_scale = 0.5 * eps_plus
    for i in members:
        w_i = mesh.lumped_weights[i]
        x = mesh.colloc_points[i]
        n_x = mesh.colloc_normals[i]
        coeffs, c = assemble_kernel_row(
            mesh, tables, x, int(mesh.colloc_vertex_ids[i]), KERNEL_ADL,
            n_x=n_x, cfg=cfg,
        )
        out[:n] += w_i * adl_scale * coeffs
        out[i] += w_i * id_scale
    return out, 0.0, counts


def assemble(
    mesh: SurfaceMesh,
    cfg: QuadConfig | None = None,
    n_blocks: int = 1,
    workers: int = 1,
    precision: str = "double",
) -> tuple[SystemMatrix, np.ndarray]:
    """Build the dense (n + N_fl)-dimensional system and right-hand side."""
    cfg = cfg or QuadConfig()
    n = mesh.n_collocation
    size = n + mesh.n_floating
    if precision not in ("double", "single"):
        raise AssemblyError(f"unknown precision {precision!r}")
    dtype = np.float64 if precision == "double" else np.float32

    for k in range(mesh.n_floating):
        members = mesh.floating_collocation(k)
        if len(members) == 0:
            raise AssemblyError(
                f"floating surface {k} has no collocation points; "
                "cannot write its neutrality row"
            )
        if mesh.lumped_weights[members].sum() <= 0.0:
            raise AssemblyError(f"floating surface {k} has zero area")

    tables = mesh.tables(cfg.regular_order)
    ranges = partition_rows(size, n_blocks)
    blocks = [
        RowBlock(start, stop, np.zeros((stop - start, size), dtype=dtype))
        for start, stop in ranges
    ]
    rhs = np.zeros(size)
    totals = {"regular": 0, "singular": 0, "near": 0}

    def fill(block: RowBlock, row: int):
        vec, b, counts = _row_equation(mesh, cfg, tables, row)
        block.data[row - block.start] = vec
        rhs[row] = b
        return counts

    for block in blocks:
        rows = range(block.start, block.stop)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda r: fill(block, r), rows))
        else:
            results = [fill(block, r) for r in rows]
        for c in results:
            for key in totals:
                totals[key] += c[key]

    matrix = SystemMatrix(n=n, n_floating=mesh.n_floating, blocks=blocks)
    matrix.diagnostics = {
        "pairs_regular": totals["regular"],
        "pairs_singular": totals["singular"],
        "pairs_near_singular": totals["near"],
        "rows_with_integrals": n,
        "n_triangles": mesh.n_triangles,
        "precision": precision,
        "quad": cfg,
    }
    return matrix, rhs


# --------------------------------------------------------------------------
# Charge functional
# --------------------------------------------------------------------------


def charge_row(
    mesh: SurfaceMesh,
    colloc_indices,
    eps_plus: float = EPS0,
    eps_minus: float | None = None,
    cfg: QuadConfig | None = None,
) -> np.ndarray:
    """Row vector q such that q . u is the total charge seen through the
    surface spanned by the given collocation points (Gauss functional:
    lumped integral of eps * (u/2 + K'u)).  Pass eps_minus for sheet-style
    both-sides accounting."""
    cfg = cfg or QuadConfig()
    tables = mesh.tables(cfg.regular_order)
    n = mesh.n_collocation
    out = np.zeros(n)
    if eps_minus is None:
        adl_scale, id_scale = eps_plus, 0.5 * eps_plus
    else:
        adl_scale = eps_plus - eps_minus
        id_scale = 0.5 * (eps_plus + eps_minus)
    for i in colloc_indices:
        w_i = mesh.lumped_weights[i]
        coeffs, _ = assemble_kernel_row(
            mesh, tables, mesh.colloc_points[i],
            int(mesh.colloc_vertex_ids[i]), KERNEL_ADL,
            n_x=mesh.colloc_normals[i], cfg=cfg,
        )
        out += w_i * adl_scale * coeffs
        out[i] += w_i * id_scale
    return out


# --------------------------------------------------------------------------
# Binary dump (debugging / cross-run diffing)
# --------------------------------------------------------------------------

_MAGIC = b"HVBM\x01"


def save_matrix(matrix: SystemMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        prec = 8 if matrix.blocks[0].data.dtype == np.float64 else 4
        fh.write(
            struct.pack(
                "<qqqq", matrix.size, matrix.n, matrix.n_floating, prec
            )
        )
        fh.write(struct.pack("<q", len(matrix.blocks)))
        for b in matrix.blocks:
            fh.write(struct.pack("<qq", b.start, b.stop))
        for b in matrix.blocks:
            fh.write(np.ascontiguousarray(b.data).tobytes())


def load_matrix(path) -> SystemMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a matrix dump")
        size, n, n_fl, prec = struct.unpack("<qqqq", fh.read(32))
        dtype = np.float64 if prec == 8 else np.float32
        (nblocks,) = struct.unpack("<q", fh.read(8))
        ranges = [struct.unpack("<qq", fh.read(16)) for _ in range(nblocks)]
        blocks = []
        for start, stop in ranges:
            count = (stop - start) * size
            data = np.frombuffer(fh.read(count * prec), dtype=dtype)
            blocks.append(RowBlock(start, stop, data.reshape(stop - start, size).copy()))
    return SystemMatrix(n=n, n_floating=n_fl, blocks=blocks)
