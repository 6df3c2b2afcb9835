"""Curved-triangle surface meshes: loading, validation, reference-space
geometry and the per-vertex data the collocation system is built from.

Triangles carry six nodes (three corners, three midside nodes).  Geometry is
quadratic; the density basis is the mapped linear hat on the corner nodes,
so only corner vertices are collocation points and carry unknowns.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .quadrature import regular_rule

__all__ = [
    "MeshError",
    "Vertex",
    "CurvedTriangle",
    "PatchSpec",
    "SurfaceMesh",
    "Dirichlet",
    "FloatingDirichlet",
    "DielectricJump",
    "load_mesh",
    "parse_mesh",
    "save_mesh",
    "map_reference",
    "surface_frame",
    "classify_vertex",
    "shape_functions",
    "shape_gradients",
]

EPS0 = 8.8541878128e-12  # vacuum permittivity, F/m

MIN_CIRCUMRADIUS = 1e-12
MIN_JACOBIAN = 1e-14


class MeshError(ValueError):
    """Invalid mesh file or mesh geometry."""


# --------------------------------------------------------------------------
# Row kinds (what equation a collocation point contributes)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Dirichlet:
    v0: float


@dataclass(frozen=True)
class FloatingDirichlet:
    index: int


@dataclass(frozen=True)
class DielectricJump:
    eps_plus: float
    eps_minus: float


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Vertex:
    id: int
    position: np.ndarray


@dataclass(frozen=True)
class PatchSpec:
    """Boundary condition attached to a patch tag.

    kind: "electrode" (v0), "floating" (index), "sheet" (index, eps_plus,
    eps_minus) or "dielectric" (eps_plus, eps_minus).  For dielectric
    interfaces the triangle winding defines the normal, pointing from the
    minus side into the plus side.
    """

    tag: int
    kind: str
    v0: float = 0.0
    index: int = -1
    eps_plus: float = 0.0
    eps_minus: float = 0.0

    @property
    def is_floating(self) -> bool:
        return self.kind in ("floating", "sheet")


@dataclass
class CurvedTriangle:
    """Six-node quadratic triangle with cached node positions and flat
    circumscribed-circle data (used by pair classification)."""

    index: int
    corner_ids: tuple[int, int, int]
    midside_ids: tuple[int, int, int]  # edges 0-1, 1-2, 2-0
    patch_tag: int
    nodes: np.ndarray = field(repr=False)  # (6, 3) in node order c0 c1 c2 m01 m12 m20
    circumcenter: np.ndarray = field(repr=False)
    circumradius: float = 0.0

    @property
    def node_ids(self) -> tuple[int, ...]:
        return self.corner_ids + self.midside_ids


# --------------------------------------------------------------------------
# Quadratic Lagrange shape functions on the reference triangle
# --------------------------------------------------------------------------


def shape_functions(uv: np.ndarray) -> np.ndarray:
    """Six-node Lagrange values, shape (m, 6) for uv of shape (m, 2)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    u, v = uv[:, 0], uv[:, 1]
    l0 = 1.0 - u - v
    n = np.empty((len(uv), 6))
    n[:, 0] = l0 * (2.0 * l0 - 1.0)
    n[:, 1] = u * (2.0 * u - 1.0)
    n[:, 2] = v * (2.0 * v - 1.0)
    n[:, 3] = 4.0 * l0 * u
    n[:, 4] = 4.0 * u * v
    n[:, 5] = 4.0 * v * l0
    return n


def shape_gradients(uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference-space derivatives (dN/du, dN/dv), each of shape (m, 6)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    u, v = uv[:, 0], uv[:, 1]
    l0 = 1.0 - u - v
    du = np.empty((len(uv), 6))
    dv = np.empty((len(uv), 6))
    du[:, 0] = 1.0 - 4.0 * l0
    du[:, 1] = 4.0 * u - 1.0
    du[:, 2] = 0.0
    du[:, 3] = 4.0 * (l0 - u)
    du[:, 4] = 4.0 * v
    du[:, 5] = -4.0 * v
    dv[:, 0] = 1.0 - 4.0 * l0
    dv[:, 1] = 0.0
    dv[:, 2] = 4.0 * v - 1.0
    dv[:, 3] = -4.0 * u
    dv[:, 4] = 4.0 * u
    dv[:, 5] = 4.0 * (l0 - v)
    return du, dv


def map_reference(tri: CurvedTriangle, uv) -> np.ndarray:
    """Surface point(s) of the quadratic parametrization at reference uv."""
    n = shape_functions(uv)
    pts = n @ tri.nodes
    return pts[0] if np.ndim(uv) == 1 else pts


def surface_frame(tri: CurvedTriangle, uv) -> tuple[np.ndarray, float]:
    """Unit normal and area element at reference uv; orientation follows
    the corner winding.  Raises MeshError on a degenerate Jacobian."""
    single = np.ndim(uv) == 1
    du, dv = shape_gradients(uv)
    tu = du @ tri.nodes
    tv = dv @ tri.nodes
    cross = np.cross(tu, tv)
    jac = np.linalg.norm(cross, axis=1)
    if np.any(jac < MIN_JACOBIAN):
        raise MeshError(
            f"degenerate surface Jacobian on triangle {tri.index} "
            f"(|J| = {jac.min():.3e})"
        )
    normal = cross / jac[:, None]
    if single:
        return normal[0], float(jac[0])
    return normal, jac


def _flat_circumcircle(corners: np.ndarray) -> tuple[np.ndarray, float]:
    a, b, c = corners
    ab = b - a
    ac = c - a
    n = np.cross(ab, ac)
    nn = float(n @ n)
    if nn <= 0.0:
        return a.copy(), 0.0
    center = a + (
        (ac @ ac) * np.cross(n, ab) + (ab @ ab) * np.cross(ac, n)
    ) / (2.0 * nn)
    radius = float(np.linalg.norm(center - a))
    return center, radius


# --------------------------------------------------------------------------
# SurfaceMesh
# --------------------------------------------------------------------------


class SurfaceMesh:
    """Validated surface mesh with precomputed collocation data.

    Immutable after construction; safe to share across worker threads.
    """

    def __init__(self, vertices: np.ndarray, triangles: list[CurvedTriangle],
                 patches: dict[int, PatchSpec]):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = triangles
        self.patches = patches

        self.tri_nodes = np.stack([t.nodes for t in triangles])  # (nt, 6, 3)
        self.tri_node_ids = np.array([t.node_ids for t in triangles], dtype=np.intp)
        self.circumcenters = np.stack([t.circumcenter for t in triangles])
        self.circumradii = np.array([t.circumradius for t in triangles])
        self.tri_tags = np.array([t.patch_tag for t in triangles], dtype=np.intp)

        self._build_adjacency()
        self._build_collocation()
        self._cache_lock = threading.Lock()
        self._table_cache: dict = {}

    # -- construction helpers ------------------------------------------------

    def _build_adjacency(self):
        nv = len(self.vertices)
        adj: list[list[int]] = [[] for _ in range(nv)]
        corner_of: list[list[tuple[int, int]]] = [[] for _ in range(nv)]
        for t in self.triangles:
            for vid in t.node_ids:
                adj[vid].append(t.index)
            for c, vid in enumerate(t.corner_ids):
                corner_of[vid].append((t.index, c))
        lonely = [i for i, tris in enumerate(adj) if not tris]
        if lonely:
            raise MeshError(f"vertex {lonely[0]} belongs to no triangle")
        self.vertex_triangles = adj
        self.vertex_corners = corner_of

    def _build_collocation(self):
        nv = len(self.vertices)
        is_corner = np.zeros(nv, dtype=bool)
        for t in self.triangles:
            for vid in t.corner_ids:
                is_corner[vid] = True
        colloc_ids = np.nonzero(is_corner)[0]
        colloc_index = np.full(nv, -1, dtype=np.intp)
        colloc_index[colloc_ids] = np.arange(len(colloc_ids))

        self.colloc_vertex_ids = colloc_ids
        self.colloc_index = colloc_index
        self.colloc_points = self.vertices[colloc_ids]

        # columns touched by each triangle: collocation indices of its corners
        self.tri_corner_cols = colloc_index[self.tri_node_ids[:, :3]]

        self.row_kinds = [classify_vertex(self, int(vid)) for vid in colloc_ids]
        floats = sorted(
            {p.index for p in self.patches.values() if p.is_floating}
        )
        if floats and floats != list(range(len(floats))):
            raise MeshError(
                f"floating indices must be contiguous from 0, got {floats}"
            )
        self.n_floating = len(floats)

        self._compute_weights_and_normals()

    def _compute_weights_and_normals(self):
        """Lumped weights w_i = sum_t int psi_i dS (degree-4 rule) and
        lumped-area-weighted vertex normals."""
        rule = regular_rule(4)
        n_sh = shape_functions(rule.nodes)
        du, dv = shape_gradients(rule.nodes)
        lam = np.column_stack([
            1.0 - rule.nodes[:, 0] - rule.nodes[:, 1],
            rule.nodes[:, 0],
            rule.nodes[:, 1],
        ])
        w = np.zeros(len(self.colloc_points))
        normals = np.zeros((len(self.colloc_points), 3))
        for t in self.triangles:
            tu = du @ t.nodes
            tv = dv @ t.nodes
            cross = np.cross(tu, tv)
            jac = np.linalg.norm(cross, axis=1)
            if np.any(jac < MIN_JACOBIAN):
                raise MeshError(f"degenerate Jacobian in triangle {t.index}")
            unit = cross / jac[:, None]
            wj = rule.weights * jac
            contrib = lam.T @ wj  # (3,) per-corner lumped areas
            n_avg = (lam * wj[:, None]).T @ unit  # (3, 3) area-weighted normals
            cols = self.tri_corner_cols[t.index]
            for c in range(3):
                w[cols[c]] += contrib[c]
                normals[cols[c]] += n_avg[c]
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms < MIN_JACOBIAN):
            bad = int(np.argmin(norms))
            raise MeshError(
                f"vertex {self.colloc_vertex_ids[bad]} has a vanishing "
                "averaged normal (folded surface?)"
            )
        self.lumped_weights = w
        self.colloc_normals = normals / norms[:, None]

    # -- queries ---------------------------------------------------------------

    @property
    def n_collocation(self) -> int:
        return len(self.colloc_points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def patch_of(self, tri_index: int) -> PatchSpec:
        return self.patches[self.triangles[tri_index].patch_tag]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def floating_collocation(self, k: int) -> np.ndarray:
        """Collocation indices whose row belongs to floating surface k."""
        rows = [
            i
            for i, kind in enumerate(self.row_kinds)
            if isinstance(kind, FloatingDirichlet) and kind.index == k
        ]
        return np.array(rows, dtype=np.intp)

    def total_area(self) -> float:
        return float(self.lumped_weights.sum())

    def tables(self, order: int):
        """Memoized per-order quadrature tables (see assembly.TriangleTables)."""
        from .assembly import TriangleTables

        with self._cache_lock:
            tab = self._table_cache.get(order)
            if tab is None:
                tab = TriangleTables(self, order)
                self._table_cache[order] = tab
            return tab


# --------------------------------------------------------------------------
# Vertex classification
# --------------------------------------------------------------------------


def classify_vertex(mesh: SurfaceMesh, vertex_id: int):
    """Row kind for a collocation vertex.

    Junction priority: electrode > floating > dielectric.  A vertex touching
    only dielectric triangles must see a single (eps+, eps-) pair.
    """
    tris = mesh.vertex_triangles[vertex_id]
    if not tris:
        raise MeshError(f"vertex {vertex_id} belongs to no triangle")
    electrode = None
    floating = None
    dielectric = []
    for ti in tris:
        patch = mesh.patch_of(ti)
        if patch.kind == "electrode":
            electrode = patch
        elif patch.is_floating:
            floating = patch
        else:
            dielectric.append(patch)
    if electrode is not None:
        return Dirichlet(electrode.v0)
    if floating is not None:
        return FloatingDirichlet(floating.index)
    pairs = {(p.eps_plus, p.eps_minus) for p in dielectric}
    if len(pairs) != 1:
        raise MeshError(
            f"vertex {vertex_id} joins dielectric interfaces with different "
            f"permittivity pairs {sorted(pairs)}; triple junctions are not "
            "supported"
        )
    eps_plus, eps_minus = pairs.pop()
    return DielectricJump(eps_plus, eps_minus)


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------


def parse_mesh(text: str, name: str = "<string>") -> SurfaceMesh:
    """Parse the line-oriented mesh format (see save_mesh for the shape)."""
    lines = text.splitlines()
    vertex_rows: dict[int, np.ndarray] = {}
    tri_rows: list[tuple[int, tuple[int, ...], int]] = []
    patches: dict[int, PatchSpec] = {}
    eps_scale = 1.0
    header_seen = False

    def err(lineno, msg):
        raise MeshError(f"{name}:{lineno}: {msg}")

    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if not header_seen:
            if parts[0] != "bemesh" or len(parts) != 2 or parts[1] != "1":
                err(lineno, f"expected header 'bemesh 1', got {line!r}")
            header_seen = True
            continue
        kind = parts[0]
        try:
            if kind == "vertex":
                if len(parts) != 5:
                    err(lineno, "vertex needs: vertex <id> <x> <y> <z>")
                vid = int(parts[1])
                pos = np.array([float(p) for p in parts[2:5]])
                if not np.all(np.isfinite(pos)):
                    err(lineno, f"non-finite vertex position {parts[2:5]}")
                if vid in vertex_rows:
                    err(lineno, f"duplicate vertex id {vid}")
                vertex_rows[vid] = pos
            elif kind == "triangle":
                if len(parts) != 8:
                    err(lineno, "triangle needs 6 node ids and a patch tag")
                ids = tuple(int(p) for p in parts[1:7])
                tag = int(parts[7])
                tri_rows.append((lineno, ids, tag))
            elif kind == "patch":
                tag = int(parts[1])
                if tag in patches:
                    err(lineno, f"duplicate patch tag {tag}")
                ptype = parts[2]
                if ptype == "electrode":
                    patches[tag] = PatchSpec(tag, "electrode", v0=float(parts[3]))
                elif ptype == "floating":
                    patches[tag] = PatchSpec(tag, "floating", index=int(parts[3]))
                elif ptype == "sheet":
                    patches[tag] = PatchSpec(
                        tag, "sheet", index=int(parts[3]),
                        eps_plus=float(parts[4]), eps_minus=float(parts[5]),
                    )
                elif ptype == "dielectric":
                    patches[tag] = PatchSpec(
                        tag, "dielectric",
                        eps_plus=float(parts[3]), eps_minus=float(parts[4]),
                    )
                else:
                    err(lineno, f"unknown patch kind {ptype!r}")
            elif kind == "permittivity":
                if parts[1] == "relative":
                    eps_scale = EPS0
                elif parts[1] == "absolute":
                    eps_scale = 1.0
                else:
                    err(lineno, "permittivity must be 'relative' or 'absolute'")
            else:
                err(lineno, f"unknown record {kind!r}")
        except MeshError:
            raise
        except (ValueError, IndexError) as exc:
            err(lineno, f"malformed record: {exc}")

    if not header_seen:
        raise MeshError(f"{name}: empty file (missing 'bemesh 1' header)")
    if not vertex_rows:
        raise MeshError(f"{name}: no vertices")
    if not tri_rows:
        raise MeshError(f"{name}: no triangles")

    nv = len(vertex_rows)
    if sorted(vertex_rows) != list(range(nv)):
        raise MeshError(f"{name}: vertex ids must be contiguous 0..{nv - 1}")
    vertices = np.stack([vertex_rows[i] for i in range(nv)])

    if eps_scale != 1.0:
        patches = {
            tag: PatchSpec(
                p.tag, p.kind, v0=p.v0, index=p.index,
                eps_plus=p.eps_plus * eps_scale,
                eps_minus=p.eps_minus * eps_scale,
            )
            for tag, p in patches.items()
        }
    for p in patches.values():
        if p.kind in ("sheet", "dielectric") and (p.eps_plus <= 0 or p.eps_minus <= 0):
            raise MeshError(f"{name}: patch {p.tag}: permittivities must be > 0")

    triangles: list[CurvedTriangle] = []
    probe = regular_rule(6)
    for idx, (lineno, ids, tag) in enumerate(tri_rows):
        for vid in ids:
            if vid < 0 or vid >= nv:
                raise MeshError(
                    f"{name}:{lineno}: triangle references vertex {vid} "
                    f"of {nv}"
                )
        if len(set(ids)) != 6:
            raise MeshError(f"{name}:{lineno}: triangle node ids must be distinct")
        if tag not in patches:
            raise MeshError(f"{name}:{lineno}: unknown patch tag {tag}")
        nodes = vertices[list(ids)]
        center, radius = _flat_circumcircle(nodes[:3])
        if radius < MIN_CIRCUMRADIUS:
            raise MeshError(
                f"{name}:{lineno}: degenerate triangle "
                f"(circumradius {radius:.3e} m)"
            )
        tri = CurvedTriangle(
            index=idx,
            corner_ids=tuple(ids[:3]),
            midside_ids=tuple(ids[3:]),
            patch_tag=tag,
            nodes=nodes,
            circumcenter=center,
            circumradius=radius,
        )
        surface_frame(tri, probe.nodes)  # raises on non-positive Jacobians
        triangles.append(tri)

    return SurfaceMesh(vertices, triangles, patches)


def load_mesh(path) -> SurfaceMesh:
    """Load and validate a mesh file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_mesh(text, name=str(path))


def save_mesh(mesh_or_parts, path) -> None:
    """Write the mesh format:

        bemesh 1
        vertex <id> <x> <y> <z>
        triangle <c0> <c1> <c2> <m01> <m12> <m20> <tag>
        patch <tag> electrode <V0> | floating <k> | sheet <k> <e+> <e-> |
              dielectric <e+> <e->
    """
    if isinstance(mesh_or_parts, SurfaceMesh):
        vertices = mesh_or_parts.vertices
        tris = [
            (t.corner_ids + t.midside_ids, t.patch_tag)
            for t in mesh_or_parts.triangles
        ]
        patches = mesh_or_parts.patches
    else:
        vertices, tris, patches = mesh_or_parts
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bemesh 1\n")
        for i, p in enumerate(vertices):
            fh.write(f"vertex {i} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        for ids, tag in tris:
            fh.write("triangle " + " ".join(str(i) for i in ids) + f" {tag}\n")
        for tag in sorted(patches):
            p = patches[tag]
            if p.kind == "electrode":
                fh.write(f"patch {tag} electrode {p.v0!r}\n")
            elif p.kind == "floating":
                fh.write(f"patch {tag} floating {p.index}\n")
            elif p.kind == "sheet":
                fh.write(
                    f"patch {tag} sheet {p.index} {p.eps_plus!r} {p.eps_minus!r}\n"
                )
            else:
                fh.write(f"patch {tag} dielectric {p.eps_plus!r} {p.eps_minus!r}\n")
