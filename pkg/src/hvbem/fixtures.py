"""Built-in benchmark geometries: icosphere-based curved-triangle meshes.

These are the fixtures behind the analytic validation cases (charged
sphere, concentric electrodes with a floating or dielectric shell) and the
`bench` subcommand.  Corner vertices come from icosphere level L; midside
nodes are the projected edge midpoints, so every triangle is a genuine
curved quadratic patch on the sphere.
"""

from __future__ import annotations

import numpy as np

from .mesh import SurfaceMesh, parse_mesh

__all__ = [
    "icosphere",
    "sphere_levels",
    "sphere_mesh_parts",
    "sphere_mesh",
    "concentric_mesh",
    "mesh_text",
]


def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere: vertices (nv, 3) on the sphere and faces (nf, 3),
    outward (counter-clockwise seen from outside) winding."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.intp,
    )
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
    return verts, faces


def _subdivide(verts: np.ndarray, faces: np.ndarray):
    vlist = list(verts)
    midpoint: dict[tuple[int, int], int] = {}

    def mid(i, j):
        key = (i, j) if i < j else (j, i)
        idx = midpoint.get(key)
        if idx is None:
            p = vlist[i] + vlist[j]
            p = p / np.linalg.norm(p)
            idx = len(vlist)
            vlist.append(p)
            midpoint[key] = idx
        return idx

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(vlist), np.array(new_faces, dtype=np.intp)


def sphere_levels() -> dict[int, int]:
    """Corner-vertex count per icosphere level."""
    return {lev: 10 * 4 ** lev + 2 for lev in range(7)}


def sphere_mesh_parts(level: int, radius: float = 1.0, tag: int = 0,
                      center=(0.0, 0.0, 0.0), flip: bool = False,
                      id_offset: int = 0):
    """Vertices and six-node triangles for one sphere shell.

    Corner nodes are the level-L icosphere vertices; midside nodes are the
    level-(L+1) edge midpoints, all scaled to `radius`.  `flip` reverses the
    winding (normal pointing inward).
    """
    verts, faces = icosphere(level)
    vlist = list(verts)
    midpoint: dict[tuple[int, int], int] = {}

    def mid(i, j):
        key = (i, j) if i < j else (j, i)
        idx = midpoint.get(key)
        if idx is None:
            p = vlist[i] + vlist[j]
            p = p / np.linalg.norm(p)
            idx = len(vlist)
            vlist.append(p)
            midpoint[key] = idx
        return idx

    tris = []
    for a, b, c in faces:
        if flip:
            a, b, c = a, c, b
        m01, m12, m20 = mid(a, b), mid(b, c), mid(c, a)
        tris.append(
            (
                (a + id_offset, b + id_offset, c + id_offset,
                 m01 + id_offset, m12 + id_offset, m20 + id_offset),
                tag,
            )
        )
    center = np.asarray(center, dtype=float)
    vertices = np.array(vlist) * radius + center
    return vertices, tris


def mesh_text(vertices: np.ndarray, tris, patch_lines) -> str:
    out = ["bemesh 1"]
    for i, p in enumerate(vertices):
        out.append(f"vertex {i} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    for ids, tag in tris:
        out.append("triangle " + " ".join(str(i) for i in ids) + f" {tag}")
    out.extend(patch_lines)
    return "\n".join(out) + "\n"


def sphere_mesh(level: int, radius: float = 1.0, v0: float = 1.0) -> SurfaceMesh:
    """Closed electrode sphere at potential v0."""
    vertices, tris = sphere_mesh_parts(level, radius=radius, tag=0)
    text = mesh_text(vertices, tris, [f"patch 0 electrode {v0!r}"])
    return parse_mesh(text, name=f"<sphere L{level} R{radius}>")


def concentric_mesh(level: int, shells) -> SurfaceMesh:
    """Concentric spheres around the origin.

    `shells` is a list of (radius, patch_line_tail) such as
    ``(0.5, "electrode 1.0")`` or ``(0.75, "sheet 0 8.85e-12 8.85e-12")``;
    tags are assigned in order.  All shells are wound outward.
    """
    all_verts = []
    all_tris = []
    patch_lines = []
    offset = 0
    for tag, (radius, tail) in enumerate(shells):
        verts, tris = sphere_mesh_parts(level, radius=radius, tag=tag,
                                        id_offset=offset)
        all_verts.append(verts)
        all_tris.extend(tris)
        patch_lines.append(f"patch {tag} {tail}")
        offset += len(verts)
    vertices = np.vstack(all_verts)
    text = mesh_text(vertices, all_tris, patch_lines)
    return parse_mesh(text, name=f"<concentric L{level}>")
