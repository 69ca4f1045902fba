"""Plain-text triangle mesh format.

    RLMESH <vertex count> <triangle count>
    x y boundary_flag        (one line per vertex)
    i j k                    (one line per triangle, 0-based)

Coordinates are written with 17 significant digits, so a write/read cycle
reproduces every finite double bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Polygon, InvalidPolygon, on_boundary, signed_area

TAG = "RLMESH"


class MeshFileError(OSError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(eq=False)
class MeshFile:
    points: np.ndarray
    boundary: np.ndarray
    triangles: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, MeshFile)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.boundary, other.boundary)
            and np.array_equal(self.triangles, other.triangles)
        )

    @classmethod
    def from_state(cls, state) -> "MeshFile":
        return cls(np.asarray(state.points, float), np.asarray(state.boundary, bool), np.asarray(state.triangles, np.int64))


def format_mesh(mesh: MeshFile) -> str:
    lines = [f"{TAG} {len(mesh.points)} {len(mesh.triangles)}"]
    for (x, y), b in zip(mesh.points.tolist(), mesh.boundary.tolist()):
        lines.append(f"{x:.17g} {y:.17g} {int(b)}")
    for i, j, k in mesh.triangles.tolist():
        lines.append(f"{i} {j} {k}")
    return "\n".join(lines) + "\n"


def parse_mesh(text: str, source: str = "<string>") -> MeshFile:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MeshFileError(f"{source}: empty mesh file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != TAG:
        raise MeshFileError(f"{source}: bad header {lines[0]!r}")
    nv, nt = int(head[1]), int(head[2])
    if len(lines) != 1 + nv + nt:
        raise MeshFileError(f"{source}: expected {nv} vertex and {nt} triangle lines")
    try:
        verts = [ln.split() for ln in lines[1 : 1 + nv]]
        pts = np.array([[float(v[0]), float(v[1])] for v in verts]).reshape(-1, 2)
        flags = np.array([int(v[2]) != 0 for v in verts], dtype=bool)
        tris = np.array([[int(t) for t in ln.split()] for ln in lines[1 + nv :]], dtype=np.int64).reshape(-1, 3)
    except (ValueError, IndexError) as exc:
        raise MeshFileError(f"{source}: malformed line ({exc})") from exc
    if len(tris) and (tris.min() < 0 or tris.max() >= nv):
        raise MeshFileError(f"{source}: triangle index out of range")
    if not np.all(np.isfinite(pts)):
        raise MeshFileError(f"{source}: non-finite coordinate")
    return MeshFile(pts, flags, tris)


def write_mesh(mesh: MeshFile, path) -> None:
    try:
        Path(path).write_text(format_mesh(mesh))
    except OSError as exc:
        raise MeshFileError(f"cannot write {path}: {exc}") from exc


def read_mesh(path) -> MeshFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MeshFileError(f"cannot read {path}: {exc}") from exc
    return parse_mesh(text, str(path))


def boundary_loop(mesh: MeshFile) -> np.ndarray:
    """Vertex indices of the outer boundary loop, counterclockwise."""
    t = mesh.triangles
    orient = signed_area_tris(mesh.points, t)
    ccw = t.copy()
    ccw[orient < 0] = ccw[orient < 0][:, ::-1]
    half = np.concatenate([ccw[:, [0, 1]], ccw[:, [1, 2]], ccw[:, [2, 0]]])
    keys = {(int(a), int(b)) for a, b in half}
    nxt = {}
    for a, b in keys:
        if (b, a) not in keys:
            if a in nxt:
                raise ValidationError("mesh boundary is not a single simple loop")
            nxt[a] = b
    if not nxt:
        raise ValidationError("mesh has no boundary")
    start = min(nxt)
    loop = [start]
    while True:
        n = nxt[loop[-1]]
        if n == start:
            break
        loop.append(n)
        if len(loop) > len(nxt):
            raise ValidationError("mesh boundary is not a single loop")
    if len(loop) != len(nxt):
        raise ValidationError("mesh boundary has more than one loop (holes are unsupported)")
    return np.array(loop)


def signed_area_tris(points, triangles) -> np.ndarray:
    p = points[triangles]
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))


def mesh_polygon(mesh: MeshFile, angle_tol: float = 1e-9) -> Polygon:
    """Domain polygon recovered from the mesh boundary, with collinear
    chain points folded into the edges they lie on."""
    loop = mesh.points[boundary_loop(mesh)]
    corners = []
    n = len(loop)
    for i in range(n):
        a, b, c = loop[i - 1], loop[i], loop[(i + 1) % n]
        u, v = b - a, c - b
        cross = u[0] * v[1] - u[1] * v[0]
        if abs(cross) > angle_tol * np.linalg.norm(u) * np.linalg.norm(v) or np.dot(u, v) < 0:
            corners.append(b)
    try:
        return Polygon(np.array(corners), loop if signed_area(loop) > 0 else loop[::-1])
    except InvalidPolygon as exc:
        raise ValidationError(f"mesh boundary does not form a simple polygon: {exc}") from exc


def check_flags(mesh: MeshFile, poly: Polygon) -> None:
    """Raise ValidationError unless the stored flags match the geometry."""
    geo = on_boundary(mesh.points, poly)
    bad = np.flatnonzero(geo != mesh.boundary)
    if len(bad):
        raise ValidationError(f"boundary flags disagree with the domain at {len(bad)} vertices (first: {int(bad[0])})")


def _numeric_lines(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MeshFileError(f"cannot read {path}: {exc}") from exc
    return [ln.split("#")[0].split() for ln in text.splitlines() if ln.split("#")[0].strip()]


def read_node_ele(node_path, ele_path, poly: Polygon | None = None) -> MeshFile:
    """Import a Triangle-style ``.node``/``.ele`` pair.

    Indices may start at 0 or 1 (taken from the first node id). Boundary
    flags come from the geometry when ``poly`` is given, else from the
    node boundary markers if present, else from the mesh boundary loop.
    """
    nodes = _numeric_lines(node_path)
    eles = _numeric_lines(ele_path)
    try:
        nv, _, nattr, nmark = (int(t) for t in nodes[0][:4])
        rows = nodes[1 : 1 + nv]
        base = int(rows[0][0])
        pts = np.array([[float(r[1]), float(r[2])] for r in rows])
        marks = np.array([int(r[3 + nattr]) != 0 for r in rows]) if nmark else None
        nt = int(eles[0][0])
        tris = np.array([[int(t) - base for t in r[1:4]] for r in eles[1 : 1 + nt]], dtype=np.int64).reshape(-1, 3)
    except (ValueError, IndexError) as exc:
        raise MeshFileError(f"{node_path}: malformed node/ele input ({exc})") from exc
    if len(tris) and (tris.min() < 0 or tris.max() >= nv):
        raise MeshFileError(f"{ele_path}: triangle index out of range")
    mesh = MeshFile(pts, np.zeros(nv, dtype=bool), tris)
    if poly is not None:
        mesh.boundary = on_boundary(pts, poly)
    elif marks is not None:
        mesh.boundary = marks
    else:
        mesh.boundary[boundary_loop(mesh)] = True
    return mesh
