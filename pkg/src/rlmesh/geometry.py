"""Planar geometry kernel.

Delaunay triangulation (Bowyer-Watson with ghost triangles on the convex
hull), closed-set polygon containment and per-triangle measurements. All
computations run in double precision. Predicates use a fixed relative
tolerance instead of exact arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REL_TOL = 1e-9
GHOST = -1


class DegenerateInput(ValueError):
    """Point set cannot be triangulated (too few or all collinear)."""


class DegenerateTriangle(ValueError):
    """Triangle vertices are collinear within tolerance."""


class InvalidPolygon(ValueError):
    pass


def signed_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True
    return False


def is_simple(vertices) -> bool:
    """True if no two non-adjacent edges of the closed polygon cross."""
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(a, b, v[j], v[(j + 1) % n]):
                return False
    return True


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple counterclockwise polygon.

    ``vertices`` are the corners of the domain. ``boundary_points`` is the
    ordered boundary chain after edge subdivision; it starts out equal to
    ``vertices``.
    """

    vertices: np.ndarray
    boundary_points: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) < 3:
            raise InvalidPolygon("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise InvalidPolygon("non-finite polygon vertex")
        if signed_area(v) < 0:
            v = v[::-1].copy()
        if not is_simple(v):
            raise InvalidPolygon("polygon is self-intersecting")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        bp = v if self.boundary_points is None else np.array(self.boundary_points, dtype=float).reshape(-1, 2)
        bp.setflags(write=False)
        object.__setattr__(self, "boundary_points", bp)

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    @property
    def diameter(self) -> float:
        if "diameter" not in self._cache:
            lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
            self._cache["diameter"] = float(np.hypot(*(hi - lo)))
        return self._cache["diameter"]

    @property
    def tol(self) -> float:
        return REL_TOL * self.diameter

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def interior_angles(self) -> np.ndarray:
        """Interior angle at every corner, in (0, 2*pi)."""
        v = self.vertices
        to_next = np.roll(v, -1, axis=0) - v
        to_prev = np.roll(v, 1, axis=0) - v
        cross = to_next[:, 0] * to_prev[:, 1] - to_next[:, 1] * to_prev[:, 0]
        dot = np.einsum("ij,ij->i", to_next, to_prev)
        ang = np.arctan2(cross, dot)
        return np.where(ang <= 0, ang + 2 * np.pi, ang)

    def with_boundary_points(self, boundary_points) -> "Polygon":
        return Polygon(self.vertices, boundary_points)


def boundary_distance(points, poly: Polygon) -> np.ndarray:
    """Distance from each point to the polygon boundary."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    a, b = poly.edges()
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("nij,ij->ni", ap, ab) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    d = np.linalg.norm(p[:, None, :] - closest, axis=2)
    return d.min(axis=1)


def on_boundary(points, poly: Polygon) -> np.ndarray:
    return boundary_distance(points, poly) <= poly.tol


def winding_numbers(points, poly: Polygon) -> np.ndarray:
    """Winding number of the polygon around each point (crossing rule)."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    a, b = poly.edges()
    px, py = p[:, 0:1], p[:, 1:2]
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    is_left = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
    up = (ay <= py) & (by > py) & (is_left > 0)
    down = (ay > py) & (by <= py) & (is_left < 0)
    return up.sum(axis=1) - down.sum(axis=1)


def points_in_polygon(points, poly: Polygon) -> np.ndarray:
    """Closed-set containment for many points at once."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(p) == 0:
        return np.zeros(0, dtype=bool)
    inside = winding_numbers(p, poly) != 0
    return inside | on_boundary(p, poly)


def point_in_polygon(p, poly: Polygon) -> bool:
    return bool(points_in_polygon(np.asarray(p, dtype=float).reshape(1, 2), poly)[0])


@dataclass(frozen=True)
class TriangleMetrics:
    area: float
    circumradius: float
    inradius: float
    angles: tuple[float, float, float]


def triangle_metrics(a, b, c) -> TriangleMetrics:
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    la, lb, lc = np.linalg.norm(b - c), np.linalg.norm(c - a), np.linalg.norm(a - b)
    cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    longest = max(la, lb, lc)
    if longest == 0 or abs(cross) <= REL_TOL * longest * longest:
        raise DegenerateTriangle(f"collinear triangle {a.tolist()}, {b.tolist()}, {c.tolist()}")
    area = 0.5 * abs(cross)
    angles = tuple(float(x) for x in _vertex_angles(a[None], b[None], c[None])[0])
    return TriangleMetrics(
        area=area,
        circumradius=la * lb * lc / (4.0 * area),
        inradius=area / (0.5 * (la + lb + lc)),
        angles=angles,
    )


def _vertex_angles(a, b, c) -> np.ndarray:
    def angle(p, q, r):
        u, v = q - p, r - p
        cr = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        return np.arctan2(cr, np.einsum("ij,ij->i", u, v))

    return np.stack([angle(a, b, c), angle(b, c, a), angle(c, a, b)], axis=1)


def triangle_measures(points, triangles) -> dict[str, np.ndarray]:
    """Vectorized measurements for a triangle list; never raises.

    Degenerate triangles get zero inradius and infinite circumradius.
    """
    p = np.asarray(points, dtype=float)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    a, b, c = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(c - a, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    area = 0.5 * np.abs(cross)
    with np.errstate(divide="ignore", invalid="ignore"):
        rout = np.where(area > 0, la * lb * lc / (4.0 * area), np.inf)
        rin = np.where(area > 0, area / (0.5 * (la + lb + lc)), 0.0)
    return {
        "area": area,
        "circumradius": rout,
        "inradius": rin,
        "angles": _vertex_angles(a, b, c),
        "centroid": (a + b + c) / 3.0,
    }


@dataclass(frozen=True, eq=False)
class Triangulation:
    points: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray

    @classmethod
    def from_triangles(cls, points, triangles) -> "Triangulation":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        return cls(pts, tris, unique_edges(tris))

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def unique_edges(triangles) -> np.ndarray:
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(t) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def circumcircle(a, b, c) -> tuple[float, float, float]:
    """Circumcenter and radius of a non-degenerate triangle."""
    ax, ay = a
    bx, by = b[0] - ax, b[1] - ay
    cx, cy = c[0] - ax, c[1] - ay
    d = 2.0 * (bx * cy - by * cx)
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    return ax + ux, ay + uy, math.hypot(ux, uy)


class _BowyerWatson:
    """Incremental Delaunay triangulation.

    Triangles are stored as vertex triples in counterclockwise order with
    ``nbr[t][k]`` the triangle across the edge opposite vertex ``k``. Hull
    edges are closed off by ghost triangles containing the vertex GHOST; a
    ghost's "circumcircle" is the open outer half-plane of its hull edge
    plus the open edge itself.
    """

    def __init__(self, xs, ys, scale):
        self.x, self.y = xs, ys
        self.dup_tol2 = (1e-12 * scale) ** 2
        self.tri: list[list[int]] = []
        self.nbr: list[list[int]] = []
        self.alive: list[bool] = []
        self.last = 0

    def orient(self, i, j, k):
        x, y = self.x, self.y
        return (x[j] - x[i]) * (y[k] - y[i]) - (y[j] - y[i]) * (x[k] - x[i])

    def orient_p(self, i, j, px, py):
        x, y = self.x, self.y
        return (x[j] - x[i]) * (py - y[i]) - (y[j] - y[i]) * (px - x[i])

    def add(self, verts, nbrs):
        self.tri.append(verts)
        self.nbr.append(nbrs)
        self.alive.append(True)
        return len(self.tri) - 1

    def start(self, i, j, k):
        if self.orient(i, j, k) < 0:
            j, k = k, j
        t = self.add([i, j, k], [-1, -1, -1])
        # ghost over edge (j,k) opposite i, etc. Ghost (u, v, G) has outside left of u->v.
        g0 = self.add([k, j, GHOST], [-1, -1, t])
        g1 = self.add([i, k, GHOST], [-1, -1, t])
        g2 = self.add([j, i, GHOST], [-1, -1, t])
        self.nbr[t] = [g0, g1, g2]
        # ghost (u,v,G): nbr[0] across (v,G) -> ghost starting at v; nbr[1] across (G,u) -> ghost ending at u
        for g in (g0, g1, g2):
            u, v, _ = self.tri[g]
            for h in (g0, g1, g2):
                if self.tri[h][0] == v:
                    self.nbr[g][0] = h
                if self.tri[h][1] == u:
                    self.nbr[g][1] = h
        self.last = t

    def hull_edge(self, t):
        a, b, c = self.tri[t]
        if c == GHOST:
            return a, b
        if a == GHOST:
            return b, c
        return c, a

    def in_conflict(self, t, px, py) -> bool:
        tv = self.tri[t]
        if GHOST in tv:
            u, v = self.hull_edge(t)
            o = self.orient_p(u, v, px, py)
            ex, ey = self.x[v] - self.x[u], self.y[v] - self.y[u]
            l2 = ex * ex + ey * ey
            if o > REL_TOL * l2:
                return True
            if o < -REL_TOL * l2:
                return False
            s = (px - self.x[u]) * ex + (py - self.y[u]) * ey
            return 0.0 < s < l2
        a, b, c = tv
        x, y = self.x, self.y
        adx, ady = x[a] - px, y[a] - py
        bdx, bdy = x[b] - px, y[b] - py
        cdx, cdy = x[c] - px, y[c] - py
        det = (
            (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
            - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
            + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
        )
        return det > 0.0

    def is_duplicate(self, t, px, py) -> bool:
        for v in self.tri[t]:
            if v != GHOST:
                dx, dy = self.x[v] - px, self.y[v] - py
                if dx * dx + dy * dy <= self.dup_tol2:
                    return True
        return False

    def locate(self, px, py) -> int:
        t = self.last
        if not self.alive[t] or GHOST in self.tri[t]:
            t = next(i for i in range(len(self.tri)) if self.alive[i] and GHOST not in self.tri[i])
        for _ in range(len(self.tri) + 4):
            tv = self.tri[t]
            moved = False
            for k in range(3):
                i, j = tv[(k + 1) % 3], tv[(k + 2) % 3]
                if self.orient_p(i, j, px, py) < 0:
                    t = self.nbr[t][k]
                    moved = True
                    break
            if not moved or GHOST in self.tri[t]:
                return t
        return -1

    def insert(self, p):
        px, py = self.x[p], self.y[p]
        seed = self.locate(px, py)
        if seed >= 0 and self.is_duplicate(seed, px, py):
            return False
        if seed < 0 or not self.in_conflict(seed, px, py):
            seed = -1
            for t in range(len(self.tri)):
                if self.alive[t] and self.in_conflict(t, px, py):
                    seed = t
                    break
            if seed < 0:
                return False
        if self.is_duplicate(seed, px, py):
            return False

        cavity = {seed}
        stack = [seed]
        while stack:
            t = stack.pop()
            for nb in self.nbr[t]:
                if nb not in cavity and self.in_conflict(nb, px, py):
                    if self.is_duplicate(nb, px, py):
                        return False
                    cavity.add(nb)
                    stack.append(nb)

        # enlarge until every real boundary edge sees p strictly on its inner side
        while True:
            grown = False
            for t in list(cavity):
                tv = self.tri[t]
                for k in range(3):
                    nb = self.nbr[t][k]
                    if nb in cavity:
                        continue
                    a, b = tv[(k + 1) % 3], tv[(k + 2) % 3]
                    if a == GHOST or b == GHOST:
                        continue
                    ex, ey = self.x[b] - self.x[a], self.y[b] - self.y[a]
                    if self.orient_p(a, b, px, py) <= 1e-14 * (ex * ex + ey * ey):
                        if self.is_duplicate(nb, px, py):
                            return False
                        cavity.add(nb)
                        grown = True
            if not grown:
                break

        boundary = []
        for t in cavity:
            tv = self.tri[t]
            for k in range(3):
                nb = self.nbr[t][k]
                if nb not in cavity:
                    boundary.append((tv[(k + 1) % 3], tv[(k + 2) % 3], nb, t))
        for t in cavity:
            self.alive[t] = False

        starts, ends = {}, {}
        new = []
        for a, b, nb, old in boundary:
            t = self.add([a, b, p], [-1, -1, nb])
            nn = self.nbr[nb]
            nn[nn.index(old)] = t
            starts[a] = t
            ends[b] = t
            new.append(t)
        for t in new:
            a, b, _ = self.tri[t]
            self.nbr[t][0] = starts[b]
            self.nbr[t][1] = ends[a]
        for t in new:
            if GHOST not in self.tri[t]:
                self.last = t
                break
        return True

    def real_triangles(self) -> list[list[int]]:
        return [tv for tv, ok in zip(self.tri, self.alive) if ok and GHOST not in tv]


def delaunay_triangulate(points) -> Triangulation:
    """Delaunay triangulation of the convex hull of ``points``.

    Points are inserted in input order; cocircular ties are resolved by
    that order. Exact duplicates (within 1e-12 of the point-set scale) are
    left out of the connectivity but kept in the point list.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        raise DegenerateInput(f"need at least 3 points, got {n}")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("non-finite coordinates")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = float(np.hypot(*(hi - lo)))
    if scale == 0:
        raise DegenerateInput("all points coincide")
    xs, ys = pts[:, 0].tolist(), pts[:, 1].tolist()
    bw = _BowyerWatson(xs, ys, scale)

    i0 = 0
    i1 = next((i for i in range(1, n) if (xs[i] - xs[i0]) ** 2 + (ys[i] - ys[i0]) ** 2 > (1e-9 * scale) ** 2), None)
    if i1 is None:
        raise DegenerateInput("all points coincide")
    thresh = REL_TOL * scale * scale
    i2 = next((i for i in range(n) if i not in (i0, i1) and abs(bw.orient(i0, i1, i)) > thresh), None)
    if i2 is None:
        raise DegenerateInput("all points collinear")
    bw.start(i0, i1, i2)
    for p in range(n):
        if p not in (i0, i1, i2):
            bw.insert(p)
    tris = np.array(bw.real_triangles(), dtype=np.int64).reshape(-1, 3)
    return Triangulation.from_triangles(pts, tris)


def filter_exterior(tri: Triangulation, poly: Polygon) -> Triangulation:
    """Drop triangles whose centroid lies outside the closed polygon."""
    if tri.n_triangles == 0:
        return Triangulation.from_triangles(tri.points, tri.triangles)
    centroids = tri.points[tri.triangles].mean(axis=1)
    keep = points_in_polygon(centroids, poly)
    return Triangulation.from_triangles(tri.points, tri.triangles[keep])
