"""Mesh state as seen by the policy, plus target size fields."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import (
    Polygon,
    Triangulation,
    delaunay_triangulate,
    filter_exterior,
    on_boundary,
)


class InvalidSizeField(ValueError):
    pass


SIZE_KINDS = ("constant", "chip", "ring", "user-table")


@dataclass(frozen=True, eq=False)
class SizeField:
    """Desired local edge length h(x).

    kind="constant": params=(value,)
    kind="chip":     params=(length,); h = 1 + |x|^2 / length^2
    kind="ring":     params=(base, amplitude, period); h = base - amplitude*sin^2(pi*|x|/period)
    kind="user-table": table_points (n,2) and table_values (n,), nearest-neighbour lookup
    """

    kind: str = "constant"
    params: tuple = (1.0,)
    table_points: np.ndarray | None = None
    table_values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SIZE_KINDS:
            raise InvalidSizeField(f"unknown size field kind {self.kind!r}")
        if self.kind == "user-table":
            if self.table_points is None or self.table_values is None:
                raise InvalidSizeField("user-table size field needs points and values")
            if np.any(np.asarray(self.table_values) <= 0):
                raise InvalidSizeField("user-table values must be positive")
        if self.kind == "constant" and self.params[0] <= 0:
            raise InvalidSizeField("constant size must be positive")
        if self.kind == "ring" and self.params[0] - abs(self.params[1]) <= 0:
            raise InvalidSizeField("ring size field reaches a nonpositive value")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        r2 = p[:, 0] ** 2 + p[:, 1] ** 2
        if self.kind == "constant":
            h = np.full(len(p), float(self.params[0]))
        elif self.kind == "chip":
            h = 1.0 + r2 / float(self.params[0]) ** 2
        elif self.kind == "ring":
            base, amp, period = (float(v) for v in self.params)
            h = base - amp * np.sin(np.pi * np.sqrt(r2) / period) ** 2
        else:
            tp = np.asarray(self.table_points, dtype=float)
            d2 = ((p[:, None, :] - tp[None, :, :]) ** 2).sum(axis=2)
            h = np.asarray(self.table_values, dtype=float)[d2.argmin(axis=1)]
        if np.any(h <= 0):
            raise InvalidSizeField("size field evaluated to a nonpositive value")
        return h


CONSTANT = SizeField()


def eval_size(size: SizeField, p) -> float:
    return float(size(np.asarray(p, dtype=float).reshape(1, 2))[0])


def boundary_target_angles(points, poly: Polygon) -> np.ndarray:
    """Boundary angle gamma at each point: the polygon's interior angle at
    corners, pi elsewhere on the boundary."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    gamma = np.full(len(p), math.pi)
    if len(p) == 0:
        return gamma
    d = np.linalg.norm(p[:, None, :] - poly.vertices[None, :, :], axis=2)
    nearest = d.argmin(axis=1)
    corner = d[np.arange(len(p)), nearest] <= poly.tol
    gamma[corner] = poly.interior_angles()[nearest[corner]]
    return gamma


@dataclass(frozen=True, eq=False)
class MeshState:
    points: np.ndarray
    boundary: np.ndarray
    triangulation: Triangulation
    polygon: Polygon
    step_index: int = 0

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def triangles(self) -> np.ndarray:
        return self.triangulation.triangles

    @property
    def edges(self) -> np.ndarray:
        return self.triangulation.edges

    @cached_property
    def boundary_gamma(self) -> np.ndarray:
        gamma = boundary_target_angles(self.points, self.polygon)
        gamma[~self.boundary] = math.pi
        return gamma

    @cached_property
    def boundary_edge_mask(self) -> np.ndarray:
        """Edges lying on the domain boundary (excluded from edge quality)."""
        e = self.edges
        if len(e) == 0:
            return np.zeros(0, dtype=bool)
        both = self.boundary[e[:, 0]] & self.boundary[e[:, 1]]
        mask = np.zeros(len(e), dtype=bool)
        if both.any():
            mid = 0.5 * (self.points[e[both, 0]] + self.points[e[both, 1]])
            mask[both] = on_boundary(mid, self.polygon)
        return mask


def build_state(points, polygon: Polygon, step_index: int = 0) -> MeshState:
    """Triangulate ``points`` and label boundary nodes.

    Raises DegenerateInput if the points cannot be triangulated.
    """
    pts = np.array(points, dtype=float).reshape(-1, 2)
    tri = filter_exterior(delaunay_triangulate(pts), polygon)
    flags = on_boundary(pts, polygon)
    pts.setflags(write=False)
    flags.setflags(write=False)
    return MeshState(pts, flags, tri, polygon, step_index)
