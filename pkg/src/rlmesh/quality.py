"""Mesh quality metrics and the score/reward built from them.

All four metrics equal 1 for an equilateral triangle of unit edge length
(or of edge length h under a size field) and may go negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import triangle_measures
from .mesh_state import CONSTANT, MeshState, SizeField

METRICS = ("a", "e", "r", "v")
STATISTICS = ("mean", "min", "sd")
EQUILATERAL_AREA = math.sqrt(3.0) / 4.0


class EmptyMesh(ValueError):
    pass


@dataclass(frozen=True)
class QualityWeights:
    a: float = 0.5
    e: float = 0.5
    r: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        w = self.as_dict()
        if any(x < 0 for x in w.values()):
            raise ValueError(f"quality weights must be nonnegative: {w}")
        if abs(sum(w.values()) - 1.0) > 1e-12:
            raise ValueError(f"quality weights must sum to 1: {w}")

    def as_dict(self) -> dict[str, float]:
        return {"a": self.a, "e": self.e, "r": self.r, "v": self.v}


BASELINE_WEIGHTS = QualityWeights()


def edge_quality(length, h_mid=1.0):
    return 1.0 - np.abs(1.0 - np.asarray(length) / np.asarray(h_mid))


def target_boundary_angle(gamma: float) -> float:
    """gamma/k for the integer k >= 1 bringing gamma/k closest to pi/3.

    Ties go to the smaller k.
    """
    third = math.pi / 3.0
    k = max(1, math.floor(gamma / third))
    best_k, best_err = None, math.inf
    for cand in (k - 1, k, k + 1, k + 2):
        if cand < 1:
            continue
        err = abs(gamma / cand - third)
        if err < best_err - 1e-12:
            best_k, best_err = cand, err
    return gamma / best_k


def _target_angles(gamma: np.ndarray) -> np.ndarray:
    return np.array([target_boundary_angle(g) for g in gamma])


def angle_quality(gamma, gamma_star):
    gamma_star = np.asarray(gamma_star)
    return 1.0 - np.abs(gamma_star - np.asarray(gamma)) / gamma_star


def volume_quality(area, h_centroid=1.0):
    target = EQUILATERAL_AREA
    return 1.0 - np.abs(np.asarray(area) / np.asarray(h_centroid) ** 2 - target) / target


def element_quality(r_in, r_out):
    """Normalized radius ratio 2*r_in/r_out (1 for equilateral)."""
    return 2.0 * np.asarray(r_in) / np.asarray(r_out)


@dataclass(frozen=True)
class MetricStats:
    mean: float
    min: float
    sd: float

    @classmethod
    def of(cls, values: np.ndarray) -> "MetricStats":
        if len(values) == 0:
            return cls(math.nan, math.nan, math.nan)
        return cls(float(values.mean()), float(values.min()), float(values.std()))


@dataclass(frozen=True)
class QualityReport:
    stats: dict[str, MetricStats]
    score: float
    n_e: int
    n_a: int
    n_t: int
    values: dict[str, np.ndarray] = field(repr=False, compare=False, default_factory=dict)

    def row(self) -> dict[str, float]:
        out = {}
        for m in METRICS:
            for s in STATISTICS:
                out[f"q_{m}_{s}"] = getattr(self.stats[m], s)
        return out


def metric_values(state: MeshState, size: SizeField = CONSTANT) -> dict[str, np.ndarray]:
    """Per-entity metric values: q_e per interior edge, q_a per angle,
    q_r and q_v per triangle."""
    tris = state.triangles
    pts = state.points
    meas = triangle_measures(pts, tris)

    e = state.edges[~state.boundary_edge_mask]
    lengths = np.linalg.norm(pts[e[:, 0]] - pts[e[:, 1]], axis=1)
    if size.is_constant:
        h_edge = float(size.params[0])
        h_tri = float(size.params[0])
    else:
        h_edge = size(0.5 * (pts[e[:, 0]] + pts[e[:, 1]])) if len(e) else 1.0
        h_tri = size(meas["centroid"]) if len(tris) else 1.0

    gamma = state.boundary_gamma
    target = np.full(len(pts), math.pi / 3.0)
    bidx = np.flatnonzero(state.boundary)
    target[bidx] = _target_angles(gamma[bidx])

    with np.errstate(divide="ignore", invalid="ignore"):
        q_r = np.where(np.isfinite(meas["circumradius"]), element_quality(meas["inradius"], meas["circumradius"]), 0.0)
    return {
        "e": edge_quality(lengths, h_edge),
        "a": angle_quality(meas["angles"].ravel(), target[tris].ravel()),
        "r": q_r,
        "v": volume_quality(meas["area"], h_tri),
    }


def mesh_score(state: MeshState, weights: QualityWeights = BASELINE_WEIGHTS, size: SizeField = CONSTANT):
    """Weighted mean of per-metric mesh averages.

    Metrics with no entities (e.g. no interior edges) drop out and the
    remaining weights are renormalized. Returns ``(score, QualityReport)``.
    """
    if len(state.triangles) == 0:
        raise EmptyMesh("mesh has no triangles")
    vals = metric_values(state, size)
    w = weights.as_dict()
    active = {m: w[m] for m in METRICS if w[m] > 0 and len(vals[m]) > 0}
    total = sum(active.values())
    score = sum(wm * float(vals[m].mean()) for m, wm in active.items()) / total if total > 0 else 0.0
    report = QualityReport(
        stats={m: MetricStats.of(vals[m]) for m in METRICS},
        score=score,
        n_e=len(vals["e"]),
        n_a=len(vals["a"]),
        n_t=len(state.triangles),
        values=vals,
    )
    return score, report


def step_reward(prev: MeshState | None, next_state: MeshState, weights=BASELINE_WEIGHTS, size=CONSTANT) -> float:
    """S(next) - S(prev), with S taken as 0 for the initial state."""
    prev_score = 0.0 if prev is None or prev.step_index == 0 else mesh_score(prev, weights, size)[0]
    return mesh_score(next_state, weights, size)[0] - prev_score
