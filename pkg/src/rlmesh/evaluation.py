"""Test-set evaluation: per-mesh statistics aggregated into table rows."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domains import ConfigError, InitScheme, load_eval_polygons, make_initial_points, make_rng
from .environment import EnvConfig, rollout_batch
from .geometry import Polygon
from .mesh_state import CONSTANT, SizeField, build_state
from .network import CheckpointError, NetworkParams, load_checkpoint
from .quality import BASELINE_WEIGHTS, METRICS, STATISTICS, QualityReport, QualityWeights, mesh_score

COLUMNS = tuple(f"q_{m}_{s}" for m in METRICS for s in STATISTICS)
MODES = ("deterministic", "stochastic")


@dataclass(frozen=True)
class EvalProtocol:
    """Evaluation settings. ``polygons=None`` means the frozen 50-polygon set."""

    polygons: tuple[Polygon, ...] | None = None
    trajectory_length: int = 15
    mode: str = "deterministic"
    seed: int = 0
    weights: QualityWeights = BASELINE_WEIGHTS
    size: SizeField = CONSTANT

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.trajectory_length < 0:
            raise ConfigError("trajectory_length must be nonnegative")

    def domain(self) -> list[Polygon]:
        polys = load_eval_polygons() if self.polygons is None else list(self.polygons)
        if not polys:
            raise ConfigError("evaluation protocol has no polygons")
        return polys

    def env(self) -> EnvConfig:
        return EnvConfig(max_steps=self.trajectory_length, weights=self.weights, size=self.size)


def aggregate(reports: list[QualityReport]) -> dict[str, float]:
    """Mean over meshes of each per-mesh mean, min and SD."""
    rows = [r.row() for r in reports]
    return {c: float(np.mean([row[c] for row in rows])) if rows else math.nan for c in COLUMNS}


@dataclass
class EvalTable:
    rows: list[tuple[str, dict[str, float]]] = field(default_factory=list)

    def add(self, label: str, row: dict[str, float]) -> None:
        self.rows.append((label, row))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("model",) + COLUMNS)
        for label, row in self.rows:
            w.writerow([label] + [f"{row[c]:.6f}" for c in COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        head = ["model"] + [c[2:].replace("_", " ") for c in COLUMNS]
        body = [[label] + [f"{row[c]:.3f}" for c in COLUMNS] for label, row in self.rows]
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        fmt = lambda r: "  ".join(s.ljust(w) if i == 0 else s.rjust(w) for i, (s, w) in enumerate(zip(r, widths)))
        return "\n".join([fmt(head)] + [fmt(r) for r in body]) + "\n"

    def write(self, csv_path, text_path=None) -> None:
        Path(csv_path).write_text(self.to_csv())
        if text_path is not None:
            Path(text_path).write_text(self.to_text())


def _params(checkpoint) -> NetworkParams:
    if isinstance(checkpoint, NetworkParams):
        return checkpoint
    try:
        return load_checkpoint(checkpoint)[0]
    except (OSError, CheckpointError) as exc:
        raise ConfigError(f"cannot load checkpoint {checkpoint}: {exc}") from exc


def _run(params, protocol: EvalProtocol, starts):
    rng = make_rng(protocol.seed)
    trajs = rollout_batch(starts, params, protocol.env(), rng, protocol.mode == "deterministic", with_values=False)
    return trajs


def evaluate_model(checkpoint, protocol: EvalProtocol = EvalProtocol()):
    """One rollout per polygon from its boundary points.

    Returns ``(row, reports, trajectories)``.
    """
    params = _params(checkpoint)
    starts = [build_state(p.boundary_points, p) for p in protocol.domain()]
    trajs = _run(params, protocol, starts)
    reports = [_final_report(tr, protocol) for tr in trajs]
    return aggregate(reports), reports, trajs


def _final_report(tr, protocol) -> QualityReport:
    if tr.final_report is not None:
        return tr.final_report
    return mesh_score(tr.final_state, protocol.weights, protocol.size)[1]


def improvement_eval(checkpoint, init: InitScheme, protocol: EvalProtocol = EvalProtocol()):
    """Roll out from initial meshes built by ``init`` and report both ends.

    Returns ``(before_row, after_row, before_reports, after_reports)``.
    """
    params = _params(checkpoint)
    rng = make_rng(protocol.seed)
    starts = []
    for poly in protocol.domain():
        pts, _ = make_initial_points(poly, init, rng)
        starts.append(build_state(pts, poly))
    before = [mesh_score(s, protocol.weights, protocol.size)[1] for s in starts]
    trajs = _run(params, protocol, starts)
    after = [_final_report(tr, protocol) for tr in trajs]
    return aggregate(before), aggregate(after), before, after


def fold_rows(reports: list[QualityReport], folds: int = 5) -> list[dict[str, float]]:
    """Aggregate rows over ``folds`` disjoint contiguous subsets."""
    if folds < 2:
        raise ConfigError("stability check needs at least two folds")
    if len(reports) < folds:
        raise ConfigError(f"{len(reports)} meshes cannot fill {folds} folds")
    return [aggregate(list(part)) for part in np.array_split(np.array(reports, dtype=object), folds)]


def relative_sd(rows: list[dict[str, float]]) -> dict[str, float]:
    """Cross-fold sample SD over |mean| per statistic (0 when all folds agree)."""
    out = {}
    for c in COLUMNS:
        v = np.array([r[c] for r in rows])
        sd = 0.0 if np.ptp(v) == 0 else float(v.std(ddof=1))
        mu = abs(float(v.mean()))
        out[c] = 0.0 if sd == 0.0 else (sd / mu if mu > 0 else math.inf)
    return out


def stat_stability_check(protocol: EvalProtocol, model, folds: int = 5, reports=None) -> dict[str, float]:
    """Relative SD of each table statistic across disjoint polygon folds.

    Pass ``reports`` to reuse per-mesh reports from an earlier evaluation.
    """
    if reports is None:
        _, reports, _ = evaluate_model(model, protocol)
    return relative_sd(fold_rows(reports, folds))
