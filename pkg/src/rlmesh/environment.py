"""Environment: decode sampled actions into vertex edits and roll out
trajectories.

Decoding order within one step: moves, then deletions, then additions.
Additions are proposed from the connectivity of the current (old)
triangulation evaluated at the moved positions, and skip any edge or
triangle touching a deleted node.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np
import torch

from .geometry import Polygon, on_boundary, points_in_polygon
from .mesh_state import CONSTANT, MeshState, SizeField, build_state
from .network import NetworkParams, ActionSample, sample_action, state_batch
from .quality import BASELINE_WEIGHTS, EmptyMesh, QualityReport, QualityWeights, mesh_score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvConfig:
    nu: float = 0.25
    max_steps: int = 15
    weights: QualityWeights = BASELINE_WEIGHTS
    size: SizeField = CONSTANT
    dedup_tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.nu < 1.0:
            raise ValueError(f"nu must lie in (0, 1), got {self.nu}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")


@dataclass
class Trajectory:
    polygon: Polygon
    states: list[MeshState]
    actions: list[ActionSample] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    final_report: QualityReport | None = None

    @property
    def final_state(self) -> MeshState:
        return self.states[-1]

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))


class TraceWriter:
    """One text line per decoded edit, for debugging trajectories."""

    def __init__(self, stream: TextIO):
        self.stream = stream

    def __call__(self, kind: str, *fields):
        self.stream.write(" ".join([kind] + [f"{v:.6g}" if isinstance(v, float) else str(v) for v in fields]) + "\n")


def _dedup(candidates: np.ndarray, existing: np.ndarray, tol: float) -> np.ndarray:
    keep = []
    tol2 = tol * tol
    for k, c in enumerate(candidates):
        if len(existing) and ((existing - c) ** 2).sum(axis=1).min() <= tol2:
            continue
        if keep and ((candidates[keep] - c) ** 2).sum(axis=1).min() <= tol2:
            continue
        keep.append(k)
    return candidates[keep]


def apply_action(state: MeshState, action: ActionSample, polygon: Polygon, cfg: EnvConfig = EnvConfig(),
                 trace: Callable | None = None):
    """Apply one sampled action to the vertex set.

    Returns the new point array and its boundary flags.
    """
    n = state.n_points
    if len(action.positions) != n:
        raise ValueError(f"action has {len(action.positions)} nodes, state has {n}")
    old = state.points
    interior = ~state.boundary
    alpha = action.alpha

    # moves
    new = old.copy()
    cand = np.flatnonzero(interior)
    ok = points_in_polygon(action.positions[cand], polygon)
    moved = cand[ok]
    new[moved] = action.positions[moved]
    if trace:
        for i in moved:
            trace("move", int(i), float(old[i, 0]), float(old[i, 1]), float(new[i, 0]), float(new[i, 1]))

    # deletions
    deleted = interior & (alpha[:, 0] <= cfg.nu)
    if trace:
        for i in np.flatnonzero(deleted):
            trace("delete", int(i), float(new[i, 0]), float(new[i, 1]))
    survivors = new[~deleted]

    # additions from old connectivity at new positions
    added = []
    e = state.edges
    if len(e):
        live = ~deleted[e[:, 0]] & ~deleted[e[:, 1]]
        want = 0.5 * (alpha[e[:, 0], 1] + alpha[e[:, 1], 1]) <= cfg.nu
        sel = e[live & want]
        mids = 0.5 * (new[sel[:, 0]] + new[sel[:, 1]])
        mids = mids[points_in_polygon(mids, polygon)]
        added.append(mids)
    t = state.triangles
    if len(t):
        live = ~deleted[t].any(axis=1)
        want = alpha[t, 2].mean(axis=1) <= cfg.nu
        sel = t[live & want]
        cents = new[sel].mean(axis=1)
        cents = cents[points_in_polygon(cents, polygon)]
        added.append(cents)
    added = np.concatenate(added) if added else np.zeros((0, 2))
    if len(added):
        added = _dedup(added, survivors, cfg.dedup_tol)
    if trace:
        for p in added:
            trace("add", float(p[0]), float(p[1]))

    points = np.concatenate([survivors, added]) if len(added) else survivors
    flags = on_boundary(points, polygon)
    # boundary nodes are never moved or removed, so their flags carry over
    flags[: int((~deleted).sum())] |= state.boundary[~deleted]
    return points, flags


def state_score(state: MeshState, cfg: EnvConfig) -> float:
    """S(s), taken as 0 for the initial state of a trajectory."""
    if state.step_index == 0:
        return 0.0
    cache = state.__dict__.setdefault("_score_cache", {})
    key = (cfg.weights, id(cfg.size))
    if key not in cache:
        cache[key] = mesh_score(state, cfg.weights, cfg.size)
    return cache[key][0]


def step(state: MeshState, action: ActionSample, polygon: Polygon, cfg: EnvConfig = EnvConfig(),
         trace: Callable | None = None) -> tuple[MeshState, float]:
    points, _ = apply_action(state, action, polygon, cfg, trace)
    nxt = build_state(points, polygon, state.step_index + 1)
    if len(nxt.triangles) == 0:
        raise EmptyMesh("no triangles left inside the domain")
    reward = state_score(nxt, cfg) - state_score(state, cfg)
    return nxt, reward


def rollout_batch(initial_states: list[MeshState], params: NetworkParams, cfg: EnvConfig,
                  rng: np.random.Generator, deterministic: bool = False, with_values: bool = True,
                  trace: Callable | None = None) -> list[Trajectory]:
    """Roll out several trajectories in lockstep, batching the network calls."""
    trajs = [Trajectory(s.polygon, [s]) for s in initial_states]
    with torch.no_grad():
        for t in range(cfg.max_steps):
            states = [tr.states[-1] for tr in trajs]
            g = state_batch(states, cfg.size, params.dtype)
            out = params.policy(g)
            acts = sample_action(out, rng, deterministic).split(g.node_graph.numpy(), g.num_graphs)
            values = params.value(g).double().numpy() if with_values else np.zeros(len(trajs))
            for k, (tr, s, a, v) in enumerate(zip(trajs, states, acts, values)):
                if trace:
                    trace("step", t, k)
                nxt, r = step(s, a, tr.polygon, cfg, trace)
                tr.states.append(nxt)
                tr.actions.append(a)
                tr.rewards.append(r)
                tr.log_probs.append(float(a.log_prob[0]))
                tr.values.append(float(v))
    for tr in trajs:
        tr.values.append(0.0)
        tr.scores = [state_score(s, cfg) for s in tr.states]
        if len(tr.final_state.triangles):
            tr.final_report = mesh_score(tr.final_state, cfg.weights, cfg.size)[1]
    return trajs


def rollout(polygon: Polygon, params: NetworkParams, cfg: EnvConfig, rng: np.random.Generator,
            deterministic: bool = False, initial_points=None, trace: Callable | None = None) -> Trajectory:
    """One trajectory from the boundary points of ``polygon`` (or from
    ``initial_points`` in improvement mode)."""
    pts = polygon.boundary_points if initial_points is None else initial_points
    return rollout_batch([build_state(pts, polygon)], params, cfg, rng, deterministic, trace=trace)[0]
