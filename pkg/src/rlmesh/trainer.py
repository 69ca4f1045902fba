"""PPO training: advantage estimation, losses, Adam and the staged
curriculum."""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .domains import InitScheme, make_initial_points, make_rng, sample_polygon
from .environment import EnvConfig, Trajectory, rollout_batch
from .mesh_state import MeshState, build_state
from .network import (
    NetworkParams,
    ShapeError,
    collate,
    graph_arrays,
    log_prob_and_entropy,
    save_checkpoint,
)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "stage", "mean_reward", "entropy", "policy_loss", "value_loss", "wall_time")


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.1
    entropy_coef: float = 1e-2
    learning_rate: float = 1e-5
    value_learning_rate: float | None = None
    epochs: int = 10
    trajectories: int = 300
    gamma: float = 1.0
    lam: float = 0.95
    minibatch_size: int = 128
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = True
    rollout_chunk: int = 100
    workers: int = 1

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")

    @property
    def value_lr(self) -> float:
        return self.learning_rate if self.value_learning_rate is None else self.value_learning_rate


@dataclass(frozen=True)
class CurriculumStage:
    polygon_scale: float
    side_range: tuple[int, int]
    trajectory_length: int
    entropy_coef: float
    learning_rate: float
    ppo_epsilon: float
    num_iterations: int = 200
    epochs: int = 10
    trajectories: int = 300


FULL_CURRICULUM = tuple(
    CurriculumStage(scale, (5, hi), length, ent, lr, eps)
    for scale, hi, length, ent, lr, eps in [
        (2.0, 10, 5, 1e-2, 1e-5, 0.10),
        (2.5, 12, 6, 1e-3, 1.5e-5, 0.15),
        (3.0, 14, 7, 1e-4, 2e-5, 0.20),
        (3.5, 16, 8, 1e-5, 2.5e-5, 0.25),
        (4.0, 18, 9, 1e-6, 3e-5, 0.30),
    ]
)


def compute_gae(rewards, values, gamma: float = 1.0, lam: float = 0.95):
    """Generalized advantage estimates and returns for one episode.

    ``values`` has one entry per state including the terminal one.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(v) != len(r) + 1:
        raise ShapeError(f"need {len(r) + 1} values for {len(r)} rewards, got {len(v)}")
    delta = r + gamma * v[1:] - v[:-1]
    adv = np.zeros_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv, adv + v[:-1]


@dataclass
class AdamState:
    m: list[torch.Tensor]
    v: list[torch.Tensor]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        params = list(params)
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))


@dataclass
class Transition:
    graph: dict
    offset: np.ndarray
    alpha: np.ndarray
    old_log_prob: float
    advantage: float
    ret: float


@dataclass
class AdvantageBatch:
    graphs: object  # GraphBatch
    offset: np.ndarray
    alpha: np.ndarray
    old_log_prob: torch.Tensor
    advantage: torch.Tensor
    ret: torch.Tensor

    @classmethod
    def from_transitions(cls, items: list[Transition], dtype=torch.float32) -> "AdvantageBatch":
        return cls(
            graphs=collate([t.graph for t in items], dtype),
            offset=np.concatenate([t.offset for t in items]),
            alpha=np.concatenate([t.alpha for t in items]),
            old_log_prob=torch.tensor([t.old_log_prob for t in items], dtype=dtype),
            advantage=torch.tensor([t.advantage for t in items], dtype=dtype),
            ret=torch.tensor([t.ret for t in items], dtype=dtype),
        )


def ppo_loss(batch: AdvantageBatch, policy, clip_eps: float, entropy_coef: float):
    """Negated clipped surrogate minus the entropy bonus.

    Returns ``(loss, stats)`` where stats carries the mean entropy and the
    mean |ratio - 1|.
    """
    out = policy(batch.graphs)
    lp, ent = log_prob_and_entropy(out, batch.offset, batch.alpha)
    ratio = torch.exp(lp - batch.old_log_prob)
    adv = batch.advantage
    surrogate = torch.min(ratio * adv, torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)
    loss = -surrogate.mean() - entropy_coef * ent.mean()
    stats = {"entropy": float(ent.detach().mean()), "ratio_dev": float((ratio.detach() - 1.0).abs().mean())}
    return loss, stats


def value_loss(batch: AdvantageBatch, value_net) -> torch.Tensor:
    return ((value_net(batch.graphs) - batch.ret) ** 2).mean()


@dataclass(frozen=True)
class DomainSampler:
    """Draws a random subdivided polygon and its initial points."""

    scale: float
    sides: tuple[int, int]
    init: InitScheme = InitScheme()

    def __call__(self, rng: np.random.Generator) -> MeshState:
        poly = sample_polygon(self.sides, self.scale, rng)
        pts, _ = make_initial_points(poly, self.init, rng)
        return build_state(pts, poly)


def _sample_worker(args):
    state_dicts, cfg, dtype, n, sampler, env_cfg, seed, chunk = args
    params = NetworkParams(cfg, dtype=dtype)
    params.policy.load_state_dict(state_dicts[0])
    params.value.load_state_dict(state_dicts[1])
    torch.set_num_threads(1)
    return _sample(params, n, sampler, env_cfg, make_rng(seed), chunk)


def _sample(params, n, sampler, env_cfg, rng, chunk) -> list[Trajectory]:
    trajs = []
    while len(trajs) < n:
        k = min(chunk, n - len(trajs))
        starts = [sampler(rng) for _ in range(k)]
        trajs.extend(rollout_batch(starts, params, env_cfg, rng, deterministic=False))
    return trajs


def sample_trajectories(params: NetworkParams, n: int, sampler: Callable, env_cfg: EnvConfig, seed: int,
                        workers: int = 1, chunk: int = 100) -> list[Trajectory]:
    """Stochastic rollouts. Worker k draws from the stream seeded ``seed + k``."""
    if workers <= 1:
        return _sample(params, n, sampler, env_cfg, make_rng(seed), chunk)
    counts = [n // workers + (1 if k < n % workers else 0) for k in range(workers)]
    snap = (params.policy.state_dict(), params.value.state_dict())
    jobs = [(snap, params.cfg, params.dtype, c, sampler, env_cfg, seed + k, chunk) for k, c in enumerate(counts) if c]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_sample_worker, jobs))
    return [t for part in parts for t in part]


def build_transitions(trajs: list[Trajectory], env_cfg: EnvConfig, gamma: float, lam: float,
                      normalize: bool) -> list[Transition]:
    items = []
    for tr in trajs:
        adv, ret = compute_gae(tr.rewards, tr.values, gamma, lam)
        for t, act in enumerate(tr.actions):
            items.append(
                Transition(graph_arrays(tr.states[t], env_cfg.size), act.offset, act.alpha, tr.log_probs[t], adv[t], ret[t])
            )
    if normalize and len(items) > 1:
        a = np.array([t.advantage for t in items])
        mu, sd = a.mean(), a.std()
        for t in items:
            t.advantage = (t.advantage - mu) / (sd + 1e-8)
    return items


@dataclass
class Optimizers:
    policy: AdamState
    value: AdamState

    @classmethod
    def for_params(cls, params: NetworkParams) -> "Optimizers":
        return cls(AdamState.zeros_like(params.policy.parameters()), AdamState.zeros_like(params.value.parameters()))


def _grad(loss, params):
    # the value trunk's last coordinate MLP never feeds the output
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def update(params: NetworkParams, opt: Optimizers, items: list[Transition], cfg: PPOConfig,
           rng: np.random.Generator) -> dict:
    """``cfg.epochs`` passes of shuffled minibatch Adam on both losses."""
    pol_params = list(params.policy.parameters())
    val_params = list(params.value.parameters())
    stats = {"policy_loss": math.nan, "value_loss": math.nan, "entropy": math.nan, "ratio_dev": math.nan}
    for _ in range(cfg.epochs):
        order = rng.permutation(len(items))
        sums = {k: 0.0 for k in stats}
        seen = 0
        for lo in range(0, len(items), cfg.minibatch_size):
            mb = [items[i] for i in order[lo : lo + cfg.minibatch_size]]
            batch = AdvantageBatch.from_transitions(mb, params.dtype)
            loss, st = ppo_loss(batch, params.policy, cfg.clip_eps, cfg.entropy_coef)
            grads = _grad(loss, pol_params)
            adam_step(pol_params, grads, opt.policy, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            vloss = value_loss(batch, params.value)
            vgrads = _grad(vloss, val_params)
            adam_step(val_params, vgrads, opt.value, cfg.value_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            w = len(mb)
            seen += w
            sums["policy_loss"] += float(loss.detach()) * w
            sums["value_loss"] += float(vloss.detach()) * w
            sums["entropy"] += st["entropy"] * w
            sums["ratio_dev"] += st["ratio_dev"] * w
        stats = {k: v / max(seen, 1) for k, v in sums.items()}
    return stats


def run_ppo_iteration(params: NetworkParams, opt: Optimizers, cfg: PPOConfig, env_cfg: EnvConfig,
                      sampler: Callable, rng: np.random.Generator) -> dict:
    """Sample ``cfg.trajectories`` episodes, then update policy and value."""
    seed = int(rng.integers(2**62))
    trajs = sample_trajectories(params, cfg.trajectories, sampler, env_cfg, seed, cfg.workers, cfg.rollout_chunk)
    items = build_transitions(trajs, env_cfg, cfg.gamma, cfg.lam, cfg.normalize_advantages)
    stats = update(params, opt, items, cfg, rng)
    stats["mean_reward"] = float(np.mean([t.total_reward for t in trajs]))
    stats["timesteps"] = len(items)
    return stats


@dataclass
class TrainingRun:
    params: NetworkParams
    log: list[dict] = field(default_factory=list)


def run_curriculum(stages, params: NetworkParams, base_cfg: PPOConfig = PPOConfig(), env_cfg: EnvConfig = EnvConfig(),
                   init: InitScheme = InitScheme(), seed: int = 0, log_path=None, checkpoint_dir=None,
                   checkpoint_every: int = 50, callback: Callable | None = None) -> TrainingRun:
    """Run stages in order, carrying parameters and optimizer moments."""
    rng = make_rng(seed)
    opt = Optimizers.for_params(params)
    run = TrainingRun(params)
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    it = 0
    try:
        for k, stage in enumerate(stages, start=1):
            cfg = replace(base_cfg, clip_eps=stage.ppo_epsilon, entropy_coef=stage.entropy_coef,
                          learning_rate=stage.learning_rate, epochs=stage.epochs, trajectories=stage.trajectories)
            ecfg = replace(env_cfg, max_steps=stage.trajectory_length)
            sampler = DomainSampler(stage.polygon_scale, tuple(stage.side_range), init)
            for _ in range(stage.num_iterations):
                it += 1
                stats = run_ppo_iteration(params, opt, cfg, ecfg, sampler, rng)
                row = {"iteration": it, "stage": k, **stats, "wall_time": time.perf_counter() - t0}
                run.log.append(row)
                log.info("it %d stage %d reward %.4f entropy %.3f", it, k, stats["mean_reward"], stats["entropy"])
                if writer is not None:
                    writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
                    fh.flush()
                if checkpoint_dir is not None and checkpoint_every and it % checkpoint_every == 0:
                    save_checkpoint(params, Path(checkpoint_dir) / f"iter_{it:05d}.ckpt", {"iteration": it, "stage": k})
                if callback is not None:
                    callback(row, params)
    finally:
        if fh is not None:
            fh.close()
    return run


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def default_workers() -> int:
    return int(os.environ.get("RLMESH_WORKERS", "1"))
