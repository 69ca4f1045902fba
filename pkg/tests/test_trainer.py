import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from rlmesh.domains import make_rng
from rlmesh.environment import EnvConfig
from rlmesh.network import NetworkParams, ShapeError, graph_arrays, log_prob_and_entropy, state_batch
from rlmesh.trainer import (
    FULL_CURRICULUM,
    AdamState,
    AdvantageBatch,
    CurriculumStage,
    DomainSampler,
    Optimizers,
    PPOConfig,
    adam_step,
    build_transitions,
    compute_gae,
    ppo_loss,
    run_curriculum,
    run_ppo_iteration,
    sample_trajectories,
)


def gae_double_sum(r, v, gamma, lam):
    n = len(r)
    delta = [r[t] + gamma * v[t + 1] - v[t] for t in range(n)]
    return np.array([sum((gamma * lam) ** l * delta[t + l] for l in range(n - t)) for t in range(n)])


def test_gae_example():
    r, v = [1.0, 0.5, -0.2], [0.3, 0.4, 0.1, 0.0]
    adv, ret = compute_gae(r, v, 1.0, 0.9)
    assert np.allclose(adv, gae_double_sum(r, v, 1.0, 0.9), atol=1e-12)
    assert np.allclose(ret, adv + np.array(v[:-1]), atol=1e-12)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=12), st.floats(0, 1), st.floats(0, 1), st.integers(0, 999))
def test_gae_matches_double_sum(r, gamma, lam, seed):
    v = np.random.default_rng(seed).normal(size=len(r) + 1)
    adv, _ = compute_gae(r, v, gamma, lam)
    assert np.allclose(adv, gae_double_sum(r, v, gamma, lam), atol=1e-12)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=12), st.integers(0, 999))
def test_gae_lambda_one_is_return_minus_baseline(r, seed):
    v = np.random.default_rng(seed).normal(size=len(r) + 1)
    v[-1] = 0.0
    adv, _ = compute_gae(r, v, 1.0, 1.0)
    ret = np.cumsum(r[::-1])[::-1]
    assert np.allclose(adv, ret - v[:-1], atol=1e-12)


def test_gae_shape_error():
    with pytest.raises(ShapeError):
        compute_gae([1.0, 2.0], [0.0, 0.0])


def test_adam_matches_torch_optim():
    torch.manual_seed(0)
    w = [torch.randn(3, 4, dtype=torch.float64), torch.randn(5, dtype=torch.float64)]
    ref = [t.clone().requires_grad_(True) for t in w]
    opt = torch.optim.Adam(ref, lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
    state = AdamState.zeros_like(w)
    for k in range(25):
        grads = [torch.sin(t * (k + 1)) + 0.1 * t for t in w]
        adam_step(w, grads, state, 1e-2)
        opt.zero_grad()
        for p, g in zip(ref, [torch.sin(t.detach() * (k + 1)) + 0.1 * t.detach() for t in ref]):
            p.grad = g
        opt.step()
        assert all(torch.allclose(a, b.detach(), atol=1e-12) for a, b in zip(w, ref))


def test_adam_shape_error():
    with pytest.raises(ShapeError):
        adam_step([torch.zeros(3)], [torch.zeros(4)], AdamState.zeros_like([torch.zeros(3)]), 1e-3)


def _batch(seed=0, n=3, adv=None, shift=None):
    p = NetworkParams(seed=seed, dtype=torch.float64)
    rng = make_rng(seed)
    sampler = DomainSampler(2.0, (5, 8))
    trajs = sample_trajectories(p, n, sampler, EnvConfig(max_steps=2), seed)
    items = build_transitions(trajs, EnvConfig(max_steps=2), 1.0, 0.95, False)
    if adv is not None:
        for t, a in zip(items, adv):
            t.advantage = a
    if shift is not None:
        for t, s in zip(items, shift):
            t.old_log_prob += s
    return p, items


def test_ppo_loss_unclipped_at_old_policy():
    p, items = _batch()
    batch = AdvantageBatch.from_transitions(items, torch.float64)
    loss, stats = ppo_loss(batch, p.policy, 0.2, 0.0)
    # ratio is 1 for the policy that produced the samples
    assert stats["ratio_dev"] == pytest.approx(0.0, abs=1e-6)
    assert float(loss.detach()) == pytest.approx(-float(batch.advantage.mean()), abs=1e-6)


def test_ppo_loss_clipping_by_hand():
    shifts = [-1.0, 1.0, -1.0, 1.0, 0.01, -0.01]
    advs = [1.0, 1.0, -1.0, -1.0, 2.0, -3.0]
    p, items = _batch(adv=advs, shift=shifts)
    items = items[:6]
    batch = AdvantageBatch.from_transitions(items, torch.float64)
    loss, stats = ppo_loss(batch, p.policy, 0.2, 0.0)
    ratio = np.exp(-np.array(shifts[: len(items)]))
    a = np.array(advs[: len(items)])
    surr = np.minimum(ratio * a, np.clip(ratio, 0.8, 1.2) * a)
    assert float(loss.detach()) == pytest.approx(-surr.mean(), rel=1e-6)
    # the entropy bonus enters with a minus sign
    loss_e, st_ = ppo_loss(batch, p.policy, 0.2, 0.5)
    assert float(loss_e.detach()) == pytest.approx(float(loss.detach()) - 0.5 * st_["entropy"], rel=1e-9)


def test_advantage_normalization():
    _, items = _batch(n=4)
    p = NetworkParams(seed=0, dtype=torch.float64)
    trajs = sample_trajectories(p, 4, DomainSampler(2.0, (5, 8)), EnvConfig(max_steps=2), 0)
    items = build_transitions(trajs, EnvConfig(max_steps=2), 1.0, 0.95, True)
    a = np.array([t.advantage for t in items])
    assert a.mean() == pytest.approx(0.0, abs=1e-9)
    assert a.std() == pytest.approx(1.0, abs=1e-6)


def test_iteration_is_deterministic():
    def once():
        p = NetworkParams(seed=3)
        opt = Optimizers.for_params(p)
        cfg = PPOConfig(trajectories=6, epochs=2, minibatch_size=8, learning_rate=1e-3)
        st_ = run_ppo_iteration(p, opt, cfg, EnvConfig(max_steps=2), DomainSampler(2.0, (5, 8)), make_rng(4))
        return st_, [t.detach().clone() for _, t in p.named_tensors()]

    (s1, t1), (s2, t2) = once(), once()
    assert s1 == s2
    assert all(torch.equal(a, b) for a, b in zip(t1, t2))


def test_iteration_changes_parameters_and_reports():
    p = NetworkParams(seed=3)
    before = [t.clone() for _, t in p.named_tensors()]
    cfg = PPOConfig(trajectories=6, epochs=2, minibatch_size=8, learning_rate=1e-3)
    st_ = run_ppo_iteration(p, Optimizers.for_params(p), cfg, EnvConfig(max_steps=2), DomainSampler(2.0, (5, 8)), make_rng(4))
    assert st_["timesteps"] == 12
    assert set(st_) >= {"mean_reward", "entropy", "policy_loss", "value_loss", "ratio_dev"}
    after = [t for _, t in p.named_tensors()]
    assert any(not torch.equal(a, b) for a, b in zip(before, after))


def test_multi_worker_deterministic_given_count():
    p = NetworkParams(seed=1)
    sampler = DomainSampler(2.0, (5, 8))
    env = EnvConfig(max_steps=2)
    a = sample_trajectories(p, 5, sampler, env, seed=10, workers=2)
    b = sample_trajectories(p, 5, sampler, env, seed=10, workers=2)
    assert [t.rewards for t in a] == [t.rewards for t in b]
    # worker 0 draws from the same stream as the single-worker sampler
    single = sample_trajectories(p, 3, sampler, env, seed=10, workers=1)
    assert [t.rewards for t in a[:3]] == [t.rewards for t in single]


def test_zero_iteration_curriculum_keeps_init():
    p = NetworkParams(seed=2)
    before = [t.clone() for _, t in p.named_tensors()]
    stage = CurriculumStage(2.0, (5, 8), 2, 1e-2, 1e-3, 0.2, num_iterations=0)
    run = run_curriculum([stage], p)
    assert run.log == []
    assert all(torch.equal(a, b) for a, (_, b) in zip(before, p.named_tensors()))


def test_curriculum_log(tmp_path):
    stages = [CurriculumStage(2.0, (5, 8), 2, 1e-2, 1e-3, 0.2, num_iterations=2, epochs=1, trajectories=3),
              CurriculumStage(2.5, (5, 9), 3, 1e-3, 1e-3, 0.2, num_iterations=1, epochs=1, trajectories=3)]
    run = run_curriculum(stages, NetworkParams(), seed=1, log_path=tmp_path / "log.csv",
                         checkpoint_dir=tmp_path / "ck", checkpoint_every=2)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iteration,stage,mean_reward,entropy,policy_loss,value_loss,wall_time"
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["1", "1"], ["2", "1"], ["3", "2"]]
    assert [r["timesteps"] for r in run.log] == [6, 6, 9]
    assert sorted(f.name for f in (tmp_path / "ck").iterdir()) == ["iter_00002.ckpt"]


def test_full_curriculum_constants():
    assert [s.polygon_scale for s in FULL_CURRICULUM] == [2, 2.5, 3, 3.5, 4]
    assert [s.side_range for s in FULL_CURRICULUM] == [(5, 10), (5, 12), (5, 14), (5, 16), (5, 18)]
    assert [s.trajectory_length for s in FULL_CURRICULUM] == [5, 6, 7, 8, 9]
    assert [s.entropy_coef for s in FULL_CURRICULUM] == [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    assert [s.learning_rate for s in FULL_CURRICULUM] == [1e-5, 1.5e-5, 2e-5, 2.5e-5, 3e-5]
    assert [s.ppo_epsilon for s in FULL_CURRICULUM] == [0.1, 0.15, 0.2, 0.25, 0.3]
    assert all((s.num_iterations, s.epochs, s.trajectories) == (200, 10, 300) for s in FULL_CURRICULUM)


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PPOConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        PPOConfig(gamma=1.5)


def test_adam_zero_gradient_and_first_step():
    w = [torch.tensor([1.0, -2.0], dtype=torch.float64)]
    st_ = AdamState.zeros_like(w)
    st_.m[0] += 0.5
    st_.v[0] += 0.25
    adam_step(w, [torch.zeros(2, dtype=torch.float64)], st_, 0.1)
    m, v = 0.9 * 0.5, 0.999 * 0.25
    # zero gradient still moves along the decayed first moment
    assert torch.allclose(st_.m[0], torch.full((2,), m, dtype=torch.float64))
    assert torch.allclose(st_.v[0], torch.full((2,), v, dtype=torch.float64))
    w = [torch.tensor([1.0, -2.0], dtype=torch.float64)]
    st_ = AdamState.zeros_like(w)
    adam_step(w, [torch.zeros(2, dtype=torch.float64)], st_, 0.1)
    assert torch.equal(w[0], torch.tensor([1.0, -2.0], dtype=torch.float64))
    # at t=1 the bias-corrected step is lr * g / (|g| + eps)
    g = torch.tensor([3.0, -0.5], dtype=torch.float64)
    w = [torch.zeros(2, dtype=torch.float64)]
    adam_step(w, [g], AdamState.zeros_like(w), 0.1)
    assert torch.allclose(w[0], -0.1 * g / (g.abs() + 1e-8), atol=1e-15)


def test_adam_quadratic_bowl():
    x = [torch.tensor([20.0], dtype=torch.float64)]
    st_ = AdamState.zeros_like(x)
    dist = []
    for _ in range(100):
        adam_step(x, [2.0 * x[0]], st_, 0.1)
        dist.append(float(x[0].norm()))
    assert all(b < a for a, b in zip(dist[10:], dist[11:]))


def test_adam_gradient_scale_invariance():
    g = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
    steps = []
    for s in (1.0, 10.0):
        w = [torch.zeros(3, dtype=torch.float64)]
        adam_step(w, [s * g], AdamState.zeros_like(w), 1e-3, eps=1e-12)
        steps.append(w[0])
    assert torch.allclose(steps[0], steps[1], rtol=1e-6, atol=0)


def test_ppo_gradient_equals_policy_gradient_at_old_params():
    p, items = _batch(n=3)
    batch = AdvantageBatch.from_transitions(items, torch.float64)
    params = list(p.policy.parameters())
    loss, _ = ppo_loss(batch, p.policy, 0.2, 0.0)
    g1 = torch.autograd.grad(loss, params, allow_unused=True)
    out = p.policy(batch.graphs)
    lp, _ = log_prob_and_entropy(out, batch.offset, batch.alpha)
    pg = -(torch.exp(lp - lp.detach()) * batch.advantage).mean()
    g2 = torch.autograd.grad(pg, params, allow_unused=True)
    for a, b in zip(g1, g2):
        if a is None or b is None:
            assert a is None and b is None
        else:
            assert torch.allclose(a, b, atol=1e-12)


def test_degenerate_config_moves_ratio():
    p, items = _batch(n=4)
    cfg = PPOConfig(clip_eps=1e9, entropy_coef=0.0, epochs=1, minibatch_size=len(items), learning_rate=1e-2)
    from rlmesh.trainer import update

    update(p, Optimizers.for_params(p), items, cfg, make_rng(0))
    _, st_ = ppo_loss(AdvantageBatch.from_transitions(items, torch.float64), p.policy, 0.2, 0.0)
    assert st_["ratio_dev"] > 1e-6


def test_entropy_pressure_raises_sigma():
    from rlmesh.trainer import update

    p, items = _batch(n=4, adv=[0.0] * 64)
    for t in items:
        t.advantage = 0.0
    cfg = PPOConfig(entropy_coef=1.0, epochs=1, minibatch_size=len(items), learning_rate=1e-3)
    opt = Optimizers.for_params(p)
    graphs = AdvantageBatch.from_transitions(items, torch.float64).graphs

    def mean_sigma():
        with torch.no_grad():
            out = p.policy(graphs)
        return float((out.sigma_x.mean() + out.sigma_alpha.mean()).detach())

    hist = [mean_sigma()]
    for k in range(20):
        update(p, opt, items, cfg, make_rng(k))
        hist.append(mean_sigma())
    assert all(b > a for a, b in zip(hist, hist[1:]))
