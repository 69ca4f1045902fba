"""Equivariant graph policy and value networks.

Each convolution layer updates node coordinates and features as

    m_ij  = phi_e(z_i, z_j, (|x_i - x_j| / h_ij)^2)
    dx_i  = mean_j (x_i - x_j) * tanh(phi_c(m_ij))
    x_i  += (1 - b_i) * dx_i
    z_i   = phi_n(z_i, mean_j m_ij)

with b_i the boundary label and h_ij the size field at the edge midpoint
(held fixed across layers). Node coordinates never enter the network in
absolute form: only edge vectors x_i - x_j, taken in double precision from
the mesh, plus accumulated displacements. The network is therefore exactly
translation invariant and rotation equivariant up to rounding.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .mesh_state import CONSTANT, MeshState, SizeField

LOG_2PI = math.log(2.0 * math.pi)
N_OUT = 5  # alpha_d, alpha_e, alpha_t, sigma_x, sigma_alpha


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    d: int = 8
    layers: int = 2
    hidden: int | None = None
    value_hidden: int | None = None  # width d' of the value node decoder
    init_sigma: float = 0.3
    init_alpha: float = 0.5

    def __post_init__(self):
        if self.d < 1 or self.layers < 0:
            raise ValueError(f"need d >= 1 and layers >= 0, got d={self.d}, layers={self.layers}")
        if not (0.0 < self.init_sigma < 1.0 and 0.0 < self.init_alpha < 1.0):
            raise ValueError("init_sigma and init_alpha must lie in (0, 1)")

    @property
    def hidden_width(self) -> int:
        return self.hidden if self.hidden is not None else 2 * self.d

    @property
    def value_width(self) -> int:
        return self.value_hidden if self.value_hidden is not None else self.d


class MLP(nn.Module):
    """One tanh hidden layer."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int):
        super().__init__()
        self.inp = nn.Linear(n_in, n_hidden)
        self.out = nn.Linear(n_hidden, n_out)

    def forward(self, x):
        return self.out(torch.tanh(self.inp(x)))


@dataclass
class GraphBatch:
    """Several mesh graphs concatenated into one disjoint graph.

    Directed edges run from ``src`` (j) to ``dst`` (i); ``rel`` holds
    x_i - x_j and ``h`` the size field at the edge midpoint.
    """

    boundary: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    rel: torch.Tensor
    h: torch.Tensor
    node_graph: torch.Tensor
    num_graphs: int
    positions: np.ndarray  # float64 node positions, for decoding

    @property
    def num_nodes(self) -> int:
        return len(self.boundary)

    @property
    def degree(self) -> torch.Tensor:
        deg = torch.zeros(self.num_nodes, dtype=self.rel.dtype)
        deg.index_add_(0, self.dst, torch.ones_like(self.h))
        return deg

    @property
    def nodes_per_graph(self) -> torch.Tensor:
        return torch.bincount(self.node_graph, minlength=self.num_graphs)


def graph_arrays(state: MeshState, size: SizeField = CONSTANT) -> dict:
    """Numpy graph view of a state, cached on the state per size field."""
    cache = state.__dict__.setdefault("_graph_cache", {})
    key = id(size)
    if key in cache:
        return cache[key]
    e = state.edges
    dst = np.concatenate([e[:, 0], e[:, 1]])
    src = np.concatenate([e[:, 1], e[:, 0]])
    p = state.points
    rel = p[dst] - p[src]
    if size.is_constant:
        h = np.full(len(dst), float(size.params[0]))
    elif len(dst):
        h = size(0.5 * (p[dst] + p[src]))
    else:
        h = np.zeros(0)
    g = {
        "positions": p,
        "boundary": state.boundary.astype(float),
        "src": src.astype(np.int64),
        "dst": dst.astype(np.int64),
        "rel": rel,
        "h": h,
    }
    cache[key] = g
    return g


def collate(graphs: list[dict], dtype=torch.float32) -> GraphBatch:
    offsets = np.cumsum([0] + [len(g["boundary"]) for g in graphs])
    src = np.concatenate([g["src"] + o for g, o in zip(graphs, offsets)])
    dst = np.concatenate([g["dst"] + o for g, o in zip(graphs, offsets)])
    node_graph = np.repeat(np.arange(len(graphs)), np.diff(offsets))
    return GraphBatch(
        boundary=torch.as_tensor(np.concatenate([g["boundary"] for g in graphs]), dtype=dtype),
        src=torch.as_tensor(src),
        dst=torch.as_tensor(dst),
        rel=torch.as_tensor(np.concatenate([g["rel"] for g in graphs]).reshape(-1, 2), dtype=dtype),
        h=torch.as_tensor(np.concatenate([g["h"] for g in graphs]), dtype=dtype),
        node_graph=torch.as_tensor(node_graph),
        num_graphs=len(graphs),
        positions=np.concatenate([g["positions"] for g in graphs]).reshape(-1, 2),
    )


def state_batch(states, size: SizeField = CONSTANT, dtype=torch.float32) -> GraphBatch:
    return collate([graph_arrays(s, size) for s in states], dtype=dtype)


class Trunk(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        d, hw = cfg.d, cfg.hidden_width
        self.encoder = MLP(1, hw, d)
        self.edge = nn.ModuleList(MLP(2 * d + 1, hw, d) for _ in range(cfg.layers))
        self.coord = nn.ModuleList(MLP(d, hw, 1) for _ in range(cfg.layers))
        self.node = nn.ModuleList(MLP(2 * d, hw, d) for _ in range(cfg.layers))
        self.d = d

    def forward(self, g: GraphBatch, record: list | None = None):
        """Returns (node displacement, node features)."""
        n = g.num_nodes
        dtype = g.rel.dtype
        movable = (1.0 - g.boundary)[:, None]
        inv_deg = 1.0 / g.degree.clamp(min=1.0)
        z = self.encoder(g.boundary[:, None])
        disp = torch.zeros(n, 2, dtype=dtype)
        for phi_e, phi_c, phi_n in zip(self.edge, self.coord, self.node):
            diff = g.rel + disp[g.dst] - disp[g.src]
            dist2 = (diff * diff).sum(dim=1, keepdim=True) / (g.h * g.h)[:, None]
            m = phi_e(torch.cat([z[g.dst], z[g.src], dist2], dim=1))
            w = torch.tanh(phi_c(m))
            dx = torch.zeros(n, 2, dtype=dtype).index_add(0, g.dst, diff * w) * inv_deg[:, None]
            if record is not None:
                record.append(dx)
            disp = disp + movable * dx
            agg = torch.zeros(n, self.d, dtype=dtype).index_add(0, g.dst, m) * inv_deg[:, None]
            z = phi_n(torch.cat([z, agg], dim=1))
        return disp, z


@dataclass
class PolicyOutput:
    """Per-node Gaussian parameters. ``displacement`` is the mean position
    minus the current node position."""

    displacement: torch.Tensor
    alpha: torch.Tensor
    sigma_x: torch.Tensor
    sigma_alpha: torch.Tensor
    batch: GraphBatch

    @property
    def mean_positions(self) -> np.ndarray:
        return self.batch.positions + self.displacement.detach().double().numpy()


class PolicyNetwork(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = Trunk(cfg)
        self.decoder = MLP(cfg.d, cfg.hidden_width, N_OUT)

    def forward(self, g: GraphBatch) -> PolicyOutput:
        disp, z = self.trunk(g)
        out = torch.sigmoid(self.decoder(z))
        return PolicyOutput(disp, out[:, :3], out[:, 3], out[:, 4], g)


class ValueNetwork(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = Trunk(cfg)
        self.node_decoder = MLP(cfg.d, cfg.hidden_width, cfg.value_width)
        self.head = MLP(cfg.value_width, cfg.hidden_width, 1)

    def forward(self, g: GraphBatch) -> torch.Tensor:
        _, z = self.trunk(g)
        y = self.node_decoder(z)
        pooled = torch.zeros(g.num_graphs, y.shape[1], dtype=y.dtype).index_add(0, g.node_graph, y)
        pooled = pooled / g.nodes_per_graph.clamp(min=1).to(y.dtype)[:, None]
        return self.head(pooled)[:, 0]


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def init_params(module: nn.Module, seed: int) -> None:
    """Uniform(+-sqrt(1/fan_in)) weights and biases from a seeded generator."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for lin in module.modules():
            if isinstance(lin, nn.Linear):
                bound = math.sqrt(1.0 / lin.in_features)
                for p in (lin.weight, lin.bias):
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 * bound - bound)


class NetworkParams:
    """Policy and value networks with separate parameters."""

    def __init__(self, cfg: NetworkConfig = NetworkConfig(), seed: int = 0, dtype=torch.float32):
        self.cfg = cfg
        self.policy = PolicyNetwork(cfg)
        self.value = ValueNetwork(cfg)
        init_params(self.policy, seed)
        init_params(self.value, seed + 1)
        with torch.no_grad():
            b = self.policy.decoder.out.bias
            b[:3] = _logit(cfg.init_alpha)
            b[3:] = _logit(cfg.init_sigma)
        self.to(dtype)

    @property
    def dtype(self):
        return next(self.policy.parameters()).dtype

    def to(self, dtype) -> "NetworkParams":
        self.policy.to(dtype)
        self.value.to(dtype)
        return self

    def copy(self) -> "NetworkParams":
        other = NetworkParams.__new__(NetworkParams)
        other.cfg = self.cfg
        other.policy = PolicyNetwork(self.cfg).to(self.dtype)
        other.value = ValueNetwork(self.cfg).to(self.dtype)
        other.policy.load_state_dict(self.policy.state_dict())
        other.value.load_state_dict(self.value.state_dict())
        return other

    def named_tensors(self) -> list[tuple[str, torch.Tensor]]:
        return [(f"policy.{k}", v) for k, v in self.policy.state_dict().items()] + [
            (f"value.{k}", v) for k, v in self.value.state_dict().items()
        ]

    def layout_hash(self) -> str:
        desc = ";".join(f"{k}:{tuple(v.shape)}" for k, v in self.named_tensors())
        return hashlib.sha256(desc.encode()).hexdigest()[:16]


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def policy_forward(state_or_batch, params: NetworkParams, size: SizeField = CONSTANT) -> PolicyOutput:
    g = state_or_batch if isinstance(state_or_batch, GraphBatch) else state_batch([state_or_batch], size, params.dtype)
    return params.policy(g)


def value_forward(state_or_batch, params: NetworkParams, size: SizeField = CONSTANT) -> torch.Tensor:
    g = state_or_batch if isinstance(state_or_batch, GraphBatch) else state_batch([state_or_batch], size, params.dtype)
    return params.value(g)


@dataclass
class ActionSample:
    """Sampled per-node move targets and action variables.

    ``offset`` is the sampled position minus the node's current position;
    ``positions`` gives absolute coordinates. ``log_prob`` holds one value
    per graph in the batch.
    """

    positions: np.ndarray
    offset: np.ndarray
    alpha: np.ndarray
    log_prob: np.ndarray
    deterministic: bool

    def split(self, node_graph: np.ndarray, num_graphs: int) -> list["ActionSample"]:
        return [
            ActionSample(
                self.positions[node_graph == k],
                self.offset[node_graph == k],
                self.alpha[node_graph == k],
                self.log_prob[k : k + 1],
                self.deterministic,
            )
            for k in range(num_graphs)
        ]


def sample_action(out: PolicyOutput, rng: np.random.Generator, deterministic: bool = False) -> ActionSample:
    disp = out.displacement.detach().double().numpy()
    alpha = out.alpha.detach().double().numpy()
    sx = out.sigma_x.detach().double().numpy()
    sa = out.sigma_alpha.detach().double().numpy()
    if deterministic:
        off, a = disp.copy(), alpha.copy()
    else:
        noise = rng.standard_normal((len(disp), N_OUT))
        off = disp + sx[:, None] * noise[:, :2]
        a = alpha + sa[:, None] * noise[:, 2:]
    node_lp = _gaussian_log_prob(off - disp, a - alpha, sx, sa, np)
    lp = np.zeros(out.batch.num_graphs)
    np.add.at(lp, out.batch.node_graph.numpy(), node_lp)
    return ActionSample(out.batch.positions + off, off, a, lp, deterministic)


def _gaussian_log_prob(dx, da, sx, sa, xp):
    lp_x = -0.5 * (dx * dx).sum(1) / (sx * sx) - 2.0 * xp.log(sx) - LOG_2PI
    lp_a = -0.5 * (da * da).sum(1) / (sa * sa) - 3.0 * xp.log(sa) - 1.5 * LOG_2PI
    return lp_x + lp_a


def node_entropy(out: PolicyOutput) -> torch.Tensor:
    c = 1.0 + LOG_2PI
    return (c + 2.0 * torch.log(out.sigma_x)) + 1.5 * (c + 2.0 * torch.log(out.sigma_alpha))


def log_prob_and_entropy(out: PolicyOutput, action, alpha=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-graph log-probability of an action and entropy of the policy.

    ``action`` is an ActionSample, or the position offsets with ``alpha``
    given separately.
    """
    if isinstance(action, ActionSample):
        offset, alpha = action.offset, action.alpha
    else:
        offset = action
    dtype = out.displacement.dtype
    offset = torch.as_tensor(np.asarray(offset), dtype=dtype)
    alpha = torch.as_tensor(np.asarray(alpha), dtype=dtype)
    if offset.shape != out.displacement.shape or alpha.shape != out.alpha.shape:
        raise ShapeError(f"action shape {tuple(offset.shape)}/{tuple(alpha.shape)} does not match policy output")
    node_lp = _gaussian_log_prob(offset - out.displacement, alpha - out.alpha, out.sigma_x, out.sigma_alpha, torch)
    g = out.batch
    lp = torch.zeros(g.num_graphs, dtype=dtype).index_add(0, g.node_graph, node_lp)
    ent = torch.zeros(g.num_graphs, dtype=dtype).index_add(0, g.node_graph, node_entropy(out))
    return lp, ent


def backward(loss: torch.Tensor, module: nn.Module, adjoint: float = 1.0) -> list[torch.Tensor]:
    """Reverse-mode gradient of ``adjoint * loss`` for every parameter of ``module``."""
    params = list(module.parameters())
    grads = torch.autograd.grad(loss, params, grad_outputs=torch.as_tensor(adjoint, dtype=loss.dtype), allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


CHECKPOINT_TAG = "RLMESH-CHECKPOINT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: NetworkParams, path, meta: dict | None = None) -> None:
    """Text checkpoint: tag line, JSON header, then ``name shape`` lines each
    followed by the flattened values in declared order."""
    import json

    cfg = params.cfg
    header = {
        "version": CHECKPOINT_VERSION,
        "d": cfg.d,
        "layers": cfg.layers,
        "hidden": cfg.hidden_width,
        "value_width": cfg.value_width,
        "init_sigma": cfg.init_sigma,
        "init_alpha": cfg.init_alpha,
        "dtype": str(params.dtype).replace("torch.", ""),
        "layout_hash": params.layout_hash(),
        "meta": meta or {},
    }
    lines = [f"{CHECKPOINT_TAG} {CHECKPOINT_VERSION}", json.dumps(header, sort_keys=True)]
    for name, t in params.named_tensors():
        shape = ",".join(str(n) for n in t.shape)
        lines.append(f"{name} {shape}")
        lines.append(" ".join(repr(float(v)) for v in t.detach().double().reshape(-1).tolist()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    import json

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_TAG):
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int(lines[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(lines[1])
    cfg = NetworkConfig(
        d=header["d"],
        layers=header["layers"],
        hidden=header["hidden"],
        value_hidden=header["value_width"],
        init_sigma=header.get("init_sigma", 0.3),
        init_alpha=header.get("init_alpha", 0.5),
    )
    dtype = getattr(torch, header.get("dtype", "float32"))
    params = NetworkParams(cfg, seed=0, dtype=dtype)
    if params.layout_hash() != header["layout_hash"]:
        raise CheckpointError(f"{path}: parameter layout does not match d={cfg.d}, layers={cfg.layers}")
    expected = dict(params.named_tensors())
    body = lines[2:]
    if len(body) != 2 * len(expected):
        raise CheckpointError(f"{path}: expected {len(expected)} tensors, found {len(body) // 2}")
    loaded = {}
    for name_line, data_line in zip(body[::2], body[1::2]):
        name, shape_s = name_line.split()
        shape = tuple(int(n) for n in shape_s.split(",")) if shape_s else ()
        if name not in expected or tuple(expected[name].shape) != shape:
            raise CheckpointError(f"{path}: unexpected tensor {name} with shape {shape}")
        vals = np.array([float(v) for v in data_line.split()], dtype=float)
        if vals.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: tensor {name} has {vals.size} values, expected {np.prod(shape)}")
        loaded[name] = torch.as_tensor(vals.reshape(shape), dtype=dtype)
    params.policy.load_state_dict({k[len("policy."):]: v for k, v in loaded.items() if k.startswith("policy.")})
    params.value.load_state_dict({k[len("value."):]: v for k, v in loaded.items() if k.startswith("value.")})
    return params, header.get("meta", {})
