"""Training configuration files.

Grammar (INI, read with :mod:`configparser`)::

    [network]   d, layers
    [ppo]       gamma, lam, minibatch_size, normalize_advantages,
                value_learning_rate, rollout_chunk, workers
    [env]       nu, weights = "w_a w_e w_r w_v", size_field
    [init]      kind, edge_exponents = "m1 m2 ...", sigma
    [run]       seed, checkpoint_every
    [stage N]   polygon_scale, side_range = "lo-hi", trajectory_length,
                entropy_coef, learning_rate, ppo_epsilon, num_iterations,
                epochs, trajectories

Every section except the stages is optional. Stages run in increasing N.
Unknown sections or keys are errors so typos do not pass silently.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .domains import ConfigError, InitScheme, size_field_catalog
from .environment import EnvConfig
from .network import NetworkConfig
from .quality import QualityWeights
from .trainer import CurriculumStage, PPOConfig, default_workers

CONFIG_DIR = Path(__file__).parent / "configs"

_KEYS = {
    "network": {"d": int, "layers": int},
    "ppo": {
        "gamma": float, "lam": float, "minibatch_size": int, "normalize_advantages": bool,
        "value_learning_rate": float, "rollout_chunk": int, "workers": int,
    },
    "env": {"nu": float, "weights": str, "size_field": str},
    "init": {"kind": str, "edge_exponents": str, "sigma": float},
    "run": {"seed": int, "checkpoint_every": int},
}
_STAGE_KEYS = {
    "polygon_scale": float, "side_range": str, "trajectory_length": int, "entropy_coef": float,
    "learning_rate": float, "ppo_epsilon": float, "num_iterations": int, "epochs": int, "trajectories": int,
}
_STAGE_REQUIRED = ("polygon_scale", "side_range", "trajectory_length", "entropy_coef", "learning_rate", "ppo_epsilon")
_STAGE_RE = re.compile(r"stage\s+(\d+)$")


@dataclass(frozen=True)
class TrainingConfig:
    network: NetworkConfig = NetworkConfig()
    ppo: PPOConfig = PPOConfig()
    env: EnvConfig = EnvConfig()
    init: InitScheme = InitScheme()
    stages: tuple[CurriculumStage, ...] = ()
    seed: int = 0
    checkpoint_every: int = 50
    source: str = field(default="", compare=False)


class _Locator:
    """Maps section/key names to line numbers for diagnostics."""

    def __init__(self, text: str, name: str):
        self.name = name
        self.lines = {}
        section = None
        for no, raw in enumerate(text.splitlines(), start=1):
            s = raw.strip()
            if s.startswith("[") and s.endswith("]"):
                section = s[1:-1].strip()
                self.lines[(section, None)] = no
            elif section is not None and s and s[0] not in "#;" and ("=" in s or ":" in s):
                key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
                self.lines.setdefault((section, key), no)

    def error(self, section: str, key: str | None, msg: str) -> ConfigError:
        no = self.lines.get((section, key), self.lines.get((section, None), 0))
        where = f"[{section}]" + (f" {key}" if key else "")
        return ConfigError(f"{self.name}:{no}: {where}: {msg}")


def _convert(loc: _Locator, section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw.strip())
    except ValueError as exc:
        raise loc.error(section, key, str(exc)) from None


def _section(cp, loc, name, keys):
    if not cp.has_section(name):
        return {}
    out = {}
    for key, raw in cp.items(name):
        if key not in keys:
            raise loc.error(name, key, f"unknown key; expected one of {sorted(keys)}")
        out[key] = _convert(loc, name, key, raw, keys[key])
    return out


def _side_range(loc, section, raw):
    m = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*", raw)
    if not m:
        raise loc.error(section, "side_range", f"expected 'lo-hi', got {raw!r}")
    lo, hi = int(m.group(1)), int(m.group(2))
    if lo < 3 or hi < lo:
        raise loc.error(section, "side_range", f"need 3 <= lo <= hi, got {lo}-{hi}")
    return lo, hi


def parse_training_config(text: str, name: str = "<config>") -> TrainingConfig:
    loc = _Locator(text, name)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=name)
    except configparser.Error as exc:
        raise ConfigError(f"{name}: {exc}") from None

    stages = []
    for sec in cp.sections():
        if sec in _KEYS:
            continue
        m = _STAGE_RE.match(sec)
        if not m:
            raise loc.error(sec, None, "unknown section")
        vals = _section(cp, loc, sec, _STAGE_KEYS)
        for req in _STAGE_REQUIRED:
            if req not in vals:
                raise loc.error(sec, None, f"missing required key {req!r}")
        vals["side_range"] = _side_range(loc, sec, cp.get(sec, "side_range"))
        for key in ("num_iterations", "epochs", "trajectories", "trajectory_length"):
            if key in vals and vals[key] < 0:
                raise loc.error(sec, key, "must be nonnegative")
        for key in ("polygon_scale", "learning_rate", "ppo_epsilon"):
            if vals[key] <= 0:
                raise loc.error(sec, key, "must be positive")
        stages.append((int(m.group(1)), CurriculumStage(**vals)))
    if not stages:
        raise ConfigError(f"{name}: no [stage N] sections")
    nums = [n for n, _ in stages]
    if len(set(nums)) != len(nums):
        raise ConfigError(f"{name}: duplicate stage numbers")
    stages = tuple(s for _, s in sorted(stages, key=lambda t: t[0]))

    net = _section(cp, loc, "network", _KEYS["network"])
    ppo = _section(cp, loc, "ppo", _KEYS["ppo"])
    env = _section(cp, loc, "env", _KEYS["env"])
    init = _section(cp, loc, "init", _KEYS["init"])
    run = _section(cp, loc, "run", _KEYS["run"])

    try:
        network = NetworkConfig(d=net.get("d", 8), layers=net.get("layers", 2))
    except ValueError as exc:
        raise loc.error("network", None, str(exc)) from None
    ppo.setdefault("workers", default_workers())
    try:
        ppo_cfg = PPOConfig(**ppo)
    except ValueError as exc:
        raise loc.error("ppo", None, str(exc)) from None

    env_kw = {}
    if "nu" in env:
        env_kw["nu"] = env["nu"]
    if "weights" in env:
        try:
            w = [float(t) for t in env["weights"].split()]
            env_kw["weights"] = QualityWeights(*w)
        except (TypeError, ValueError) as exc:
            raise loc.error("env", "weights", f"expected four weights 'a e r v': {exc}") from None
    if "size_field" in env:
        try:
            env_kw["size"] = size_field_catalog(env["size_field"])
        except ConfigError as exc:
            raise loc.error("env", "size_field", str(exc)) from None
    try:
        env_cfg = EnvConfig(**env_kw)
    except ValueError as exc:
        raise loc.error("env", None, str(exc)) from None

    init_kw = {}
    if "kind" in init:
        init_kw["kind"] = init["kind"]
    if "edge_exponents" in init:
        try:
            init_kw["edge_exponents"] = tuple(int(t) for t in init["edge_exponents"].split())
        except ValueError as exc:
            raise loc.error("init", "edge_exponents", str(exc)) from None
    if "sigma" in init:
        init_kw["sigma"] = init["sigma"]
    try:
        init_scheme = InitScheme(**init_kw)
    except ConfigError as exc:
        raise loc.error("init", None, str(exc)) from None

    return TrainingConfig(network, ppo_cfg, env_cfg, init_scheme, stages, run.get("seed", 0),
                          run.get("checkpoint_every", 50), name)


def resolve_config_path(path) -> Path:
    """Accept a path, or the bare name of a config shipped with the package."""
    p = Path(path)
    if p.exists():
        return p
    shipped = CONFIG_DIR / p.name
    if shipped.exists():
        return shipped
    raise ConfigError(f"config file not found: {path}")


def load_training_config(path) -> TrainingConfig:
    p = resolve_config_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_training_config(text, str(p))
