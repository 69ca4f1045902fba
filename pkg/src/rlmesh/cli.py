"""Command-line entry points: train, mesh, improve, eval, render.

Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .domains import (
    ConfigError,
    InitScheme,
    PolygonSpec,
    chip_polygon,
    load_eval_polygons,
    make_rng,
    random_polygon,
    read_polygon,
    ring_polygon,
    size_field_catalog,
    subdivide_boundary,
)
from .environment import EnvConfig, TraceWriter, rollout_batch
from .evaluation import COLUMNS, EvalProtocol, EvalTable, evaluate_model, improvement_eval
from .geometry import DegenerateInput, DegenerateTriangle, InvalidPolygon
from .mesh_file import MeshFile, MeshFileError, ValidationError, check_flags, mesh_polygon, read_mesh, write_mesh
from .mesh_state import build_state
from .network import CheckpointError, NetworkParams, load_checkpoint, save_checkpoint
from .quality import EmptyMesh, mesh_score
from .render import render_svg

log = logging.getLogger("rlmesh")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


CHECKPOINT_DIR = Path(__file__).parent / "data" / "checkpoints"


def resolve_checkpoint(path) -> Path:
    """Accept a path, or the name of a checkpoint shipped with the package
    (``baseline`` or ``baseline.ckpt``)."""
    p = Path(path)
    if p.exists():
        return p
    for cand in (CHECKPOINT_DIR / p.name, CHECKPOINT_DIR / f"{p.name}.ckpt"):
        if cand.exists():
            return cand
    raise ConfigError(f"checkpoint not found: {path}")


def _load_params(path) -> NetworkParams:
    path = resolve_checkpoint(path)
    try:
        return load_checkpoint(path)[0]
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc


def _polygon(args):
    if args.polygon:
        poly = read_polygon(args.polygon)
    elif args.domain == "chip":
        poly = chip_polygon()
    elif args.domain == "ring":
        poly = ring_polygon()
    else:
        poly = random_polygon(PolygonSpec(args.sides, args.scale, args.poly_seed))
    return subdivide_boundary(poly)


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise MeshFileError(f"cannot write {path}: {exc}") from exc


def _report_dict(report) -> dict:
    return {"score": report.score, **report.row()}


def cmd_train(args) -> int:
    from .config import load_training_config
    from .trainer import DomainSampler, run_curriculum

    cfg = load_training_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(1)
    params = NetworkParams(cfg.network, seed=seed)
    ends = np.cumsum([s.num_iterations for s in cfg.stages])

    def sample_mesh(row, p):
        k = row["stage"]
        if row["iteration"] != ends[k - 1]:
            return
        st = cfg.stages[k - 1]
        start = DomainSampler(st.polygon_scale, tuple(st.side_range), cfg.init)(make_rng(seed + 1000 + k))
        env = EnvConfig(cfg.env.nu, st.trajectory_length, cfg.env.weights, cfg.env.size)
        tr = rollout_batch([start], p, env, make_rng(0), deterministic=True, with_values=False)[0]
        s = tr.final_state
        _write_text(out / f"stage_{k}.svg", render_svg(s.points, s.triangles, s.polygon))

    run = run_curriculum(cfg.stages, params, cfg.ppo, cfg.env, cfg.init, seed=seed, log_path=out / "log.csv",
                         checkpoint_dir=out / "checkpoints", checkpoint_every=cfg.checkpoint_every, callback=sample_mesh)
    meta = {"config": Path(cfg.source).name, "seed": seed, "iterations": len(run.log),
            "gamma": cfg.ppo.gamma, "lam": cfg.ppo.lam, "minibatch_size": cfg.ppo.minibatch_size}
    save_checkpoint(params, out / "final.ckpt", meta)
    print(f"wrote {out / 'final.ckpt'} after {len(run.log)} iterations")
    return EXIT_OK


def _frames_writer(frames_dir):
    if not frames_dir:
        return None
    d = Path(frames_dir)
    d.mkdir(parents=True, exist_ok=True)

    def write(t, state):
        _write_text(d / f"step_{t:03d}.svg", render_svg(state.points, state.triangles, state.polygon))

    return write


def _trace(args):
    if not getattr(args, "trace", None):
        return None, None
    fh = open(args.trace, "w")
    return TraceWriter(fh), fh


def cmd_mesh(args) -> int:
    params = _load_params(args.checkpoint)
    poly = _polygon(args)
    size = size_field_catalog(args.size_field)
    env = EnvConfig(max_steps=args.steps, size=size)
    trace, fh = _trace(args)
    try:
        tr = rollout_batch([build_state(poly.boundary_points, poly)], params, env, make_rng(args.seed),
                           deterministic=args.mode == "deterministic", with_values=False, trace=trace)[0]
    finally:
        if fh:
            fh.close()
    frames = _frames_writer(args.frames)
    if frames:
        for t, s in enumerate(tr.states):
            frames(t, s)
    final = tr.final_state
    write_mesh(MeshFile.from_state(final), args.out)
    if args.svg:
        _write_text(args.svg, render_svg(final.points, final.triangles, poly, args.color, size))
    nodes = [s.n_points for s in tr.states]
    print(json.dumps({"nodes_per_step": nodes, **_report_dict(mesh_score(final, env.weights, size)[1])}))
    return EXIT_OK


def cmd_improve(args) -> int:
    params = _load_params(args.checkpoint)
    mesh = read_mesh(args.mesh)
    poly = subdivide_boundary(read_polygon(args.polygon)) if args.polygon else mesh_polygon(mesh)
    check_flags(mesh, poly)
    size = size_field_catalog(args.size_field)
    env = EnvConfig(max_steps=args.steps, size=size)
    start = build_state(mesh.points, poly)
    before = mesh_score(start, env.weights, size)[1]
    if args.steps == 0:
        out_mesh, after = mesh, before
    else:
        tr = rollout_batch([start], params, env, make_rng(args.seed), deterministic=args.mode == "deterministic",
                           with_values=False)[0]
        out_mesh = MeshFile.from_state(tr.final_state)
        after = mesh_score(tr.final_state, env.weights, size)[1]
    write_mesh(out_mesh, args.out)
    report = {"before": _report_dict(before), "after": _report_dict(after)}
    if args.report:
        _write_text(args.report, json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return EXIT_OK


def cmd_eval(args) -> int:
    params = _load_params(args.checkpoint)
    polys = None
    if args.polygons:
        files = sorted(Path(args.polygons).glob("*.txt"))
        files = [f for f in files if f.name != "seeds.txt"]
        if not files:
            raise ConfigError(f"no polygon files in {args.polygons}")
        polys = tuple(subdivide_boundary(read_polygon(f)) for f in files)
    protocol = EvalProtocol(polys, args.steps, args.mode, args.seed, size=size_field_catalog(args.size_field))
    table = EvalTable()
    label = args.label or Path(args.checkpoint).stem
    if args.init == "boundary-only":
        row, _, _ = evaluate_model(params, protocol)
        table.add(label, row)
    else:
        init = InitScheme(args.init, tuple(args.edge_exponents))
        before, after, _, _ = improvement_eval(params, init, protocol)
        table.add(f"{args.init} (initial)", before)
        table.add(label, after)
    if args.csv:
        _write_text(args.csv, table.to_csv())
    if args.table:
        _write_text(args.table, table.to_text())
    sys.stdout.write(table.to_text())
    return EXIT_OK


def cmd_render(args) -> int:
    mesh = read_mesh(args.mesh)
    if args.polygon:
        outline = read_polygon(args.polygon)
    elif len(mesh.triangles):
        outline = mesh_polygon(mesh)
    else:
        outline = mesh.points[mesh.boundary]
    svg = render_svg(mesh.points, mesh.triangles, outline, args.color, size_field_catalog(args.size_field))
    _write_text(args.out, svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlmesh", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a training curriculum")
    t.add_argument("--config", required=True, help="config path or shipped name (curriculum_paper.cfg, curriculum_desk.cfg)")
    t.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    t.add_argument("--out", default="train_out", help="output directory")
    t.set_defaults(func=cmd_train)

    def rollout_flags(q, steps):
        q.add_argument("--checkpoint", required=True, help="checkpoint path or shipped name (baseline)")
        q.add_argument("--steps", type=int, default=steps)
        q.add_argument("--mode", choices=("deterministic", "stochastic"), default="deterministic")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--size-field", default="constant", choices=("constant", "chip", "ring"))

    m = sub.add_parser("mesh", help="mesh a polygon from its boundary")
    rollout_flags(m, 15)
    src = m.add_mutually_exclusive_group()
    src.add_argument("--polygon", help="polygon fixture file")
    src.add_argument("--domain", choices=("random", "chip", "ring"), default="random")
    m.add_argument("--sides", type=int, default=20)
    m.add_argument("--scale", type=float, default=10.0)
    m.add_argument("--poly-seed", type=int, default=0)
    m.add_argument("--out", required=True, help="mesh file to write")
    m.add_argument("--svg", help="SVG of the final mesh")
    m.add_argument("--color", choices=("none", "element-volume", "element-quality"), default="none")
    m.add_argument("--frames", help="directory for per-step SVG frames")
    m.add_argument("--trace", help="write decoded edits to this file")
    m.set_defaults(func=cmd_mesh)

    i = sub.add_parser("improve", help="improve an existing mesh")
    rollout_flags(i, 15)
    i.add_argument("--mesh", required=True)
    i.add_argument("--polygon", help="domain polygon (default: mesh boundary)")
    i.add_argument("--out", required=True)
    i.add_argument("--report", help="JSON before/after report")
    i.set_defaults(func=cmd_improve)

    e = sub.add_parser("eval", help="evaluate on the frozen test set")
    rollout_flags(e, 15)
    e.add_argument("--polygons", help="directory of polygon fixtures (default: shipped set)")
    e.add_argument("--init", choices=("boundary-only", "uniform-grid", "perturbed-grid"), default="boundary-only")
    e.add_argument("--edge-exponents", type=int, nargs="+", default=[0])
    e.add_argument("--label")
    e.add_argument("--csv")
    e.add_argument("--table")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render a mesh file as SVG")
    r.add_argument("--mesh", required=True)
    r.add_argument("--polygon")
    r.add_argument("--color", choices=("none", "element-volume", "element-quality"), default="none")
    r.add_argument("--size-field", default="constant", choices=("constant", "chip", "ring"))
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (EmptyMesh, DegenerateTriangle, DegenerateInput, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValidationError, InvalidPolygon, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
