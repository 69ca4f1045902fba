import json
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import ray_cast_inside
from rlmesh.cli import main
from rlmesh.domains import read_polygon, subdivide_boundary
from rlmesh.mesh_file import read_mesh
from rlmesh.network import NetworkParams, load_checkpoint

HERE = Path(__file__).parent
CKPT = str(HERE / "fixtures" / "init_seed123.ckpt")
SMALL = str(HERE / "fixtures" / "mesh_small.txt")

TINY_CFG = """
[ppo]
minibatch_size = 8
workers = 1
[run]
seed = 4
checkpoint_every = 1
[stage 1]
polygon_scale = 2
side_range = 5-6
trajectory_length = 2
entropy_coef = 1e-2
learning_rate = 1e-3
ppo_epsilon = 0.2
num_iterations = {n}
epochs = 1
trajectories = 3
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def tri_file(tmp_path):
    p = tmp_path / "tri.txt"
    p.write_text("3\n0 0\n4 0\n1 3\n")
    return p


def test_mesh_triangle_domain(capsys, tmp_path, tri_file):
    code, out, _ = run(capsys, "mesh", "--checkpoint", CKPT, "--polygon", tri_file, "--steps", 4,
                       "--out", tmp_path / "m.txt", "--svg", tmp_path / "m.svg", "--color", "element-quality",
                       "--frames", tmp_path / "frames", "--trace", tmp_path / "trace.txt")
    assert code == 0
    info = json.loads(out)
    assert len(info["nodes_per_step"]) == 5
    m = read_mesh(tmp_path / "m.txt")
    ring = read_polygon(tri_file).vertices
    for t in m.triangles:
        assert ray_cast_inside(m.points[t].mean(axis=0), ring)
    assert (tmp_path / "m.svg").read_text().startswith("<?xml")
    assert len(list((tmp_path / "frames").glob("step_*.svg"))) == 5
    assert (tmp_path / "trace.txt").stat().st_size > 0


def test_mesh_zero_steps_is_boundary_only(capsys, tmp_path, tri_file):
    code, out, _ = run(capsys, "mesh", "--checkpoint", CKPT, "--polygon", tri_file, "--steps", 0, "--out", tmp_path / "m.txt")
    assert code == 0
    m = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(m.points, subdivide_boundary(read_polygon(tri_file)).boundary_points)
    assert m.boundary.all()


def test_mesh_reproducible(capsys, tmp_path):
    outs = []
    for k in range(2):
        code, out, _ = run(capsys, "mesh", "--checkpoint", CKPT, "--domain", "random", "--sides", 7, "--scale", 4,
                           "--mode", "stochastic", "--seed", 9, "--steps", 3, "--out", tmp_path / f"m{k}.txt")
        assert code == 0
        outs.append(((tmp_path / f"m{k}.txt").read_bytes(), out))
    assert outs[0] == outs[1]


def test_improve_zero_steps_round_trip(capsys, tmp_path):
    code, out, _ = run(capsys, "improve", "--checkpoint", CKPT, "--mesh", SMALL, "--steps", 0,
                       "--out", tmp_path / "o.txt", "--report", tmp_path / "r.json")
    assert code == 0
    assert (tmp_path / "o.txt").read_bytes() == Path(SMALL).read_bytes()
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["before"] == rep["after"]


def test_improve_runs(capsys, tmp_path):
    code, out, _ = run(capsys, "improve", "--checkpoint", CKPT, "--mesh", SMALL, "--steps", 2, "--out", tmp_path / "o.txt")
    assert code == 0
    assert set(json.loads(out)) == {"before", "after"}


def test_improve_inconsistent_flags(capsys, tmp_path):
    lines = Path(SMALL).read_text().splitlines()
    n = int(lines[0].split()[1])
    for i in range(1, n + 1):
        x, y, b = lines[i].split()
        if b == "0":
            lines[i] = f"{x} {y} 1"
            break
    (tmp_path / "bad.txt").write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "improve", "--checkpoint", CKPT, "--mesh", tmp_path / "bad.txt", "--out", tmp_path / "o.txt")
    assert code == 2 and "boundary flags" in err


def test_eval_matches_golden_row(capsys, tmp_path):
    code, out, _ = run(capsys, "eval", "--checkpoint", CKPT, "--polygons", HERE / "fixtures" / "polygons",
                       "--steps", 3, "--csv", tmp_path / "t.csv", "--table", tmp_path / "t.txt")
    assert code == 0
    golden = (HERE / "golden" / "eval_fixture.csv").read_text().splitlines()
    assert (tmp_path / "t.csv").read_text().splitlines() == golden[:2]
    assert out == (tmp_path / "t.txt").read_text()


def test_eval_improvement_rows(capsys, tmp_path):
    code, _, _ = run(capsys, "eval", "--checkpoint", CKPT, "--polygons", HERE / "fixtures" / "polygons", "--steps", 3,
                     "--init", "uniform-grid", "--edge-exponents", -1, "--label", "init_seed123 improve",
                     "--csv", tmp_path / "t.csv")
    assert code == 0
    golden = (HERE / "golden" / "eval_fixture.csv").read_text().splitlines()
    assert (tmp_path / "t.csv").read_text().splitlines() == [golden[0]] + golden[2:]


def test_render_golden(capsys, tmp_path):
    code, _, _ = run(capsys, "render", "--mesh", SMALL, "--color", "element-volume", "--out", tmp_path / "r.svg")
    assert code == 0
    assert (tmp_path / "r.svg").read_text() == (HERE / "golden" / "mesh_small_element-volume.svg").read_text()


def test_train_zero_iterations_keeps_init(capsys, tmp_path):
    (tmp_path / "c.cfg").write_text(TINY_CFG.format(n=0))
    code, _, _ = run(capsys, "train", "--config", tmp_path / "c.cfg", "--out", tmp_path / "run")
    assert code == 0
    params, meta = load_checkpoint(tmp_path / "run" / "final.ckpt")
    init = NetworkParams(seed=4)
    assert all(torch.equal(a, b) for (_, a), (_, b) in zip(params.named_tensors(), init.named_tensors()))
    assert meta["iterations"] == 0


def test_train_deterministic(capsys, tmp_path):
    (tmp_path / "c.cfg").write_text(TINY_CFG.format(n=2))
    logs = []
    for k in range(2):
        assert run(capsys, "train", "--config", tmp_path / "c.cfg", "--seed", 7, "--out", tmp_path / f"r{k}")[0] == 0
        rows = (tmp_path / f"r{k}" / "log.csv").read_text().splitlines()
        logs.append([",".join(r.split(",")[:-1]) for r in rows])  # drop wall_time
        assert (tmp_path / f"r{k}" / "stage_1.svg").exists()
        assert sorted(p.name for p in (tmp_path / f"r{k}" / "checkpoints").iterdir()) == ["iter_00001.ckpt", "iter_00002.ckpt"]
    assert logs[0] == logs[1] and len(logs[0]) == 3
    a = (tmp_path / "r0" / "final.ckpt").read_bytes()
    assert a == (tmp_path / "r1" / "final.ckpt").read_bytes()


@pytest.mark.parametrize(
    "argv, code",
    [
        (["mesh", "--checkpoint", "/nonexistent.ckpt", "--out", "x.txt"], 2),
        (["train", "--config", "/nonexistent.cfg"], 2),
        (["improve", "--checkpoint", CKPT, "--mesh", "/nonexistent/m.txt", "--out", "x.txt"], 3),
        (["render", "--mesh", "/nonexistent/m.txt", "--out", "x.svg"], 3),
        (["eval", "--checkpoint", CKPT, "--polygons", "/nonexistent"], 2),
    ],
)
def test_exit_codes(capsys, tmp_path, monkeypatch, argv, code):
    monkeypatch.chdir(tmp_path)
    got, _, err = run(capsys, *argv)
    assert got == code and err.startswith("error:")


def test_bad_config_diagnostic(capsys, tmp_path):
    (tmp_path / "c.cfg").write_text(TINY_CFG.format(n=1).replace("epochs = 1", "epochs = one"))
    code, _, err = run(capsys, "train", "--config", tmp_path / "c.cfg", "--out", tmp_path / "r")
    assert code == 2 and "[stage 1] epochs" in err


def test_corrupt_checkpoint(capsys, tmp_path):
    (tmp_path / "c.ckpt").write_bytes(b"garbage")
    code, _, _ = run(capsys, "mesh", "--checkpoint", tmp_path / "c.ckpt", "--out", tmp_path / "m.txt")
    assert code == 2


def test_unwritable_output(capsys, tmp_path, tri_file):
    code, _, _ = run(capsys, "mesh", "--checkpoint", CKPT, "--polygon", tri_file, "--steps", 0,
                     "--out", tmp_path / "missing_dir" / "m.txt")
    assert code == 3


def test_numerical_failure(capsys, tmp_path):
    # collinear vertices admit no triangle
    (tmp_path / "flat.txt").write_text("RLMESH 3 1\n0 0 1\n1 0 1\n2 0 1\n0 1 2\n")
    (tmp_path / "tri.txt").write_text("3\n0 0\n2 0\n1 1\n")
    code, _, err = run(capsys, "improve", "--checkpoint", CKPT, "--mesh", tmp_path / "flat.txt",
                       "--polygon", tmp_path / "tri.txt", "--out", tmp_path / "o.txt")
    assert code == 4 and "numerical failure" in err
