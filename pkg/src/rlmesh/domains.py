"""Domain and initial-mesh generators.

Random numbers come from numpy's PCG64 generator seeded with an integer,
which gives the same streams on every platform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Polygon, InvalidPolygon, is_simple, on_boundary, points_in_polygon
from .mesh_state import SizeField

SPLIT_LENGTH = 1.4


class ConfigError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class PolygonSpec:
    sides: int
    scale: float
    seed: int = 0

    def __post_init__(self):
        if self.sides < 3:
            raise ConfigError("a polygon needs at least 3 sides")
        if self.scale <= 0:
            raise ConfigError("polygon scale must be positive")


def random_polygon(spec: PolygonSpec, rng: np.random.Generator | None = None) -> Polygon:
    """Star-shaped random polygon: k radii in [0.6, 1] at increasing polar
    angles, scaled by ``spec.scale``.

    The first vertex sits at angle 0; the angular gaps are k i.i.d. uniforms
    normalized to 2*pi, of which the first k-1 place vertices 2..k and the
    last closes the loop. Draws that come out non-simple or clockwise (possible
    when one gap exceeds pi) are redrawn.
    """
    rng = make_rng(spec.seed) if rng is None else rng
    k = spec.sides
    while True:
        radii = rng.uniform(0.6, 1.0, size=k)
        gaps = rng.uniform(0.0, 1.0, size=k)
        if gaps.sum() <= 0:
            continue
        gaps *= 2 * math.pi / gaps.sum()
        theta = np.concatenate([[0.0], np.cumsum(gaps[:-1])])
        v = spec.scale * np.c_[radii * np.cos(theta), radii * np.sin(theta)]
        if np.min(np.linalg.norm(v - np.roll(v, -1, axis=0), axis=1)) <= 1e-9 * spec.scale:
            continue
        x, y = v[:, 0], v[:, 1]
        if np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)) <= 0:
            continue
        if is_simple(v):
            try:
                return Polygon(v)
            except InvalidPolygon:
                continue


def subdivide_boundary(poly: Polygon, split: float = SPLIT_LENGTH) -> Polygon:
    """Split every edge into max(ceil(|e|/split), 1) equal segments."""
    v = poly.vertices
    out = []
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        n = max(math.ceil(np.linalg.norm(b - a) / split), 1)
        out.append(a)
        for j in range(1, n):
            out.append(a + (b - a) * (j / n))
    return Polygon(v, np.array(out))


def sample_polygon(sides: tuple[int, int], scale: float, rng: np.random.Generator) -> Polygon:
    """Random subdivided polygon with a side count uniform in ``sides`` (inclusive)."""
    k = int(rng.integers(sides[0], sides[1] + 1))
    return subdivide_boundary(random_polygon(PolygonSpec(k, scale), rng))


INIT_KINDS = ("boundary-only", "uniform-grid", "perturbed-grid", "imported-mesh")


@dataclass(frozen=True)
class InitScheme:
    """How to build the initial vertex set.

    ``edge_exponents`` gives the set of m for lattice edge length 2**m;
    one is drawn per polygon. ``sigma`` overrides the perturbation standard
    deviation (default sqrt(edge length)).
    """

    kind: str = "boundary-only"
    edge_exponents: tuple[int, ...] = (0,)
    sigma: float | None = None
    mesh_path: str | None = None

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigError(f"unknown init scheme {self.kind!r}")
        if self.kind == "imported-mesh" and not self.mesh_path:
            raise ConfigError("imported-mesh init needs a mesh path")
        if not self.edge_exponents:
            raise ConfigError("edge_exponents must not be empty")


def lattice_points(poly: Polygon, edge: float) -> np.ndarray:
    """Equilateral lattice with spacing ``edge``, strictly inside ``poly``."""
    lo, hi = poly.vertices.min(axis=0), poly.vertices.max(axis=0)
    dy = edge * math.sqrt(3.0) / 2.0
    rows = np.arange(lo[1], hi[1] + dy, dy)
    pts = []
    for r, y in enumerate(rows):
        xs = np.arange(lo[0] + (edge / 2.0 if r % 2 else 0.0), hi[0] + edge, edge)
        pts.append(np.c_[xs, np.full(len(xs), y)])
    pts = np.concatenate(pts)
    keep = points_in_polygon(pts, poly) & ~on_boundary(pts, poly)
    return pts[keep]


def make_initial_points(poly: Polygon, scheme: InitScheme = InitScheme(), rng: np.random.Generator | None = None):
    """Initial point list (boundary points first) and boundary flags."""
    rng = make_rng(0) if rng is None else rng
    bp = poly.boundary_points
    if scheme.kind == "boundary-only":
        pts = bp.copy()
    elif scheme.kind in ("uniform-grid", "perturbed-grid"):
        m = scheme.edge_exponents[int(rng.integers(len(scheme.edge_exponents)))]
        edge = 2.0 ** m
        lat = lattice_points(poly, edge)
        if scheme.kind == "perturbed-grid":
            sigma = math.sqrt(edge) if scheme.sigma is None else scheme.sigma
            moved = lat + sigma * rng.standard_normal(lat.shape)
            ok = points_in_polygon(moved, poly) & ~on_boundary(moved, poly)
            lat = np.where(ok[:, None], moved, lat)
        pts = np.concatenate([bp, lat])
    else:
        from .mesh_file import read_mesh

        pts = read_mesh(scheme.mesh_path).points
    return pts, on_boundary(pts, poly)


def size_field_catalog(name: str) -> SizeField:
    if name == "constant":
        return SizeField("constant", (1.0,))
    if name == "chip":
        return SizeField("chip", (40.0,))
    if name == "ring":
        return SizeField("ring", (5.0, 4.0, 20.0))
    raise ConfigError(f"unknown size field {name!r}; choose constant, chip or ring")


def chip_polygon() -> Polygon:
    """Chip-outline test domain: an 80 x 60 rectangle centred at the origin
    with chamfered corners and a notch on each long side."""
    return Polygon([
        (-35, -30), (-8, -30), (-8, -24), (8, -24), (8, -30), (35, -30),
        (40, -25), (40, 25), (35, 30), (8, 30), (8, 24), (-8, 24), (-8, 30),
        (-35, 30), (-40, 25), (-40, -25),
    ])


def ring_polygon(radius: float = 40.0, sides: int = 64) -> Polygon:
    th = np.linspace(0.0, 2 * math.pi, sides, endpoint=False)
    return Polygon(radius * np.c_[np.cos(th), np.sin(th)])


def write_polygon(poly: Polygon, path) -> None:
    lines = [str(len(poly.vertices))] + [f"{x!r} {y!r}" for x, y in poly.vertices.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_polygon(path) -> Polygon:
    """Polygon fixture: vertex count on the first line, then ``x y`` lines."""
    text = Path(path).read_text().split("\n")
    text = [ln for ln in text if ln.strip() and not ln.startswith("#")]
    try:
        n = int(text[0])
        v = np.array([[float(t) for t in ln.split()] for ln in text[1 : n + 1]])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed polygon file ({exc})") from exc
    if v.shape != (n, 2):
        raise ConfigError(f"{path}: expected {n} vertex lines")
    return Polygon(v)


EVAL_DIR = Path(__file__).parent / "data" / "eval_polygons"


def eval_polygon_seeds() -> list[int]:
    return [int(s) for s in (EVAL_DIR / "seeds.txt").read_text().split()]


def generate_eval_polygon(seed: int, sides=(10, 40), scale: float = 10.0) -> Polygon:
    rng = make_rng(seed)
    k = int(rng.integers(sides[0], sides[1] + 1))
    return random_polygon(PolygonSpec(k, scale, seed), rng)


def load_eval_polygons() -> list[Polygon]:
    """The frozen evaluation set, subdivided."""
    files = sorted(EVAL_DIR.glob("poly_*.txt"))
    return [subdivide_boundary(read_polygon(f)) for f in files]


def write_eval_polygons(seeds, directory=EVAL_DIR) -> None:
    """Regenerate the frozen evaluation fixtures from a seed list."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "seeds.txt").write_text("\n".join(str(s) for s in seeds) + "\n")
    for i, s in enumerate(seeds):
        write_polygon(generate_eval_polygon(s), directory / f"poly_{i:02d}.txt")
