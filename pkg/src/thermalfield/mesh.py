"""Heat-source surface extraction from density lattices via marching cubes, plus PLY I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._mc_tables import CORNERS, EDGES, TRIANGLES
from .archive import read_archive, write_archive
from .geometry import SceneBox

_CORNERS = np.array(CORNERS)
_EDGE_START = np.array([np.minimum(_CORNERS[a], _CORNERS[b]) for a, b in EDGES])
_EDGE_AXIS = np.array([int(np.argmax(np.abs(_CORNERS[b] - _CORNERS[a]))) for a, b in EDGES])
_TRI = np.full((256, 15), -1, dtype=np.intp)
for _case, _tris in enumerate(TRIANGLES):
    _TRI[_case, : len(_tris)] = _tris
_N_TRI = np.array([len(t) // 3 for t in TRIANGLES])


@dataclass
class DensityGrid:
    resolution: tuple[int, int, int]
    box: SceneBox
    values: np.ndarray  # (nx, ny, nz), C order

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in self.resolution)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(self.resolution)

    @property
    def spacing(self) -> np.ndarray:
        return (self.box.max_corner - self.box.min_corner) / (np.array(self.resolution) - 1)


def save_density_grid(path: str | Path, grid: DensityGrid) -> None:
    meta = {
        "resolution": list(grid.resolution),
        "box": {"min": grid.box.min_corner.tolist(), "max": grid.box.max_corner.tolist()},
    }
    write_archive(path, "density_grid", meta, {"density": grid.values})


def load_density_grid(path: str | Path) -> DensityGrid:
    meta, arrays = read_archive(path, "density_grid")
    box = SceneBox(np.array(meta["box"]["min"]), np.array(meta["box"]["max"]))
    return DensityGrid(tuple(meta["resolution"]), box, arrays["density"])


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int
    scalars: np.ndarray | None = None  # (V,)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return np.cross(b - a, c - a)


def default_iso(grid: DensityGrid) -> float:
    """Half of the 99th-percentile density."""
    return 0.5 * float(np.percentile(grid.values, 99))


def marching_cubes(grid: DensityGrid, iso: float, min_area: float = 1e-12) -> TriangleMesh:
    """Polygonize the ``iso`` level set of a density lattice.

    Vertices are shared between cubes through their lattice edge, and faces
    are wound so normals point toward decreasing density.
    """
    v = grid.values
    nx, ny, nz = v.shape
    below = v < iso
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.intp)
    for k, (i, j, l) in enumerate(CORNERS):
        case |= below[i : nx - 1 + i, j : ny - 1 + j, l : nz - 1 + l].astype(np.intp) << k
    active = np.nonzero(_N_TRI[case] > 0)
    if len(active[0]) == 0:
        return TriangleMesh.empty()
    cubes = np.stack(active, axis=1)  # (K, 3)
    local = _TRI[case[active]]  # (K, 15)
    valid = local >= 0
    cube_of = np.broadcast_to(np.arange(len(cubes))[:, None], local.shape)[valid]
    edge = local[valid]
    start = cubes[cube_of] + _EDGE_START[edge]
    axis = _EDGE_AXIS[edge]
    edge_id = ((start[:, 0] * ny + start[:, 1]) * nz + start[:, 2]) * 3 + axis
    uniq, inverse = np.unique(edge_id, return_inverse=True)

    p0 = np.stack(np.unravel_index(uniq // 3, v.shape), axis=1)
    ax = uniq % 3
    p1 = p0.copy()
    p1[np.arange(len(ax)), ax] += 1
    v0 = v[tuple(p0.T)]
    v1 = v[tuple(p1.T)]
    frac = (iso - v0) / (v1 - v0)
    lattice = p0.astype(np.float64)
    lattice[np.arange(len(ax)), ax] += frac
    vertices = grid.box.min_corner + lattice * grid.spacing

    # with corner bits set below iso, the table winding faces low density
    tris = inverse.reshape(-1, 3).astype(np.int64)
    return _collapse_degenerate(vertices, tris, min_area)


def _triangle_areas(vertices, tris):
    a, b, c = (vertices[tris[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _collapse_degenerate(vertices, tris, min_area: float) -> TriangleMesh:
    """Remove slivers by collapsing their shortest edge, which keeps the surface closed."""
    parent = np.arange(len(vertices))

    def root(i):
        while parent[i] != i:
            i = parent[i]
        return i

    while len(tris):
        bad = np.nonzero(_triangle_areas(vertices, tris) <= min_area)[0]
        if not len(bad):
            break
        for f in bad:
            a, b, c = (root(i) for i in tris[f])
            if a == b or b == c or a == c:
                continue
            pairs = [(a, b), (b, c), (c, a)]
            p, q = min(pairs, key=lambda e: np.linalg.norm(vertices[e[0]] - vertices[e[1]]))
            parent[max(p, q)] = min(p, q)
        roots = np.array([root(i) for i in range(len(parent))])
        tris = roots[tris]
        keep = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
        tris = tris[keep]
    used, compact = np.unique(tris, return_inverse=True)
    return TriangleMesh(vertices[used], compact.reshape(-1, 3).astype(np.int64))


@dataclass
class WatertightReport:
    watertight: bool
    edges: int
    boundary_edges: int
    nonmanifold_edges: int


def watertight_check(mesh: TriangleMesh) -> WatertightReport:
    """True iff every undirected edge borders exactly two triangles."""
    t = mesh.triangles
    if len(t) == 0:
        return WatertightReport(False, 0, 0, 0)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    boundary = int(np.sum(counts == 1))
    nonmanifold = int(np.sum(counts > 2))
    return WatertightReport(boundary == 0 and nonmanifold == 0, len(counts), boundary, nonmanifold)


def export_mesh(mesh: TriangleMesh, path: str | Path) -> None:
    """Write an ASCII PLY 1.0 file (optional per-vertex ``thermal`` property)."""
    path = Path(path)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if mesh.scalars is not None:
        lines.append("property double thermal")
    lines += [f"element face {len(mesh.triangles)}", "property list uchar int vertex_indices", "end_header"]
    cols = mesh.vertices if mesh.scalars is None else np.column_stack([mesh.vertices, mesh.scalars])
    lines += [" ".join(f"{c:.17g}" for c in row) for row in cols]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write mesh to {path}: {exc}") from exc


def read_ply(path: str | Path) -> TriangleMesh:
    """Read back an ASCII PLY written by :func:`export_mesh`."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vert = n_face = 0
    props = []
    i = 1
    while text[i] != "end_header":
        parts = text[i].split()
        if parts[0] == "element" and parts[1] == "vertex":
            n_vert = int(parts[2])
        elif parts[0] == "element" and parts[1] == "face":
            n_face = int(parts[2])
        elif parts[0] == "property" and parts[1] != "list":
            props.append(parts[-1])
        i += 1
    body = text[i + 1 :]
    verts = np.array([[float(x) for x in line.split()] for line in body[:n_vert]]).reshape(n_vert, len(props))
    faces = np.array([[int(x) for x in line.split()[1:4]] for line in body[n_vert : n_vert + n_face]], dtype=np.int64)
    scalars = verts[:, 3] if "thermal" in props else None
    return TriangleMesh(verts[:, :3], faces.reshape(n_face, 3), scalars)
