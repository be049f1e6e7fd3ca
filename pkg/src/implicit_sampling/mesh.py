"""Triangle meshes, mesh I/O and a BVH for exact distance and inside queries.

All queries are batched over ``(N, 3)`` arrays of points.  The hierarchy is
stored as flat arrays and traversed breadth-first for a whole batch at once,
which keeps the Python-level loop count proportional to tree depth rather than
to the number of points.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from ._rng import as_generator


class MeshError(ValueError):
    """Base class for invalid meshes and unreadable mesh files."""


class MeshParseError(MeshError):
    pass


class MeshIndexError(MeshParseError):
    pass


class EmptyMeshError(MeshError):
    pass


class NonTriangleFaceError(MeshError):
    pass


class DegenerateMeshError(MeshError):
    pass


class IndeterminateParityError(RuntimeError):
    """Every vote ray grazed an edge or vertex, even after re-casting."""

    def __init__(self, indices):
        self.indices = np.asarray(indices)
        super().__init__(
            f"inside/outside undetermined for {self.indices.size} point(s), "
            f"first index {int(self.indices[0]) if self.indices.size else -1}"
        )


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshIndexError(
                f"triangle index out of range: max {t.max()} with {len(v)} vertices"
            )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    @cached_property
    def corners(self) -> np.ndarray:
        """``(T, 3, 3)`` triangle corner positions."""
        return self.vertices[self.triangles]

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit face normals (right-hand rule); zero rows for degenerate faces."""
        n = self._cross
        length = np.linalg.norm(n, axis=1, keepdims=True)
        out = np.zeros_like(n)
        ok = length[:, 0] > 0
        out[ok] = n[ok] / length[ok]
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


class MeshReport(NamedTuple):
    boundary_edges: int
    degenerate_triangles: int

    @property
    def watertight(self) -> bool:
        return self.boundary_edges == 0


def validate(mesh: TriangleMesh) -> MeshReport:
    """Count edges not shared by exactly two triangles, and zero-area faces."""
    t = mesh.triangles
    if len(t) == 0:
        return MeshReport(0, 0)
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges.sort(axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return MeshReport(int(np.sum(counts != 2)), int(np.sum(mesh.areas <= 0)))


# ----------------------------------------------------------------------------
# I/O
# ----------------------------------------------------------------------------


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _faces_to_triangles(faces, triangulate: bool, where: str) -> list:
    tris = []
    for i, f in enumerate(faces):
        if len(f) < 3:
            raise MeshParseError(f"{where}: face {i} has {len(f)} vertices")
        if len(f) > 3 and not triangulate:
            raise NonTriangleFaceError(
                f"{where}: face {i} has {len(f)} vertices; pass triangulate=True to fan-split"
            )
        for k in range(1, len(f) - 1):
            tris.append((f[0], f[k], f[k + 1]))
    return tris


def _read_off(text: str, triangulate: bool, where: str):
    lines = [ln for ln in (_strip_comment(x) for x in text.splitlines()) if ln]
    if not lines or not lines[0].upper().startswith("OFF"):
        raise MeshParseError(f"{where}: missing OFF header")
    head = lines[0][3:].split()
    rest = lines[1:]
    if not head:
        if not rest:
            raise MeshParseError(f"{where}: missing element counts")
        head, rest = rest[0].split(), rest[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
    except (ValueError, IndexError) as exc:
        raise MeshParseError(f"{where}: bad element counts {head!r}") from exc
    if len(rest) < nv + nf:
        raise MeshParseError(f"{where}: expected {nv} vertices and {nf} faces, file is truncated")
    try:
        verts = [[float(x) for x in rest[i].split()[:3]] for i in range(nv)]
        faces = []
        for i in range(nf):
            tok = rest[nv + i].split()
            k = int(tok[0])
            if len(tok) < k + 1:
                raise MeshParseError(f"{where}: face {i} lists fewer than {k} indices")
            faces.append([int(x) for x in tok[1 : k + 1]])
    except ValueError as exc:
        raise MeshParseError(f"{where}: {exc}") from exc
    if any(len(v) != 3 for v in verts):
        raise MeshParseError(f"{where}: vertex with fewer than 3 coordinates")
    return verts, _faces_to_triangles(faces, triangulate, where)


def _read_obj(text: str, triangulate: bool, where: str):
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
                if len(verts[-1]) != 3:
                    raise MeshParseError(f"{where}:{lineno}: vertex needs 3 coordinates")
            elif tok[0] == "f":
                face = []
                for item in tok[1:]:
                    idx = int(item.split("/")[0])
                    face.append(idx - 1 if idx > 0 else len(verts) + idx)
                faces.append(face)
        except ValueError as exc:
            raise MeshParseError(f"{where}:{lineno}: {exc}") from exc
    return verts, _faces_to_triangles(faces, triangulate, where)


def load_mesh(path, format: str | None = None, triangulate: bool = False) -> TriangleMesh:
    """Read an OFF or OBJ (``v``/``f`` lines only) triangle mesh."""
    path = os.fspath(path)
    fmt = (format or os.path.splitext(path)[1].lstrip(".")).lower()
    if fmt not in ("off", "obj"):
        raise MeshParseError(f"{path}: unsupported mesh format {fmt!r}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    reader = _read_off if fmt == "off" else _read_obj
    verts, tris = reader(text, triangulate, path)
    if not verts or not tris:
        raise EmptyMeshError(f"{path}: mesh has {len(verts)} vertices and {len(tris)} faces")
    tris = np.asarray(tris, dtype=np.int64)
    if tris.min() < 0 or tris.max() >= len(verts):
        raise MeshIndexError(
            f"{path}: face references vertex {int(tris.max()) if tris.max() >= len(verts) else int(tris.min())}"
            f" but mesh has {len(verts)} vertices"
        )
    return TriangleMesh(np.asarray(verts, dtype=np.float64), tris)


def save_mesh(mesh: TriangleMesh, path, format: str | None = None, comment: str | None = None) -> None:
    """Write OFF or OBJ; ``comment`` lines are stored as ``#`` comments."""
    path = os.fspath(path)
    fmt = (format or os.path.splitext(path)[1].lstrip(".")).lower()
    notes = "".join(f"# {line}\n" for line in (comment or "").splitlines())
    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "off":
            fh.write(f"OFF\n{notes}{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
            for v in mesh.vertices:
                fh.write(" ".join(repr(float(x)) for x in v) + "\n")
            for t in mesh.triangles:
                fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        elif fmt == "obj":
            fh.write(notes)
            for v in mesh.vertices:
                fh.write("v " + " ".join(repr(float(x)) for x in v) + "\n")
            for t in mesh.triangles + 1:
                fh.write(f"f {t[0]} {t[1]} {t[2]}\n")
        else:
            raise MeshParseError(f"{path}: unsupported mesh format {fmt!r}")


def normalize(mesh: TriangleMesh, padding: float = 0.0) -> TriangleMesh:
    """Center the bounding box at the origin and scale the longest side to ``1 - 2*padding``."""
    if not 0.0 <= padding < 0.5:
        raise ValueError(f"padding must lie in [0, 0.5), got {padding}")
    if len(mesh.vertices) == 0:
        raise EmptyMeshError("cannot normalize an empty mesh")
    lo, hi = mesh.bounds()
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise DegenerateMeshError("mesh bounding box has zero extent")
    center = 0.5 * (lo + hi)
    scale = (1.0 - 2.0 * padding) / extent
    v = (mesh.vertices - center) * scale
    np.clip(v, -0.5, 0.5, out=v)  # guards against 1-ulp overshoot
    return TriangleMesh(v, mesh.triangles.copy())


# ----------------------------------------------------------------------------
# Mesh generators used for tests, oracles and analytic ground truth
# ----------------------------------------------------------------------------


def icosphere(radius: float = 0.4, subdivisions: int = 4, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.asarray(faces))


def box_mesh(center=(0.0, 0.0, 0.0), half_extents=(0.5, 0.5, 0.5)) -> TriangleMesh:
    h = np.asarray(half_extents, dtype=np.float64)
    corners = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64
    )
    v = corners * h + np.asarray(center, dtype=np.float64)
    # outward-facing, two triangles per face
    faces = [
        (0, 1, 3), (0, 3, 2),  # -x
        (4, 6, 7), (4, 7, 5),  # +x
        (0, 4, 5), (0, 5, 1),  # -y
        (2, 3, 7), (2, 7, 6),  # +y
        (0, 2, 6), (0, 6, 4),  # -z
        (1, 5, 7), (1, 7, 3),  # +z
    ]
    return TriangleMesh(v, np.asarray(faces))


def torus_mesh(major: float = 0.3, minor: float = 0.1, center=(0.0, 0.0, 0.0), nu: int = 96, nv: int = 48) -> TriangleMesh:
    """Torus around the z axis on an ``nu x nv`` parameter grid."""
    u = np.arange(nu) * (2 * np.pi / nu)
    w = np.arange(nv) * (2 * np.pi / nv)
    uu, ww = np.meshgrid(u, w, indexing="ij")
    ring = major + minor * np.cos(ww)
    v = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(ww)], axis=-1).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    a = i * nv + j
    b = ((i + 1) % nu) * nv + j
    c = ((i + 1) % nu) * nv + (j + 1) % nv
    d = i * nv + (j + 1) % nv
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return TriangleMesh(v + np.asarray(center, dtype=np.float64), tris)


# ----------------------------------------------------------------------------
# Point/triangle primitives
# ----------------------------------------------------------------------------


def _safe_div(num, den):
    out = np.zeros_like(num)
    ok = den != 0
    out[ok] = num[ok] / den[ok]
    return out


def closest_point_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest points on triangles ``(a, b, c)`` to ``p``; all inputs ``(K, 3)``.

    Voronoi-region classification of the query against the triangle's
    vertices, edges and face, evaluated branch-free over the batch.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    denom = va + vb + vc
    v = _safe_div(vb, denom)
    w = _safe_div(vc, denom)
    q = a + ab * v[:, None] + ac * w[:, None]

    # Region tests in reverse priority so earlier regions win.
    e_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    t = _safe_div(d4 - d3, (d4 - d3) + (d5 - d6))
    q = np.where(e_bc[:, None], b + (c - b) * t[:, None], q)
    e_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t = _safe_div(d2, d2 - d6)
    q = np.where(e_ac[:, None], a + ac * t[:, None], q)
    q = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, q)
    e_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t = _safe_div(d1, d1 - d3)
    q = np.where(e_ab[:, None], a + ab * t[:, None], q)
    q = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, q)
    q = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, q)
    return q


def _box_dist2(p, lo, hi):
    d = np.maximum(lo - p, 0.0) + np.maximum(p - hi, 0.0)
    return np.einsum("ij,ij->i", d, d)


# ----------------------------------------------------------------------------
# BVH
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpatialIndex:
    """Immutable bounding-volume hierarchy over a mesh's triangles.

    Node ``k`` is a leaf iff ``left[k] < 0``; its triangles are
    ``order[start[k] : start[k] + count[k]]``.  Node 0 is the root.
    """

    mesh: TriangleMesh
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    leaf_size: int = field(default=4)

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)


def build_index(mesh: TriangleMesh, leaf_size: int = 4) -> SpatialIndex:
    """Top-down median-split BVH over triangle centroids."""
    if mesh.is_empty:
        raise EmptyMeshError("cannot index an empty mesh")
    corners = mesh.corners
    tlo, thi = corners.min(axis=1), corners.max(axis=1)
    cent = corners.mean(axis=1)
    order = np.arange(len(corners))
    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        idx = order[s:e]
        lo.append(tlo[idx].min(axis=0))
        hi.append(thi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(left) - 1

    stack = [(new_node(0, len(order)), 0, len(order))]
    while stack:
        node, s, e = stack.pop()
        if e - s <= leaf_size:
            continue
        idx = order[s:e]
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        half = (e - s) // 2
        part = np.argpartition(c[:, axis], half, kind="introselect")
        order[s:e] = idx[part]
        m = s + half
        left[node] = new_node(s, m)
        right[node] = new_node(m, e)
        count[node] = 0
        stack.append((right[node], m, e))
        stack.append((left[node], s, m))

    return SpatialIndex(
        mesh=mesh,
        lo=np.asarray(lo),
        hi=np.asarray(hi),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        count=np.asarray(count, dtype=np.int64),
        order=order,
        leaf_size=leaf_size,
    )


def _expand_leaves(index: SpatialIndex, qi, nodes):
    """(query, leaf) pairs -> (query, triangle) pairs."""
    cnt = index.count[nodes]
    rep_q = np.repeat(qi, cnt)
    first = np.repeat(index.start[nodes], cnt)
    offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    return rep_q, index.order[first + offs]


class ClosestPoints(NamedTuple):
    points: np.ndarray
    distances: np.ndarray
    triangle_ids: np.ndarray


def _update_best(P, qi, tri, corners, best_d2, best_tri, best_q):
    if qi.size == 0:
        return
    c = corners[tri]
    q = closest_point_on_triangles(P[qi], c[:, 0], c[:, 1], c[:, 2])
    d = P[qi] - q
    d2 = np.einsum("ij,ij->i", d, d)
    o = np.lexsort((tri, d2, qi))
    qi, tri, q, d2 = qi[o], tri[o], q[o], d2[o]
    first = np.ones(qi.size, dtype=bool)
    first[1:] = qi[1:] != qi[:-1]
    qi, tri, q, d2 = qi[first], tri[first], q[first], d2[first]
    better = (d2 < best_d2[qi]) | ((d2 == best_d2[qi]) & (tri < best_tri[qi]))
    qi = qi[better]
    best_d2[qi] = d2[better]
    best_tri[qi] = tri[better]
    best_q[qi] = q[better]


def _closest_chunk(index: SpatialIndex, P):
    n = len(P)
    corners = index.mesh.corners
    best_d2 = np.full(n, np.inf)
    best_tri = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    best_q = np.zeros((n, 3))

    # Greedy descent gives every query a finite bound before the full sweep.
    node = np.zeros(n, dtype=np.int64)
    active = np.flatnonzero(index.left[node] >= 0)
    while active.size:
        l, r = index.left[node[active]], index.right[node[active]]
        pa = P[active]
        dl = _box_dist2(pa, index.lo[l], index.hi[l])
        dr = _box_dist2(pa, index.lo[r], index.hi[r])
        node[active] = np.where(dl <= dr, l, r)
        active = active[index.left[node[active]] >= 0]
    seeded = node
    _update_best(P, *_expand_leaves(index, np.arange(n), seeded), corners, best_d2, best_tri, best_q)

    qi = np.arange(n)
    nd = np.zeros(n, dtype=np.int64)
    while qi.size:
        bd = _box_dist2(P[qi], index.lo[nd], index.hi[nd])
        keep = bd <= best_d2[qi]
        qi, nd = qi[keep], nd[keep]
        leaf = index.left[nd] < 0
        lq, ln = qi[leaf], nd[leaf]
        fresh = ln != seeded[lq]
        _update_best(P, *_expand_leaves(index, lq[fresh], ln[fresh]), corners, best_d2, best_tri, best_q)
        inner = ~leaf
        qi = np.concatenate([qi[inner], qi[inner]])
        nd = np.concatenate([index.left[nd[inner]], index.right[nd[inner]]])
    return best_q, np.sqrt(best_d2), best_tri


def closest_points(index: SpatialIndex, points, chunk: int = 8192) -> ClosestPoints:
    """Exact closest surface points for an ``(N, 3)`` batch."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out_q = np.empty_like(P)
    out_d = np.empty(len(P))
    out_t = np.empty(len(P), dtype=np.int64)
    for s in range(0, len(P), chunk):
        q, d, t = _closest_chunk(index, P[s : s + chunk])
        out_q[s : s + chunk], out_d[s : s + chunk], out_t[s : s + chunk] = q, d, t
    return ClosestPoints(out_q, out_d, out_t)


def closest_point(index: SpatialIndex, p):
    """Closest point to a single ``p``: ``(q, distance, triangle_id)``."""
    r = closest_points(index, np.asarray(p, dtype=np.float64)[None, :])
    return r.points[0], float(r.distances[0]), int(r.triangle_ids[0])


def unsigned_distance(index: SpatialIndex, points) -> np.ndarray:
    return closest_points(index, points).distances


# ----------------------------------------------------------------------------
# Inside/outside by ray parity
# ----------------------------------------------------------------------------

_EDGE_TOL = 1e-10
_N_VOTES = 3
_RECAST_BUDGET = 8


def _vote_directions() -> np.ndarray:
    d = np.random.default_rng(0x1D5EED).normal(size=(_N_VOTES, _RECAST_BUDGET + 1, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d


_DIRECTIONS = _vote_directions()


def _ray_parity(index: SpatialIndex, O, direction):
    """Crossing parity of rays ``O + t*direction`` and a per-ray ambiguity flag."""
    n = len(O)
    inv = 1.0 / direction
    corners = index.mesh.corners
    hits = np.zeros(n, dtype=np.int64)
    ambiguous = np.zeros(n, dtype=bool)
    qi = np.arange(n)
    nd = np.zeros(n, dtype=np.int64)
    while qi.size:
        o = O[qi]
        t1 = (index.lo[nd] - o) * inv
        t2 = (index.hi[nd] - o) * inv
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        keep = tmax >= np.maximum(tmin, 0.0) - 1e-12
        qi, nd = qi[keep], nd[keep]
        leaf = index.left[nd] < 0
        if leaf.any():
            rq, tri = _expand_leaves(index, qi[leaf], nd[leaf])
            c = corners[tri]
            a = c[:, 0]
            e1 = c[:, 1] - a
            e2 = c[:, 2] - a
            pv = np.cross(direction, e2)
            det = np.einsum("ij,ij->i", e1, pv)
            scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
            parallel = np.abs(det) <= 1e-12 * scale
            inv_det = _safe_div(np.ones_like(det), np.where(parallel, 0.0, det))
            tv = O[rq] - a
            u = np.einsum("ij,ij->i", tv, pv) * inv_det
            qv = np.cross(tv, e1)
            v = (qv @ direction) * inv_det
            t = np.einsum("ij,ij->i", e2, qv) * inv_det
            w = 1.0 - u - v
            tol = _EDGE_TOL
            in_tri = (u > tol) & (v > tol) & (w > tol)
            near_tri = (u >= -tol) & (v >= -tol) & (w >= -tol)
            hit = ~parallel & in_tri & (t > tol)
            amb = ~parallel & near_tri & (t >= -tol) & ~hit
            # Ray lying in a triangle's plane: ambiguous only if the origin is on that plane.
            nrm = np.cross(e1, e2)
            on_plane = np.abs(np.einsum("ij,ij->i", nrm, tv)) <= tol * np.maximum(scale, 1e-300)
            amb |= parallel & on_plane
            hits += np.bincount(rq[hit], minlength=n)
            ambiguous[np.unique(rq[amb])] = True
        inner = ~leaf
        qi = np.concatenate([qi[inner], qi[inner]])
        nd = np.concatenate([index.left[nd[inner]], index.right[nd[inner]]])
    return (hits % 2) == 1, ambiguous


def inside(index: SpatialIndex, points, chunk: int = 8192):
    """Interior test by three-ray crossing parity with majority vote.

    Rays that pass within the edge tolerance of an edge or vertex are re-cast
    in the next fixed direction, up to the re-cast budget.  A point whose
    votes are all undetermined raises :class:`IndeterminateParityError`.
    Accepts a single point (returns ``bool``) or an ``(N, 3)`` batch.
    """
    P = np.asarray(points, dtype=np.float64)
    single = P.ndim == 1
    P = P.reshape(-1, 3)
    result = np.empty(len(P), dtype=bool)
    for s in range(0, len(P), chunk):
        result[s : s + chunk] = _inside_chunk(index, P[s : s + chunk], s)
    return bool(result[0]) if single else result


def _inside_chunk(index, P, offset):
    n = len(P)
    yes = np.zeros(n, dtype=np.int64)
    no = np.zeros(n, dtype=np.int64)
    for k in range(_N_VOTES):
        pending = np.arange(n)
        for attempt in range(_RECAST_BUDGET + 1):
            if pending.size == 0:
                break
            parity, amb = _ray_parity(index, P[pending], _DIRECTIONS[k, attempt])
            done = pending[~amb]
            yes[done] += parity[~amb]
            no[done] += ~parity[~amb]
            pending = pending[amb]
    undecided = np.flatnonzero(yes + no == 0)
    if undecided.size:
        raise IndeterminateParityError(undecided + offset)
    return yes > no


# ----------------------------------------------------------------------------
# Surface sampling
# ----------------------------------------------------------------------------


class SurfaceSamples(NamedTuple):
    points: np.ndarray
    normals: np.ndarray
    triangle_ids: np.ndarray


def sample_surface(mesh, n: int, rng) -> SurfaceSamples:
    """Area-uniform surface samples: face by area, then uniform barycentrics."""
    if isinstance(mesh, SpatialIndex):
        mesh = mesh.mesh
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = as_generator(rng)
    cdf = np.cumsum(mesh.areas)
    tri = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    tri = np.minimum(tri, len(cdf) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners[tri]
    pts = (
        (1.0 - r1)[:, None] * c[:, 0]
        + (r1 * (1.0 - r2))[:, None] * c[:, 1]
        + (r1 * r2)[:, None] * c[:, 2]
    )
    return SurfaceSamples(pts, mesh.normals[tri], tri)
