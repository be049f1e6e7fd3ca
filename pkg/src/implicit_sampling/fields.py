"""Ground-truth implicit-function labels for query points.

A *shape* is anything exposing ``unsigned_distance``, ``signed_distance``,
``surface_samples`` and ``shape_id``; analytic primitives and
:class:`MeshShape` both qualify.  Signed distances are negative inside.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import mesh as _mesh
from ._rng import as_generator

SURFACE_EPS = 1e-9

KIND_NAMES = ("occ", "sdf", "tsdf", "udf")


class UnsupportedKindError(ValueError):
    pass


class LabelingError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        self.index = int(index)
        super().__init__(f"labeling failed at point {self.index}: {cause}")


@dataclass(frozen=True)
class FieldKind:
    """Implicit function selector; ``truncation`` only matters for TSDF."""

    name: str
    truncation: float = 0.1

    def __post_init__(self):
        if self.name not in KIND_NAMES:
            raise UnsupportedKindError(f"unknown field kind {self.name!r}")
        if not self.truncation > 0:
            raise ValueError("TSDF truncation must be positive")

    @classmethod
    def parse(cls, text: str) -> "FieldKind":
        """``"occ"``, ``"sdf"``, ``"udf"``, ``"tsdf"`` or ``"tsdf:0.05"``."""
        name, _, trunc = text.strip().lower().partition(":")
        return cls(name, float(trunc)) if trunc else cls(name)

    def __str__(self) -> str:
        return f"tsdf:{self.truncation:g}" if self.name == "tsdf" else self.name

    @property
    def signed(self) -> bool:
        return self.name != "udf"


OCC = FieldKind("occ")
SDF = FieldKind("sdf")
TSDF = FieldKind("tsdf", 0.1)
UDF = FieldKind("udf")


def _points(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64).reshape(-1, 3)


def _check_in_box(center, reach):
    c = np.asarray(center, dtype=np.float64)
    if np.any(np.abs(c) + reach > 0.5 + 1e-12):
        raise ValueError("analytic shape must fit inside [-0.5, 0.5]^3")


@dataclass(frozen=True)
class Sphere:
    radius: float = 0.4
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        _check_in_box(self.center, np.full(3, self.radius))

    @property
    def shape_id(self) -> str:
        return f"sphere(r={self.radius:g},c={tuple(float(x) for x in self.center)})"

    def signed_distance(self, p) -> np.ndarray:
        return np.linalg.norm(_points(p) - np.asarray(self.center), axis=1) - self.radius

    def unsigned_distance(self, p) -> np.ndarray:
        return np.abs(self.signed_distance(p))

    def surface_samples(self, n, rng):
        rng = as_generator(rng)
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * d, d

    def to_mesh(self, subdivisions: int = 4) -> _mesh.TriangleMesh:
        return _mesh.icosphere(self.radius, subdivisions, self.center)

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * np.pi * self.radius**3


@dataclass(frozen=True)
class Box:
    half_extents: tuple = (0.35, 0.35, 0.35)
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        _check_in_box(self.center, np.asarray(self.half_extents, dtype=np.float64))

    @property
    def shape_id(self) -> str:
        return f"box(h={tuple(float(x) for x in self.half_extents)},c={tuple(float(x) for x in self.center)})"

    def signed_distance(self, p) -> np.ndarray:
        q = np.abs(_points(p) - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0.0)

    def unsigned_distance(self, p) -> np.ndarray:
        return np.abs(self.signed_distance(p))

    def surface_samples(self, n, rng):
        rng = as_generator(rng)
        h = np.asarray(self.half_extents, dtype=np.float64)
        # face pairs normal to x, y, z have area 4*h_j*h_k each
        face_area = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        axis = rng.choice(3, size=n, p=face_area / face_area.sum())
        side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        pts = (rng.random((n, 3)) * 2.0 - 1.0) * h
        rows = np.arange(n)
        pts[rows, axis] = side * h[axis]
        normals = np.zeros((n, 3))
        normals[rows, axis] = side
        return pts + np.asarray(self.center), normals

    def to_mesh(self) -> _mesh.TriangleMesh:
        return _mesh.box_mesh(self.center, self.half_extents)

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * np.asarray(self.half_extents)))


@dataclass(frozen=True)
class Torus:
    """Torus about the z axis: ring radius ``major``, tube radius ``minor``."""

    major: float = 0.3
    minor: float = 0.1
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.minor < self.major:
            raise ValueError("torus needs 0 < minor < major")
        reach = self.major + self.minor
        _check_in_box(self.center, np.array([reach, reach, self.minor]))

    @property
    def shape_id(self) -> str:
        return f"torus(R={self.major:g},r={self.minor:g},c={tuple(float(x) for x in self.center)})"

    def signed_distance(self, p) -> np.ndarray:
        q = _points(p) - np.asarray(self.center)
        ring = np.hypot(q[:, 0], q[:, 1]) - self.major
        return np.hypot(ring, q[:, 2]) - self.minor

    def unsigned_distance(self, p) -> np.ndarray:
        return np.abs(self.signed_distance(p))

    def surface_samples(self, n, rng):
        # area element is proportional to (R + r cos v); rejection on v
        rng = as_generator(rng)
        R, r = self.major, self.minor
        v = np.empty(0)
        while v.size < n:
            cand = rng.uniform(0.0, 2 * np.pi, 2 * (n - v.size) + 16)
            keep = rng.random(cand.size) * (R + r) <= R + r * np.cos(cand)
            v = np.concatenate([v, cand[keep]])
        v = v[:n]
        u = rng.uniform(0.0, 2 * np.pi, n)
        normals = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
        ring = np.stack([R * np.cos(u), R * np.sin(u), np.zeros(n)], axis=1)
        return ring + r * normals + np.asarray(self.center), normals

    def to_mesh(self, nu: int = 128, nv: int = 64) -> _mesh.TriangleMesh:
        return _mesh.torus_mesh(self.major, self.minor, self.center, nu, nv)

    @property
    def volume(self) -> float:
        return 2.0 * np.pi**2 * self.major * self.minor**2


class MeshShape:
    """Shape backed by a watertight triangle mesh and its BVH."""

    def __init__(self, index, name: str = "mesh"):
        if isinstance(index, _mesh.TriangleMesh):
            index = _mesh.build_index(index)
        self.index = index
        self.name = name

    @property
    def shape_id(self) -> str:
        return self.name

    @property
    def mesh(self) -> _mesh.TriangleMesh:
        return self.index.mesh

    def unsigned_distance(self, p) -> np.ndarray:
        return _mesh.unsigned_distance(self.index, _points(p))

    def inside(self, p) -> np.ndarray:
        return _mesh.inside(self.index, _points(p))

    def signed_distance(self, p) -> np.ndarray:
        P = _points(p)
        d = self.unsigned_distance(P)
        sign = np.ones(len(P))
        off = d > SURFACE_EPS
        if off.any():
            idx = np.flatnonzero(off)
            try:
                sign[idx] = np.where(_mesh.inside(self.index, P[idx]), -1.0, 1.0)
            except _mesh.IndeterminateParityError as exc:
                raise _mesh.IndeterminateParityError(idx[exc.indices]) from exc
        return sign * d

    def surface_samples(self, n, rng):
        s = _mesh.sample_surface(self.index.mesh, n, rng)
        return s.points, s.normals

    def to_mesh(self) -> _mesh.TriangleMesh:
        return self.index.mesh

    @cached_property
    def volume(self) -> float:
        c = self.index.mesh.corners
        return float(abs(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum()) / 6.0)


def _from_signed(kind: FieldKind, sd: np.ndarray) -> np.ndarray:
    if kind.name == "sdf":
        return sd
    if kind.name == "tsdf":
        return np.clip(sd, -kind.truncation, kind.truncation)
    if kind.name == "occ":
        # surface points (|sd| <= eps) resolve to outside
        return (sd < -SURFACE_EPS).astype(np.float64)
    raise UnsupportedKindError(str(kind))


def batch_label(shape, kind: FieldKind, points) -> np.ndarray:
    """Order-preserving labels of every point; errors name the failing index."""
    P = _points(points)
    if len(P) == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(P)):
        raise LabelingError(int(np.flatnonzero(~np.isfinite(P).all(axis=1))[0]), ValueError("non-finite point"))
    if kind.name == "udf":
        return shape.unsigned_distance(P)
    try:
        sd = shape.signed_distance(P)
    except _mesh.IndeterminateParityError as exc:
        raise LabelingError(int(exc.indices[0]), exc) from exc
    return _from_signed(kind, sd)


def evaluate_field(shape, kind: FieldKind, p) -> float:
    """Label of a single point ``p``."""
    return float(batch_label(shape, kind, np.asarray(p, dtype=np.float64)[None, :])[0])


def shape_from_spec(text: str):
    """Parse ``sphere``, ``box``, ``torus`` (acceptance defaults, optional
    ``key=value`` overrides like ``sphere:radius=0.3``) or a mesh path."""
    name, _, args = text.partition(":")
    kwargs = {}
    for item in filter(None, args.split(",")):
        k, _, v = item.partition("=")
        kwargs[k.strip()] = float(v)
    if name == "sphere":
        return Sphere(**kwargs)
    if name == "box":
        h = kwargs.pop("half", 0.35)
        return Box(half_extents=(h, h, h), **kwargs)
    if name == "torus":
        return Torus(**kwargs)
    m = _mesh.load_mesh(text)
    return MeshShape(_mesh.build_index(m), name=text)
