"""Dense evaluation, iso-surface meshing and UDF point extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from skimage import measure

from .._rng import as_generator
from ..fields import UnsupportedKindError
from ..mesh import TriangleMesh
from .model import ToyModel, forward, value_and_input_grad


@dataclass(eq=False)
class ScalarGrid:
    """Values on the ``R^3`` cell-corner lattice over ``[-0.5, 0.5]^3`` (``ij`` indexing)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or len(set(v.shape)) != 1 or v.shape[0] < 2:
            raise ValueError(f"expected an (R, R, R) array with R >= 2, got {v.shape}")
        self.values = v

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return 1.0 / (self.resolution - 1)


def lattice(R: int) -> np.ndarray:
    """``(R^3, 3)`` lattice points in C order matching :class:`ScalarGrid`."""
    if R < 2:
        raise ValueError("resolution must be at least 2")
    ax = np.linspace(-0.5, 0.5, R)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)


def grid_eval(model, R: int, shape_id: int = 0, latent=None, chunk: int = 65_536) -> ScalarGrid:
    """Evaluate ``model`` (a ToyModel or any callable on ``(N, 3)``) on the lattice."""
    pts = lattice(R)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        if isinstance(model, ToyModel):
            out[s : s + chunk] = forward(model, pts[s : s + chunk], shape_id, latent)
        else:
            out[s : s + chunk] = model(pts[s : s + chunk])
    return ScalarGrid(out.reshape(R, R, R))


def marching_cubes(grid: ScalarGrid, iso: float = 0.0) -> TriangleMesh:
    """Triangulate the ``iso`` level set; an empty mesh if the grid never crosses it."""
    v = grid.values
    if not (v.min() < iso < v.max()):
        return TriangleMesh.empty()
    h = grid.spacing
    verts, faces, _, _ = measure.marching_cubes(v, level=iso, spacing=(h, h, h), method="lewiner")
    verts = verts.astype(np.float64) - 0.5
    mesh = TriangleMesh(verts, faces.astype(np.int64))
    keep = mesh.areas > 0
    if not keep.all():
        mesh = TriangleMesh(verts, mesh.triangles[keep])
    return mesh


def iso_level(kind) -> float:
    return 0.5 if kind.name == "occ" else 0.0


# ----------------------------------------------------------------------------
# UDF point extraction
# ----------------------------------------------------------------------------


class ModelField:
    """Adapter exposing a UDF-headed model as ``value_and_grad``."""

    def __init__(self, model: ToyModel, shape_id: int = 0, latent=None):
        if model.kind.name != "udf":
            raise UnsupportedKindError(f"UDF extraction needs a UDF-headed model, got {model.kind}")
        self.model, self.shape_id, self.latent = model, shape_id, latent

    def value_and_grad(self, P):
        return value_and_input_grad(self.model, P, self.shape_id, self.latent)


class MaskedField:
    """Field whose points farther than ``tau`` from ``shape`` read as the constant ``tau``."""

    def __init__(self, field, shape, tau: float = 0.1):
        self.field, self.shape, self.tau = field, shape, float(tau)

    def value_and_grad(self, P):
        P = np.asarray(P, dtype=np.float64).reshape(-1, 3)
        far = self.shape.unsigned_distance(P) > self.tau
        f = np.full(len(P), self.tau)
        g = np.zeros((len(P), 3))
        near = ~far
        if near.any():
            f[near], g[near] = self.field.value_and_grad(P[near])
        return f, g


class Extraction(NamedTuple):
    points: np.ndarray
    shortfall: int
    seeds: int


def extract_udf_points(
    field,
    n: int,
    steps: int = 5,
    rng=None,
    tol: float = 0.005,
    batch: int = 20_000,
    max_rounds: int = 20,
    shape_id: int = 0,
    latent=None,
) -> Extraction:
    """Dense surface points from an unsigned distance field.

    Uniform seeds are moved ``steps`` times along ``-f * grad f / |grad f|``;
    points whose gradient norm drops below ``1e-9`` are discarded, and
    survivors are kept when their final value is under ``tol``.  Rounds of
    ``batch`` seeds repeat until ``n`` points survive or ``max_rounds`` is
    exhausted, in which case ``shortfall`` reports the deficit.
    """
    if isinstance(field, ToyModel):
        field = ModelField(field, shape_id, latent)
    if n <= 0:
        return Extraction(np.zeros((0, 3)), 0, 0)
    rng = as_generator(rng)
    found, total, seeds = [], 0, 0
    for _ in range(max_rounds):
        p = rng.uniform(-0.5, 0.5, size=(batch, 3))
        seeds += batch
        alive = np.ones(batch, dtype=bool)
        for _ in range(steps):
            f, g = field.value_and_grad(p)
            norm = np.linalg.norm(g, axis=1)
            alive &= norm >= 1e-9
            step = np.zeros_like(p)
            step[alive] = (f[alive] / norm[alive])[:, None] * g[alive]
            p = np.clip(p - step, -0.5, 0.5)
        f, _ = field.value_and_grad(p)
        ok = alive & (f < tol)
        found.append(p[ok])
        total += int(ok.sum())
        if total >= n:
            break
    pts = np.concatenate(found)[:n]
    return Extraction(pts, max(0, n - len(pts)), seeds)
