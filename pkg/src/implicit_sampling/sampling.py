"""Query-point sampling strategies and labeled datasets.

Strategies are mixtures of three component kinds:

``uniform``
    i.i.d. points in the box ``[-0.5, 0.5]^3``.
``surface``
    area-uniform surface points plus isotropic Gaussian noise of std ``sigma``;
    points pushed outside the box are redrawn.
``linear``
    rejection sampling with acceptance ``(tau - g) / tau`` where ``g`` is the
    unsigned distance to the surface and zero beyond ``tau``.
"""

from __future__ import annotations

import hashlib
import json
import os
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._rng import as_generator, substream
from .fields import FieldKind, UnsupportedKindError, batch_label

FORMAT = "implicit-sampling-dataset"
FORMAT_VERSION = 1

SPARSE_N = 2_000
DENSE_N = 20_000

BUILTIN_NAMES = ("S_UNI", "S_HFS", "S_HNS", "S_BS", "S_FUNS", "S_FSNS", "S_NS", "S_Linear")
LINEAR_TAU = 0.1
LINEAR_MU = 1.0


class StrategyError(ValueError):
    pass


class AcceptanceStarvationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


class ChecksumError(DatasetFormatError):
    pass


@dataclass(frozen=True)
class Component:
    kind: str
    fraction: float
    sigma: float | None = None
    mu: float | None = None
    tau: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class StrategySpec:
    components: tuple
    n: int
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise StrategyError("strategy needs at least one component")
        if self.n < 0:
            raise StrategyError("n must be non-negative")
        total = 0.0
        for c in self.components:
            if not c.fraction > 0:
                raise StrategyError(f"component fraction must be positive: {c}")
            if c.kind == "surface" and not (c.sigma and c.sigma > 0):
                raise StrategyError("surface component needs sigma > 0")
            if c.kind == "linear" and not (c.tau and c.tau > 0 and c.mu and c.mu > 0):
                raise StrategyError("linear component needs tau > 0 and mu > 0")
            if c.kind not in ("uniform", "surface", "linear"):
                raise StrategyError(f"unknown component kind {c.kind!r}")
            total += c.fraction
        if abs(total - 1.0) > 1e-12:
            raise StrategyError(f"component fractions sum to {total!r}, not 1")

    def counts(self) -> list[int]:
        """Per-component counts by largest remainder; they sum to ``n`` exactly."""
        exact = np.array([c.fraction for c in self.components]) * self.n
        base = np.floor(exact).astype(int)
        short = self.n - int(base.sum())
        # stable order: larger remainder first, ties to the earlier component
        order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - base[i]), i))
        for i in order[:short]:
            base[i] += 1
        return [int(x) for x in base]

    def to_dict(self) -> dict:
        return {"name": self.name, "n": self.n, "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "StrategySpec":
        return cls(tuple(Component(**c) for c in d["components"]), int(d["n"]), d.get("name", "custom"))


def _ns_mix(weight: float):
    return [Component("surface", weight * 0.5, sigma=0.01), Component("surface", weight * 0.5, sigma=0.001)]


def expand_builtin(name: str, n: int, mu: float = LINEAR_MU, tau: float = LINEAR_TAU) -> StrategySpec:
    """Expand a named strategy into its mixture for a budget of ``n`` points.

    The 1% additions of S_FUNS and S_FSNS take their share out of the same
    budget, so every strategy yields exactly ``n`` points.
    """
    if n <= 0:
        raise StrategyError("n must be positive")
    table = {
        "S_UNI": [Component("uniform", 1.0)],
        "S_HFS": [Component("uniform", 0.5), Component("surface", 0.5, sigma=0.1)],
        "S_HNS": [Component("uniform", 0.5), Component("surface", 0.5, sigma=0.01)],
        "S_BS": [Component("surface", 0.5, sigma=0.1), Component("surface", 0.5, sigma=0.01)],
        "S_NS": _ns_mix(1.0),
        "S_FUNS": [Component("uniform", 0.01)] + _ns_mix(0.99),
        "S_FSNS": [Component("surface", 0.01, sigma=0.1)] + _ns_mix(0.99),
        "S_Linear": [Component("linear", 1.0, mu=mu, tau=tau)],
    }
    if name not in table:
        raise StrategyError(f"unknown builtin strategy {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    spec = StrategySpec(tuple(table[name]), n, name)
    if min(spec.counts()) == 0:
        raise StrategyError(f"n={n} too small for {name}: a component would receive 0 points")
    return spec


# ----------------------------------------------------------------------------
# Component samplers
# ----------------------------------------------------------------------------


def sample_uniform(n: int, rng) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    return as_generator(rng).uniform(-0.5, 0.5, size=(n, 3))


def sample_surface_gaussian(shape, n: int, sigma: float, rng) -> np.ndarray:
    """Surface samples jittered by N(0, sigma^2) per axis; out-of-box draws are redrawn."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = as_generator(rng)
    out = np.empty((n, 3))
    todo = np.arange(n)
    while todo.size:
        surf, _ = shape.surface_samples(todo.size, rng)
        pts = surf + rng.normal(scale=sigma, size=(todo.size, 3))
        ok = np.all(np.abs(pts) <= 0.5, axis=1)
        out[todo[ok]] = pts[ok]
        todo = todo[~ok]
    return out


def linear_weight(g, mu: float = LINEAR_MU, tau: float = LINEAR_TAU) -> np.ndarray:
    """Unnormalized sampling weight: ``mu * (tau - g)`` within ``tau``, else 0."""
    g = np.asarray(g, dtype=np.float64)
    return np.where(g <= tau, mu * (tau - g), 0.0)


def sample_linear(
    shape,
    n: int,
    mu: float = LINEAR_MU,
    tau: float = LINEAR_TAU,
    rng=None,
    batch: int = 16_384,
    return_proposals: bool = False,
):
    """Draw ``n`` points with density proportional to :func:`linear_weight`.

    Uniform box proposals are accepted with probability
    ``linear_weight(g) / (mu * tau)``; ``mu`` cancels in that ratio.  The
    first batch doubles as a probe: an acceptance ratio under ``1e-5``
    raises :class:`AcceptanceStarvationError`.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not (tau > 0 and mu > 0):
        raise ValueError("tau and mu must be positive")
    rng = as_generator(rng)
    kept = []
    got = 0
    proposed = 0
    while got < n:
        prop = rng.uniform(-0.5, 0.5, size=(batch, 3))
        u = rng.random(batch)
        g = shape.unsigned_distance(prop)
        acc = u * (mu * tau) < linear_weight(g, mu, tau)
        proposed += batch
        if proposed == batch and acc.sum() < 1e-5 * batch:
            raise AcceptanceStarvationError(
                f"linear sampling accepted {int(acc.sum())} of {batch} probe proposals; tau={tau} is too small"
            )
        pts = prop[acc]
        take = min(len(pts), n - got)
        if take < len(pts):
            # count proposals only up to the last accepted point actually used
            proposed -= batch - (np.flatnonzero(acc)[take - 1] + 1)
        kept.append(pts[:take])
        got += take
    out = np.concatenate(kept)
    return (out, proposed) if return_proposals else out


# ----------------------------------------------------------------------------
# Distance mask
# ----------------------------------------------------------------------------


class DistanceMask(NamedTuple):
    kept: np.ndarray
    distances: np.ndarray
    tau: float

    @property
    def masked(self) -> np.ndarray:
        return ~self.kept


def apply_distance_mask(points, shape, tau: float = 0.1, kind: FieldKind | None = None) -> DistanceMask:
    """Keep points within ``tau`` of the surface; only valid for UDF labels."""
    if kind is not None and kind.name != "udf":
        raise UnsupportedKindError(f"distance mask supports UDF only, not {kind}")
    if not tau > 0:
        raise ValueError("tau must be positive")
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    g = shape.unsigned_distance(P) if len(P) else np.zeros(0)
    return DistanceMask(g <= tau, g, float(tau))


# ----------------------------------------------------------------------------
# Datasets
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class LabeledDataset:
    points: np.ndarray
    values: np.ndarray
    mask: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if len(self.values) != len(self.points):
            raise DatasetFormatError("points and values differ in length")
        if self.mask is not None:
            self.mask = np.ascontiguousarray(self.mask, dtype=bool).reshape(-1)
            if len(self.mask) != len(self.points):
                raise DatasetFormatError("mask length differs from point count")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def kind(self) -> FieldKind:
        return FieldKind.parse(self.provenance.get("kind", "occ"))

    def training_view(self) -> tuple[np.ndarray, np.ndarray]:
        """Points and targets that take part in the loss (masked points dropped)."""
        if self.mask is None:
            return self.points, self.values
        return self.points[self.mask], self.values[self.mask]

    def blob(self) -> bytes:
        parts = [self.points.astype("<f8").tobytes(), self.values.astype("<f8").tobytes()]
        if self.mask is not None:
            parts.append(self.mask.astype(np.uint8).tobytes())
        return b"".join(parts)

    def equals(self, other: "LabeledDataset") -> bool:
        return self.blob() == other.blob() and self.provenance == other.provenance


def _sample_component(shape, comp: Component, count: int, rng) -> np.ndarray:
    if comp.kind == "uniform":
        return sample_uniform(count, rng)
    if comp.kind == "surface":
        return sample_surface_gaussian(shape, count, comp.sigma, rng)
    return sample_linear(shape, count, comp.mu, comp.tau, rng)


def sample_strategy(shape, spec: StrategySpec, seed: int) -> tuple[np.ndarray, list[int]]:
    """Concatenate component draws in component order; component ``i`` uses substream ``i``."""
    counts = spec.counts()
    parts = [
        _sample_component(shape, comp, cnt, substream(seed, "component", i))
        for i, (comp, cnt) in enumerate(zip(spec.components, counts))
        if cnt > 0
    ]
    return (np.concatenate(parts) if parts else np.zeros((0, 3))), counts


def build_dataset(shape, strategy, kind: FieldKind, n: int | None = None, seed: int = 0, mask_tau: float | None = None) -> LabeledDataset:
    """Sample, label and optionally distance-mask a query-point set."""
    if isinstance(kind, str):
        kind = FieldKind.parse(kind)
    if isinstance(strategy, str):
        if n is None:
            raise StrategyError("n is required with a builtin strategy name")
        spec = expand_builtin(strategy, n)
    else:
        spec = strategy if n is None or n == strategy.n else StrategySpec(strategy.components, n, strategy.name)
    if mask_tau is not None and kind.name != "udf":
        raise UnsupportedKindError(f"distance mask supports UDF only, not {kind}")
    points, counts = sample_strategy(shape, spec, seed)
    values = batch_label(shape, kind, points)
    mask = None
    if mask_tau is not None:
        m = apply_distance_mask(points, shape, mask_tau, kind)
        mask = m.kept
        values = np.where(mask, values, mask_tau)
    prov = {
        "strategy": spec.name,
        "spec": spec.to_dict(),
        "component_counts": counts,
        "seed": int(seed),
        "kind": str(kind),
        "shape": getattr(shape, "shape_id", repr(shape)),
        "mask_tau": mask_tau,
    }
    return LabeledDataset(points, values, mask, prov)


def _blob_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + ".bin"


def save_dataset(ds: LabeledDataset, path, extra: dict | None = None) -> dict:
    """Write ``path`` (JSON manifest) and its ``.bin`` sidecar; returns the manifest."""
    path = os.fspath(path)
    blob = ds.blob()
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "n": len(ds),
        "has_mask": ds.mask is not None,
        "kept": int(ds.mask.sum()) if ds.mask is not None else len(ds),
        "blob": os.path.basename(_blob_path(path)),
        "blob_bytes": len(blob),
        "crc32": zlib.crc32(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "provenance": ds.provenance,
    }
    if extra:
        manifest.update(extra)
    with open(_blob_path(path), "wb") as fh:
        fh.write(blob)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(path) -> LabeledDataset:
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise DatasetFormatError(f"{path}: not a dataset manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: format version {manifest.get('version')} != {FORMAT_VERSION}")
    blob_file = os.path.join(os.path.dirname(path), manifest["blob"])
    with open(blob_file, "rb") as fh:
        blob = fh.read()
    n = int(manifest["n"])
    expected = n * 32 + (n if manifest["has_mask"] else 0)
    if len(blob) != expected or len(blob) != manifest["blob_bytes"]:
        raise DatasetFormatError(f"{blob_file}: truncated blob ({len(blob)} of {expected} bytes)")
    if zlib.crc32(blob) != manifest["crc32"]:
        raise ChecksumError(f"{blob_file}: CRC-32 mismatch")
    pts = np.frombuffer(blob, dtype="<f8", count=3 * n).reshape(n, 3)
    vals = np.frombuffer(blob, dtype="<f8", count=n, offset=24 * n)
    mask = None
    if manifest["has_mask"]:
        mask = np.frombuffer(blob, dtype=np.uint8, count=n, offset=32 * n).astype(bool)
    return LabeledDataset(pts.copy(), vals.copy(), mask, manifest["provenance"])
