"""Reconstruction metrics, result tables and the D-Score aggregate."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh, build_index, closest_points, sample_surface

IOU = "IoU"
CHAMFER = "Chamfer-L2"
FSCORE = "F-Score(1.5%)"
NORMALS = "Normal Consistency"

ORIENTATION = {IOU: "higher", CHAMFER: "lower", FSCORE: "higher", NORMALS: "higher"}

FSCORE_THRESHOLD = 0.015


class MetricError(ValueError):
    pass


class IncompleteTableError(MetricError):
    pass


# ----------------------------------------------------------------------------
# IoU
# ----------------------------------------------------------------------------


def iou(gt, pred) -> float:
    """Intersection over union of two boolean occupancy arrays on one lattice.

    Two empty occupancies count as a perfect match.
    """
    gt = np.asarray(gt, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    if gt.shape != pred.shape:
        raise MetricError(f"resolution mismatch: {gt.shape} vs {pred.shape}")
    union = np.count_nonzero(gt | pred)
    if union == 0:
        return 1.0
    return np.count_nonzero(gt & pred) / union


def occupancy_from_values(values, kind) -> np.ndarray:
    """Threshold predicted values: Occ at 0.5, signed kinds by sign."""
    values = np.asarray(values)
    if kind.name == "occ":
        return values > 0.5
    if kind.name in ("sdf", "tsdf"):
        return values < 0.0
    raise MetricError(f"occupancy is undefined for {kind}")


def shape_occupancy(shape, R: int = 64) -> np.ndarray:
    from .toynet.surface import lattice

    return (shape.signed_distance(lattice(R)) < 0).reshape(R, R, R)


# ----------------------------------------------------------------------------
# Point-cloud metrics
# ----------------------------------------------------------------------------


def _cloud(a, name):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0:
        raise MetricError(f"{name} point cloud is empty")
    return a


def nearest_distances(src, dst) -> np.ndarray:
    """Distance from every point of ``src`` to its nearest point in ``dst``."""
    return cKDTree(dst).query(src, k=1)[0]


def chamfer_l2(A, B) -> float:
    """Mean of the two directional mean squared nearest-neighbour distances."""
    A, B = _cloud(A, "first"), _cloud(B, "second")
    return 0.5 * (float(np.mean(nearest_distances(A, B) ** 2)) + float(np.mean(nearest_distances(B, A) ** 2)))


class FScore(NamedTuple):
    f: float
    precision: float
    recall: float


def f_score_parts(gt, pred, threshold: float = FSCORE_THRESHOLD) -> FScore:
    gt, pred = _cloud(gt, "ground-truth"), _cloud(pred, "predicted")
    if not threshold > 0:
        raise MetricError("threshold must be positive")
    precision = float(np.mean(nearest_distances(pred, gt) <= threshold))
    recall = float(np.mean(nearest_distances(gt, pred) <= threshold))
    f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return FScore(f, precision, recall)


def f_score(gt, pred, threshold: float = FSCORE_THRESHOLD) -> float:
    """Harmonic mean of precision and recall at distance ``threshold``."""
    return f_score_parts(gt, pred, threshold).f


def normal_consistency(gt: TriangleMesh, pred: TriangleMesh, n: int = 10_000, rng=0) -> float:
    """Symmetrized mean ``|n_a . n_b|`` between samples and their closest faces.

    ``n`` area-uniform samples are drawn on each mesh; each sample's face
    normal is compared with the normal of the closest face on the other mesh.
    """
    if gt.is_empty or pred.is_empty:
        raise MetricError("normal consistency needs two non-empty meshes")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng

    def one_way(a: TriangleMesh, b: TriangleMesh) -> float:
        s = sample_surface(a, n, rng)
        hit = closest_points(build_index(b), s.points)
        return float(np.mean(np.abs(np.einsum("ij,ij->i", s.normals, b.normals[hit.triangle_ids]))))

    return 0.5 * (one_way(gt, pred) + one_way(pred, gt))


# ----------------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------------


class Entry(NamedTuple):
    model: str
    strategy: str
    metric: str
    value: float
    orientation: str


@dataclass
class MetricsReport:
    entries: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, model: str, strategy: str, metric: str, value: float, orientation: str | None = None) -> None:
        orientation = orientation or ORIENTATION.get(metric)
        if orientation not in ("higher", "lower"):
            raise MetricError(f"metric {metric!r} needs an orientation")
        if not math.isfinite(value):
            raise MetricError(f"non-finite value for {(model, strategy, metric)}")
        key = (model, strategy, metric)
        if any((e.model, e.strategy, e.metric) == key for e in self.entries):
            raise MetricError(f"duplicate report entry {key}")
        self.entries.append(Entry(model, strategy, metric, float(value), orientation))

    def extend(self, other: "MetricsReport") -> None:
        for e in other.entries:
            self.add(*e)

    def value(self, model: str, strategy: str, metric: str) -> float:
        for e in self.entries:
            if (e.model, e.strategy, e.metric) == (model, strategy, metric):
                return e.value
        raise KeyError((model, strategy, metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(Entry._fields)
        for e in self.entries:
            w.writerow([e.model, e.strategy, e.metric, repr(e.value), e.orientation])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsReport":
        rep = cls()
        for row in csv.DictReader(io.StringIO(text)):
            rep.add(row["model"], row["strategy"], row["metric"], float(row["value"]), row["orientation"])
        return rep

    def to_json(self) -> str:
        nested: dict = {}
        for e in self.entries:
            nested.setdefault(e.model, {}).setdefault(e.strategy, {})[e.metric] = e.value
        orient = {e.metric: e.orientation for e in self.entries}
        return json.dumps({"results": nested, "orientation": orient, "provenance": self.provenance}, indent=2, sort_keys=True) + "\n"


# ----------------------------------------------------------------------------
# D-Score
# ----------------------------------------------------------------------------


@dataclass
class DScoreInput:
    """Results keyed by ``(model, metric)`` then strategy, plus per-metric config."""

    results: dict
    orientation: dict = field(default_factory=dict)
    weights: dict | None = None

    @classmethod
    def from_report(cls, report: MetricsReport, weights: dict | None = None) -> "DScoreInput":
        res: dict = {}
        orient = {}
        for e in report.entries:
            res.setdefault((e.model, e.metric), {})[e.strategy] = e.value
            orient[e.metric] = e.orientation
        return cls(res, orient, weights)

    @property
    def strategies(self) -> list:
        seen: list = []
        for row in self.results.values():
            for s in row:
                if s not in seen:
                    seen.append(s)
        return seen

    @property
    def metrics(self) -> list:
        return sorted({m for _, m in self.results})

    @property
    def models(self) -> list:
        return sorted({m for m, _ in self.results})


def _oriented(value: float, orientation: str) -> float:
    if orientation == "lower":
        if value == 0:
            raise MetricError("cannot orient a zero lower-is-better value by reciprocal")
        return 1 / value
    return value


def d_score(inp: DScoreInput, strategy: str) -> float:
    """Weighted mean relative regret of ``strategy`` against the per-cell best.

    For every (model, metric) the values are oriented so that higher is
    better (reciprocal for lower-is-better), ``best`` is the maximum over
    strategies, and the regret is ``(best - current) / best``.  Regrets are
    averaged over models, then combined over metrics with weights normalized
    to sum to one (equal by default).

    Two models, two strategies, IoU and Chamfer-L2 with equal weights.  For
    S1 the IoU regrets are 0 and 0.15/0.75 (mean 0.1) and the Chamfer
    regrets 0 and (200 - 100)/200 (mean 0.25), so D = 0.175:

    >>> r = {("A", IOU): {"S1": 0.90, "S2": 0.80}, ("B", IOU): {"S1": 0.60, "S2": 0.75},
    ...      ("A", CHAMFER): {"S1": 0.002, "S2": 0.004}, ("B", CHAMFER): {"S1": 0.010, "S2": 0.005}}
    >>> inp = DScoreInput(r, dict(ORIENTATION))
    >>> round(d_score(inp, "S1"), 12), round(d_score(inp, "S2") * 72, 12)
    (0.175, 11.0)
    """
    strategies = inp.strategies
    if strategy not in strategies:
        raise IncompleteTableError(f"strategy {strategy!r} has no results")
    models, metrics = inp.models, inp.metrics
    # integer default weights keep Fraction inputs exact
    weights = inp.weights or {m: 1 for m in metrics}
    if any(weights.get(m, 0) <= 0 for m in metrics):
        raise MetricError("every metric needs a positive weight")
    wsum = sum(weights[m] for m in metrics)
    total = 0
    for metric in metrics:
        orient = inp.orientation.get(metric, ORIENTATION.get(metric, "higher"))
        regret = 0
        for model in models:
            row = inp.results.get((model, metric))
            if row is None or any(s not in row for s in strategies):
                raise IncompleteTableError(f"missing results for ({model}, {metric})")
            vals = {s: _oriented(row[s], orient) for s in strategies}
            best = max(vals.values())
            if best == 0:
                raise MetricError(f"best result is zero for ({model}, {metric})")
            regret += (best - vals[strategy]) / best
        total += weights[metric] * regret / (wsum * len(models))
    return total


def d_score_table(inp: DScoreInput) -> dict:
    return {s: d_score(inp, s) for s in inp.strategies}


def d_score_csv(scores: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "d_score"])
    for s, v in scores.items():
        w.writerow([s, f"{v:.6f}"])
    return buf.getvalue()
