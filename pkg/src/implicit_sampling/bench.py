"""End-to-end benchmark: datasets, training and evaluation over a plan's cross-product.

Each *cell* is one (shape, strategy, kind, density, archetype, seed, mask)
combination.  Cells are independent and deterministic; their results are
cached under ``<out>/cells/<hash>.json`` so an interrupted bench resumes
where it stopped.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics as M
from ._rng import substream
from .fields import FieldKind, shape_from_spec
from .sampling import BUILTIN_NAMES, build_dataset, save_dataset
from .toynet import (
    MaskedField,
    TrainConfig,
    default_config,
    extract_udf_points,
    forward,
    grid_eval,
    init_model,
    iso_level,
    marching_cubes,
    predict,
    save_checkpoint,
    train,
)

BENCH_VERSION = 1

# Squared diagonal of the unit box: no two points in the box are farther apart.
EMPTY_CHAMFER = 3.0


class PlanError(ValueError):
    pass


@dataclass
class BenchPlan:
    shapes: list = field(default_factory=lambda: ["sphere"])
    strategies: list = field(default_factory=lambda: list(BUILTIN_NAMES))
    models: list = field(
        default_factory=lambda: [
            {"archetype": "GlobalMLP", "kind": "occ"},
            {"archetype": "GridInterp", "kind": "occ"},
            {"archetype": "AutoDecoder", "kind": "sdf"},
        ]
    )
    densities: list = field(default_factory=lambda: [2000])
    seeds: list = field(default_factory=lambda: [0])
    masks: list = field(default_factory=lambda: [None])
    epochs: int = 500
    resolution: int = 64
    eval_samples: int = 10_000
    output: str = "bench_out"

    def __post_init__(self):
        for name in ("shapes", "strategies", "models", "densities", "seeds", "masks"):
            if not getattr(self, name):
                raise PlanError(f"plan axis {name!r} is empty")
        for s in self.strategies:
            if s not in BUILTIN_NAMES:
                raise PlanError(f"unknown strategy {s!r}")
        for m in self.models:
            if set(m) != {"archetype", "kind"}:
                raise PlanError(f"model entry needs exactly 'archetype' and 'kind': {m}")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchPlan":
        d = dict(d)
        if "archetypes" in d or "kinds" in d:
            archs = d.pop("archetypes", ["GlobalMLP"])
            kinds = d.pop("kinds", ["occ"])
            d["models"] = [{"archetype": a, "kind": k} for a in archs for k in kinds]
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise PlanError(f"unknown plan keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "BenchPlan":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def cells(self) -> list[dict]:
        out = []
        for shape, model, n, seed, mask, strategy in itertools.product(
            self.shapes, self.models, self.densities, self.seeds, self.masks, self.strategies
        ):
            if mask is not None and FieldKind.parse(model["kind"]).name != "udf":
                continue
            out.append(
                {
                    "shape": shape,
                    "archetype": model["archetype"],
                    "kind": model["kind"],
                    "n": int(n),
                    "seed": int(seed),
                    "mask_tau": mask,
                    "strategy": strategy,
                    "epochs": self.epochs,
                    "resolution": self.resolution,
                    "eval_samples": self.eval_samples,
                }
            )
        return out


def cell_hash(cell: dict) -> str:
    blob = json.dumps({"v": BENCH_VERSION, **cell}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def model_id(cell: dict) -> str:
    """Everything that identifies a table row except the strategy."""
    mid = f"{cell['archetype']}/{cell['kind']}/{cell['shape']}/n{cell['n']}/s{cell['seed']}"
    return mid + (f"/mask{cell['mask_tau']:g}" if cell["mask_tau"] is not None else "")


def evaluate_model(model, shape, resolution: int = 64, samples: int = 10_000, seed: int = 0, mask_tau=None) -> dict:
    """All applicable reconstruction metrics plus a few diagnostics.

    Occ/SDF/TSDF models are meshed by marching cubes; UDF models are
    evaluated on points extracted by gradient projection (through the
    distance mask when ``mask_tau`` is set).
    """
    kind = model.kind
    rng = substream(seed, "eval")
    gt_pts, _ = shape.surface_samples(samples, rng)
    probe = rng.uniform(-0.5, 0.5, size=(10_000, 3))
    pred_probe = predict(model, probe)
    out = {"metrics": {}, "diagnostics": {"probe_mean": float(pred_probe.mean()), "probe_std": float(pred_probe.std())}}
    if kind.name == "tsdf":
        # the unclamped head output, which the loss never sees beyond the truncation
        raw = forward(model, probe)
        out["diagnostics"]["raw_probe_mean"] = float(raw.mean())
        out["diagnostics"]["raw_probe_std"] = float(raw.std())
    if kind.name == "udf":
        field_ = MaskedField(model_field(model), shape, mask_tau) if mask_tau is not None else model
        ext = extract_udf_points(field_, samples, rng=substream(seed, "extract"))
        out["diagnostics"]["extraction_shortfall"] = ext.shortfall
        if len(ext.points):
            out["metrics"][M.CHAMFER] = M.chamfer_l2(gt_pts, ext.points)
            out["metrics"][M.FSCORE] = M.f_score(gt_pts, ext.points)
        else:
            out["metrics"][M.CHAMFER] = EMPTY_CHAMFER
            out["metrics"][M.FSCORE] = 0.0
        return out
    grid = grid_eval(model, resolution)
    gt_occ = M.shape_occupancy(shape, resolution)
    out["metrics"][M.IOU] = M.iou(gt_occ, M.occupancy_from_values(grid.values, kind))
    near = shape.unsigned_distance(probe) <= 0.03
    truth = shape.signed_distance(probe) < 0
    pred_in = M.occupancy_from_values(pred_probe, kind)
    out["diagnostics"]["near_surface_accuracy"] = float(np.mean(pred_in[near] == truth[near]))
    out["diagnostics"]["far_accuracy"] = float(np.mean(pred_in[~near] == truth[~near]))
    mesh = marching_cubes(grid, iso_level(kind))
    if mesh.is_empty:
        out["metrics"].update({M.CHAMFER: EMPTY_CHAMFER, M.FSCORE: 0.0, M.NORMALS: 0.0})
        return out
    from .mesh import sample_surface

    pred_pts = sample_surface(mesh, samples, substream(seed, "pred-samples")).points
    out["metrics"][M.CHAMFER] = M.chamfer_l2(gt_pts, pred_pts)
    out["metrics"][M.FSCORE] = M.f_score(gt_pts, pred_pts)
    out["metrics"][M.NORMALS] = M.normal_consistency(shape.to_mesh(), mesh, min(samples, 5000), substream(seed, "normals"))
    return out


def model_field(model):
    from .toynet import ModelField

    return ModelField(model)


def run_cell(cell: dict, out_dir: str) -> dict:
    """Build, train and evaluate one cell; artifacts land in ``out_dir/cells``."""
    h = cell_hash(cell)
    cell_dir = os.path.join(out_dir, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    result_path = os.path.join(cell_dir, f"{h}.json")
    if os.path.exists(result_path):
        with open(result_path, "r", encoding="utf-8") as fh:
            cached = json.load(fh)
        if cached.get("hash") == h and cached.get("status") == "ok":
            return cached
    result = {"hash": h, "cell": cell, "model_id": model_id(cell)}
    try:
        shape = shape_from_spec(cell["shape"])
        kind = FieldKind.parse(cell["kind"])
        ds = build_dataset(shape, cell["strategy"], kind, cell["n"], seed=cell["seed"], mask_tau=cell["mask_tau"])
        ds_manifest = save_dataset(ds, os.path.join(cell_dir, f"{h}.dataset.json"), extra={"command": {"bench_cell": cell}})
        model = init_model(default_config(cell["archetype"], str(kind)), substream(cell["seed"], "init"))
        model.provenance = {"bench_cell": cell}
        trained = train(model, ds, TrainConfig(epochs=cell["epochs"], seed=cell["seed"]))
        ck = save_checkpoint(trained.model, os.path.join(cell_dir, f"{h}.ckpt.json"), extra={"command": {"bench_cell": cell}})
        ev = evaluate_model(trained.model, shape, cell["resolution"], cell["eval_samples"], cell["seed"], cell["mask_tau"])
        result.update(
            status="ok",
            metrics=ev["metrics"],
            diagnostics=dict(ev["diagnostics"], final_loss=trained.trace[-1], train_seconds=trained.seconds),
            dataset_sha256=ds_manifest["sha256"],
            checkpoint_sha256=ck["sha256"],
        )
    except Exception as exc:  # recorded per cell; the bench carries on
        result.update(status="error", error=f"{type(exc).__name__}: {exc}")
    with open(result_path, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def _run_cell_star(args):
    return run_cell(*args)


@dataclass
class BenchResult:
    cells: list
    report: M.MetricsReport
    dscores: dict
    findings: list
    seconds: float
    dscore_skipped: list = field(default_factory=list)

    @property
    def failed_cells(self) -> list:
        return [c for c in self.cells if c["status"] != "ok"]

    @property
    def assertions_passed(self) -> bool:
        return not self.failed_cells and all(f["status"] != "fail" for f in self.findings)


def run_bench(plan: BenchPlan, workers: int = 1, out_dir: str | None = None) -> BenchResult:
    out_dir = out_dir or plan.output
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    cells = plan.cells()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_cell_star, [(c, out_dir) for c in cells]))
    else:
        results = [run_cell(c, out_dir) for c in cells]

    report = M.MetricsReport(provenance={"plan": asdict(plan), "bench_version": BENCH_VERSION})
    for r in results:
        if r["status"] == "ok":
            for metric, value in sorted(r["metrics"].items()):
                report.add(r["model_id"], r["cell"]["strategy"], metric, value)
    dscores, skipped = _complete_dscores(report, plan.strategies)
    findings = evaluate_findings(results, dscores)
    res = BenchResult(results, report, dscores, findings, time.perf_counter() - t0, skipped)
    _write_outputs(res, plan, out_dir)
    return res


def _complete_dscores(report: M.MetricsReport, strategies) -> tuple[dict, list]:
    """D-Scores over the (model, metric) rows every strategy completed.

    Rows whose best oriented value is zero (every strategy scored 0 on a
    higher-is-better metric) rank nothing and are left out; their keys are
    returned alongside the scores.
    """
    inp = M.DScoreInput.from_report(report)
    complete, skipped = {}, []
    for key, row in inp.results.items():
        if not all(s in row for s in strategies):
            skipped.append(list(key))
            continue
        orient = inp.orientation.get(key[1], "higher")
        if orient == "higher" and max(row[s] for s in strategies) == 0:
            skipped.append(list(key))
            continue
        complete[key] = {s: row[s] for s in strategies}
    if not complete:
        return {}, skipped
    inp = M.DScoreInput(complete, inp.orientation)
    return {s: M.d_score(inp, s) for s in strategies}, skipped


def _write_outputs(res: BenchResult, plan: BenchPlan, out_dir: str) -> None:
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(res.report.to_csv())
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(res.report.to_json())
    with open(os.path.join(out_dir, "dscore.csv"), "w", encoding="utf-8") as fh:
        fh.write(M.d_score_csv(res.dscores))
    summary = {
        "plan": asdict(plan),
        "findings": res.findings,
        "dscore_skipped_rows": res.dscore_skipped,
        "failed_cells": [{"cell": c["cell"], "error": c.get("error")} for c in res.failed_cells],
        "checksums": {
            c["hash"]: {"dataset": c.get("dataset_sha256"), "checkpoint": c.get("checkpoint_sha256")}
            for c in res.cells
        },
    }
    with open(os.path.join(out_dir, "findings.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------------------
# Findings: the sampling-strategy claims, checked on whatever the plan covers
# ----------------------------------------------------------------------------


def _index(results):
    table = {}
    for r in results:
        if r["status"] != "ok":
            continue
        c = r["cell"]
        table[(c["archetype"], c["kind"], c["shape"], c["n"], c["seed"], c["mask_tau"], c["strategy"])] = r
    return table


def _finding(name, status, detail):
    return {"finding": name, "status": status, "detail": detail}


SEVEN = BUILTIN_NAMES[:7]


def evaluate_findings(results, dscores) -> list:
    t = _index(results)
    keys = {k[:6] for k in t}
    out = []

    def iou_of(k, s):
        r = t.get((*k, s))
        return None if r is None else r["metrics"].get(M.IOU)

    # MLP robustness: IoU spread over strategies, Occ head
    rows = [k for k in keys if k[0] == "GlobalMLP" and k[1] == "occ" and k[5] is None]
    for k in sorted(rows, key=str):
        vals = [iou_of(k, s) for s in SEVEN + ("S_Linear",)]
        vals = [v for v in vals if v is not None]
        if len(vals) < 2:
            continue
        spread, low = max(vals) - min(vals), min(vals)
        ok = spread <= 0.15 and low >= 0.75
        out.append(_finding(f"mlp_robustness {k[2]} n={k[3]}", "pass" if ok else "fail", {"spread": spread, "min": low}))

    # Grid interpolation fails far from the surface under S_NS
    for k in sorted((k for k in keys if k[0] == "GridInterp" and k[1] == "occ" and k[5] is None), key=str):
        a, b = t.get((*k, "S_NS")), t.get((*k, "S_FUNS"))
        if a is None or b is None:
            continue
        gap = b["metrics"][M.IOU] - a["metrics"][M.IOU]
        near = abs(b["diagnostics"]["near_surface_accuracy"] - a["diagnostics"]["near_surface_accuracy"])
        ok = gap >= 0.20 and near <= 0.05
        out.append(_finding(f"grid_near_surface_failure {k[2]} n={k[3]}", "pass" if ok else "fail", {"iou_gap": gap, "near_accuracy_diff": near}))

    # Auto-decoder degeneration under uniform TSDF sampling
    for k in sorted((k for k in keys if k[0] == "AutoDecoder" and k[1].startswith("tsdf") and k[5] is None), key=str):
        a, b = t.get((*k, "S_UNI")), t.get((*k, "S_BS"))
        if a is None or b is None:
            continue
        trunc = FieldKind.parse(k[1]).truncation
        d = a["diagnostics"]
        ok = d["probe_std"] < 0.02 and abs(d["probe_mean"] - trunc) <= 0.03 and b["metrics"][M.IOU] >= 0.80
        out.append(_finding(f"autodecoder_degeneration {k[2]} n={k[3]}", "pass" if ok else "fail",
                            {"std": d["probe_std"], "mean": d["probe_mean"], "iou_bs": b["metrics"][M.IOU]}))

    # Occ spread <= SDF spread on GlobalMLP
    for k in sorted((k for k in keys if k[0] == "GlobalMLP" and k[1] == "occ" and k[5] is None), key=str):
        ks = ("GlobalMLP", "sdf", *k[2:])
        if ks not in keys:
            continue
        vo = [iou_of(k, s) for s in SEVEN]
        vs = [iou_of(ks, s) for s in SEVEN]
        if None in vo or None in vs:
            continue
        so, ss = max(vo) - min(vo), max(vs) - min(vs)
        out.append(_finding(f"occ_tolerance {k[2]} n={k[3]}", "pass" if so <= ss else "fail", {"occ_spread": so, "sdf_spread": ss}))

    # Density: 20k vs 2k
    for k in sorted((k for k in keys if k[0] == "GlobalMLP" and k[3] == 2000), key=str):
        kd = (*k[:3], 20000, *k[4:])
        for s in ("S_BS",):
            a, b = t.get((*k, s)), t.get((*kd, s))
            if a is None or b is None or M.IOU not in a["metrics"]:
                continue
            diff = b["metrics"][M.IOU] - a["metrics"][M.IOU]
            ratio = b["diagnostics"]["train_seconds"] / a["diagnostics"]["train_seconds"]
            ok = abs(diff) <= 0.05 and ratio >= 3.0
            out.append(_finding(f"density {k[1]} {k[2]} {s}", "pass" if ok else "fail", {"iou_diff": diff, "time_ratio": ratio}))

    # Distance mask on UDF
    for k in sorted((k for k in keys if k[1] == "udf" and k[5] is not None), key=str):
        ku = (*k[:5], None)
        a, b = t.get((*ku, "S_NS")), t.get((*k, "S_NS"))
        if a is None or b is None:
            continue
        ca, cb = a["metrics"][M.CHAMFER], b["metrics"][M.CHAMFER]
        fa, fb = a["metrics"][M.FSCORE], b["metrics"][M.FSCORE]
        ok = cb <= ca / 10 and fb - fa >= 0.15
        out.append(_finding(f"distance_mask {k[0]} {k[2]}", "pass" if ok else "fail",
                            {"chamfer": [ca, cb], "fscore": [fa, fb]}))

    if "S_Linear" in dscores and len(dscores) > 2:
        med = float(np.median(list(dscores.values())))
        out.append(_finding("linear_dscore", "pass" if dscores["S_Linear"] <= med else "fail",
                            {"linear": dscores["S_Linear"], "median": med}))
    return out
