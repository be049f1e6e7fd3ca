"""Command-line driver: ``implicit-sampling <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed assertions.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import metrics as M
from ._rng import substream
from .fields import FieldKind, shape_from_spec
from .mesh import load_mesh, normalize, save_mesh
from .sampling import BUILTIN_NAMES, build_dataset, load_dataset, save_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ASSERT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _provenance(args) -> dict:
    return {"command": {"tool": "implicit-sampling", "version": __version__, "argv": args._argv}}


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------


def cmd_normalize(args) -> int:
    mesh = load_mesh(args.input, triangulate=args.triangulate)
    out = normalize(mesh, args.padding)
    _ensure_parent(args.output)
    save_mesh(out, args.output, comment=json.dumps(_provenance(args), sort_keys=True))
    lo, hi = out.bounds()
    print(f"{args.output}: {len(out.vertices)} vertices, {len(out.triangles)} triangles, bounds {lo.round(6).tolist()} .. {hi.round(6).tolist()}")
    return EXIT_OK


def cmd_sample(args) -> int:
    shape = shape_from_spec(args.shape)
    kind = FieldKind.parse(args.kind)
    ds = build_dataset(shape, args.strategy, kind, args.n, seed=args.seed, mask_tau=args.mask)
    _ensure_parent(args.output)
    manifest = save_dataset(ds, args.output, extra=_provenance(args))
    g = shape.unsigned_distance(ds.points)
    deciles = np.quantile(g, np.linspace(0.1, 0.9, 9))
    print(f"{args.output}: {len(ds)} points, strategy {ds.provenance['strategy']}, kind {kind}")
    names = [c["kind"] + (f"(sigma={c['sigma']:g})" if c.get("sigma") else "") for c in ds.provenance["spec"]["components"]]
    print("components: " + ", ".join(f"{k}={c}" for k, c in zip(names, ds.provenance["component_counts"])))
    if ds.mask is not None:
        print(f"mask: {int(ds.mask.sum())} kept, {int((~ds.mask).sum())} masked at tau={args.mask:g}")
    print("g deciles: " + " ".join(f"{d:.4f}" for d in deciles))
    print(f"sha256 {manifest['sha256']}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .toynet import TrainConfig, default_config, init_model, save_checkpoint, train

    datasets = [load_dataset(p) for p in args.data]
    kinds = {ds.provenance.get("kind") for ds in datasets}
    if len(kinds) != 1:
        raise UsageError(f"datasets mix field kinds: {sorted(map(str, kinds))}")
    kind = kinds.pop()
    if len(datasets) > 1 and args.archetype == "GridInterp":
        raise UsageError("GridInterp trains on a single dataset")
    config = default_config(args.archetype, kind, n_shapes=len(datasets))
    model = init_model(config, substream(args.seed, "init"))
    model.provenance = {
        "datasets": [
            {"path": p, "strategy": ds.provenance.get("strategy"), "shape": ds.provenance.get("shape"), "seed": ds.provenance.get("seed")}
            for p, ds in zip(args.data, datasets)
        ],
        "strategy": datasets[0].provenance.get("strategy"),
        "shape": datasets[0].provenance.get("shape"),
    }
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    result = train(model, datasets, tc)
    _ensure_parent(args.output)
    header = save_checkpoint(result.model, args.output, extra=_provenance(args))
    print(f"{args.output}: {args.archetype}/{kind}, {result.model.params.size} parameters, "
          f"final loss {result.trace[-1]:.6g}, {result.seconds:.1f}s")
    print(f"sha256 {header['sha256']}")
    return EXIT_OK


def cmd_extract(args) -> int:
    from .toynet import MaskedField, ModelField, extract_udf_points, grid_eval, iso_level, load_checkpoint, marching_cubes

    model = load_checkpoint(args.checkpoint)
    method = args.method or ("udf" if model.kind.name == "udf" else "mesh")
    prov = dict(_provenance(args), model=model.provenance)
    if method == "mesh":
        if model.kind.name == "udf":
            raise UsageError("a UDF model has no sign change to mesh; use --method udf")
        mesh = marching_cubes(grid_eval(model, args.resolution, args.shape_id), iso_level(model.kind))
        _ensure_parent(args.output)
        save_mesh(mesh, args.output, comment=json.dumps(prov, sort_keys=True))
        print(f"{args.output}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
        return EXIT_OK
    field = ModelField(model, args.shape_id)
    if args.mask is not None:
        if args.shape is None:
            raise UsageError("--mask needs --shape to measure distances")
        field = MaskedField(field, shape_from_spec(args.shape), args.mask)
    ext = extract_udf_points(field, args.n, steps=args.steps, rng=substream(args.seed, "extract"))
    _ensure_parent(args.output)
    header = json.dumps(dict(prov, shortfall=ext.shortfall, seeds=ext.seeds), sort_keys=True)
    np.savetxt(args.output, ext.points, fmt="%.17g", header=header)
    print(f"{args.output}: {len(ext.points)} points from {ext.seeds} seeds (shortfall {ext.shortfall})")
    return EXIT_OK if ext.shortfall == 0 else EXIT_DATA


def cmd_eval(args) -> int:
    from .bench import evaluate_model
    from .toynet import load_checkpoint

    shape = shape_from_spec(args.shape)
    report = M.MetricsReport(provenance=_provenance(args))
    for path in args.checkpoint:
        model = load_checkpoint(path)
        strategy = model.provenance.get("strategy") or "unknown"
        model_name = args.label or f"{model.archetype}/{model.kind}/{shape.shape_id}"
        ev = evaluate_model(model, shape, args.resolution, args.samples, args.seed, args.mask)
        for metric, value in sorted(ev["metrics"].items()):
            report.add(model_name, strategy, metric, value)
            print(f"{model_name}\t{strategy}\t{metric}\t{value:.6g}")
    _ensure_parent(args.output + ".csv")
    with open(args.output + ".csv", "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    with open(args.output + ".json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BenchPlan, run_bench

    plan = BenchPlan.load(args.plan)
    out = args.output or plan.output
    res = run_bench(plan, workers=args.workers, out_dir=out)
    for f in res.findings:
        print(f"{f['status'].upper():4s}  {f['finding']}  {json.dumps(f['detail'], sort_keys=True)}")
    for c in res.failed_cells:
        print(f"ERROR cell {c['model_id']} {c['cell']['strategy']}: {c.get('error')}", file=sys.stderr)
    print(M.d_score_csv(res.dscores), end="")
    print(f"{len(res.cells)} cells in {res.seconds:.1f}s -> {out}")
    if args.assert_ and not res.assertions_passed:
        return EXIT_ASSERT
    return EXIT_OK


def _parse_weights(items) -> dict | None:
    if not items:
        return None
    weights = {}
    for item in items:
        name, sep, value = item.rpartition("=")
        if not sep:
            raise UsageError(f"weight must look like METRIC=VALUE, got {item!r}")
        weights[name] = float(value)
    return weights


def cmd_dscore(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        report = M.MetricsReport.from_csv(fh.read())
    weights = _parse_weights(args.weight)
    if weights is not None:
        # unnamed metrics keep the default weight of one
        names = {e.metric for e in report.entries}
        unknown = set(weights) - names
        if unknown:
            raise UsageError(f"no such metric in the report: {sorted(unknown)}")
        weights = {m: weights.get(m, 1.0) for m in names}
    inp = M.DScoreInput.from_report(report, weights)
    text = M.d_score_csv(M.d_score_table(inp))
    if args.output:
        _ensure_parent(args.output)
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


# ----------------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .toynet import ARCHETYPES

    p = _Parser(prog="implicit-sampling", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("normalize", help="center a mesh and scale it into the unit box")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--padding", type=float, default=0.0)
    s.add_argument("--triangulate", action="store_true", help="fan-split polygon faces")
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("sample", help="sample and label a query-point dataset")
    s.add_argument("--shape", required=True, help="sphere, box, torus, key=value variants, or a mesh path")
    s.add_argument("--strategy", required=True, choices=BUILTIN_NAMES)
    s.add_argument("--kind", required=True, help="occ, sdf, tsdf[:t] or udf")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--mask", type=float, default=None, metavar="TAU", help="distance mask (UDF only)")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", help="train a toy network on one or more datasets")
    s.add_argument("--data", required=True, nargs="+")
    s.add_argument("--archetype", required=True, choices=ARCHETYPES)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--epochs", type=int, default=500)
    s.add_argument("--batch-size", type=int, default=512)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", help="mesh a model by marching cubes or pull UDF surface points")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--method", choices=("mesh", "udf"), default=None)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--mask", type=float, default=None, metavar="TAU")
    s.add_argument("--shape", default=None, help="reference shape for --mask")
    s.add_argument("--shape-id", type=int, default=0)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("eval", help="score checkpoints against an analytic or mesh shape")
    s.add_argument("--checkpoint", required=True, nargs="+")
    s.add_argument("--shape", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--mask", type=float, default=None, metavar="TAU")
    s.add_argument("--label", default=None, help="model name for the report rows")
    s.add_argument("--output", required=True, help="prefix for .csv and .json reports")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="run a JSON bench plan end to end")
    s.add_argument("--plan", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--output", default=None)
    s.add_argument("--assert", dest="assert_", action="store_true", help="exit 3 if any finding fails")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("dscore", help="D-Score table from a report CSV")
    s.add_argument("--report", required=True)
    s.add_argument("--weight", action="append", metavar="METRIC=W")
    s.add_argument("--output", default=None)
    s.set_defaults(func=cmd_dscore)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    args._argv = argv
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"implicit-sampling {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"implicit-sampling {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
