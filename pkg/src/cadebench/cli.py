"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 I/O failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .augment import Preset, apply_logged, pretrain_views, sample_rng
from .consensus import (
    GtStrategy,
    ExpertDelineation,
    argos_consensus,
    born_consensus,
    consensus_from_experts,
)
from .core import (
    DatasetManifest,
    load_binary_mask,
    load_image,
    load_manifest,
    rebase_record,
    resize_nearest,
    resize_to_model_input,
    save_binary_mask,
    save_image,
    save_manifest,
    save_soft_mask,
    worker_count,
)
from .corrupt import generate, plan_corruption, plan_log_lines
from .errors import CadeError, ValidationError
from .evaluation import (
    EvalConfig,
    EvalReport,
    FusionStrategy,
    evaluate,
    gt_mask_for,
    load_predictions,
    provenance,
)
from .plots import Bar, PlotSpec, render_barplot, render_tables
from .stats import compare_models, grids_from_reports
from .training import config_preset, plan_frame_addition

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64
SEED_MAX = 2 ** 64 - 1
PATH_ARGS = ("manifest", "out_dir", "frames", "base", "out", "config_out", "pred", "reports")


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(args, *names):
    for name in names:
        if getattr(args, name) in (None, []):
            raise ValidationError(f"--{name.replace('_', '-')} is required for {args.command}")


def _map(fn, items):
    n = worker_count()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_augment(args) -> dict:
    _require(args, "seed")
    manifest = load_manifest(args.manifest)
    preset = Preset(args.preset)
    out = args.out_dir
    log_lines = []

    if preset.is_pretrain:
        flavor = "ndsa" if preset is Preset.PRETRAIN_NDSA else "dsa"

        def run(rec):
            img = load_image(manifest.resolve(rec.image_path), rec.crop)
            views = pretrain_views(img, flavor, args.views, rec.id, args.seed, normalized=False)
            named = {"global1": views.global1, "global2": views.global2,
                     **{f"local{i}": v for i, v in enumerate(views.locals)}}
            for key, v in named.items():
                save_image(out / "images" / f"{rec.id}_{key}.png", v)
            return {"id": rec.id, "seed": args.seed,
                    "views": {k: [t.to_json() for t in log] for k, log in views.logs.items()}}

        log_lines = _map(run, manifest.records)
        records = None
    else:
        def run(rec):
            img = resize_to_model_input(load_image(manifest.resolve(rec.image_path), rec.crop), args.size)
            mask = gt_mask_for(manifest, rec, args.gt)
            if mask is not None:
                if rec.crop is not None:
                    x, y, w, h = rec.crop
                    mask = mask[y:y + h, x:x + w]
                mask = resize_nearest(mask, args.size, args.size)
            img, mask, log = apply_logged(preset, img, mask, rec.id, args.seed, args.val_cap)
            image_rel = f"images/{rec.id}.png"
            save_image(out / image_rel, img)
            gt = {}
            if mask is not None:
                gt = {args.gt: f"masks/{rec.id}.png"}
                save_binary_mask(out / gt[args.gt], mask)
            new = rebase_record(rec, manifest.root, out, image_path=image_rel, crop=None,
                                delineations=(), gt=gt)
            return new, {"id": rec.id, "seed": args.seed, "transforms": [t.to_json() for t in log]}

        results = _map(run, manifest.records)
        records = [r for r, _ in results]
        log_lines = [line for _, line in results]
        save_manifest(out / "manifest.jsonl", DatasetManifest(
            f"{manifest.name}-{preset.value}", manifest.split, tuple(records), root=out))

    (out / "augment_log.jsonl").write_text(
        "".join(json.dumps(x, sort_keys=True) + "\n" for x in log_lines), encoding="utf-8")
    return {"preset": preset.value, "samples": len(log_lines), "out_dir": str(out)}


def cmd_corrupt(args) -> dict:
    _require(args, "seed")
    manifest = load_manifest(args.manifest)
    plans = plan_corruption(manifest, args.seed, args.replicates, args.max_k)
    derived, logs = generate(manifest, plans, args.out_dir)
    (args.out_dir / "plan.jsonl").write_text(plan_log_lines(logs), encoding="utf-8")
    save_manifest(args.out_dir / "manifest.jsonl", derived)
    return {"inputs": len(manifest), "outputs": len(derived), "out_dir": str(args.out_dir)}


_ALL_STRATEGIES = ("soft", "plausible", "sweet", "hard", "average")


def cmd_consensus(args) -> dict:
    manifest = load_manifest(args.manifest)
    out = args.out_dir
    strategies = _ALL_STRATEGIES if args.strategy == "all" else (args.strategy,)
    if args.rule != "pairwise" and args.strategy not in ("all", "plausible"):
        raise ValidationError(f"--strategy applies to the pairwise rule only, not {args.rule}")
    if args.quorum is not None and args.rule != "majority":
        raise ValidationError("--quorum applies to the majority rule only")

    def load_ll(rec):
        return [load_binary_mask(manifest.resolve(d.ll_path)) for d in rec.delineations]

    def run(rec):
        gt = dict(rec.gt)
        log = {"id": rec.id, "n_experts": len(rec.delineations)}
        if args.rule == "pairwise":
            usable = [d for d in rec.delineations if d.hl_path is not None]
            if len(usable) < 2:
                return rebase_record(rec, manifest.root, out), None
            experts = [ExpertDelineation(d.expert_id, load_binary_mask(manifest.resolve(d.ll_path)),
                                         load_binary_mask(manifest.resolve(d.hl_path))) for d in usable]
            cs, sel = consensus_from_experts(experts)
            for s in strategies:
                rel = f"gt/{s}/{rec.id}.png"
                if s == GtStrategy.AVERAGE.value:
                    save_soft_mask(out / rel, cs.average)
                else:
                    save_binary_mask(out / rel, cs.get(s))
                gt[s] = rel
            log.update(pair=[usable[i].expert_id for i in sel.pair], pair_index=list(sel.pair),
                       hl_dice=sel.hl_dice, agreed=sel.agreed)
            if not sel.agreed and len(usable) == 2:
                log["needs_third_opinion"] = True
        else:
            if not rec.delineations:
                return rebase_record(rec, manifest.root, out), None
            masks = load_ll(rec)
            if args.rule == "intersection":
                mask = born_consensus(masks)
            else:
                quorum = args.quorum if args.quorum is not None else len(masks) // 2 + 1
                mask = argos_consensus(masks, quorum)
                log["quorum"] = quorum
            rel = f"gt/{args.rule}/{rec.id}.png"
            save_binary_mask(out / rel, mask)
            gt[args.rule] = rel
        rebased = rebase_record(rec, manifest.root, out)
        return rebase_record(rebased, out, out, gt=gt), log

    results = _map(run, manifest.records)
    records = tuple(r for r, _ in results)
    logs = [log for _, log in results if log is not None]
    save_manifest(out / "manifest.jsonl", DatasetManifest(manifest.name, manifest.split, records, root=out))
    (out / "consensus_log.jsonl").write_text(
        "".join(json.dumps(x, sort_keys=True) + "\n" for x in logs), encoding="utf-8")
    return {"rule": args.rule, "samples_with_gt": len(logs), "out_dir": str(out)}


def cmd_plan(args) -> dict:
    _require(args, "seed", "frames", "base", "out")
    out_root = args.out.parent
    base = load_manifest(args.base)
    frames = load_manifest(args.frames)
    base = DatasetManifest(base.name, base.split,
                           tuple(rebase_record(r, base.root, out_root) for r in base.records), root=out_root)
    frames = DatasetManifest(frames.name, frames.split,
                             tuple(rebase_record(r, frames.root, out_root) for r in frames.records),
                             root=out_root)
    tiers = [t for t in args.tiers.split(",") if t.strip()]
    rng = sample_rng(args.seed, "frame-addition")
    merged, plan = plan_frame_addition(base, frames, tiers, args.fraction, rng)
    save_manifest(args.out, merged)
    if args.config_out is not None:
        _write_json(args.config_out, config_preset())
    return {"added": {t.value: len(ids) for t, ids in plan.selected.items()},
            "total": len(merged), "out": str(args.out)}


def cmd_evaluate(args) -> dict:
    _require(args, "manifest", "pred", "out")
    manifest = load_manifest(args.manifest)
    runs = [load_predictions(p) for p in args.pred]
    config = EvalConfig(fusion=tuple(args.fusion), gt=args.gt, threshold=args.threshold)
    model = args.model or Path(args.pred[0]).stem
    report = evaluate(manifest, runs, config, model=model, test_set=args.test_set)
    report.provenance = provenance(args.manifest, args.pred)
    _write_json(args.out, report.to_json())
    return {"model": model, "test_set": report.test_set, "n_runs": report.n_runs, "out": str(args.out)}


def _load_reports(paths) -> list[EvalReport]:
    reports = []
    for p in paths:
        try:
            obj = json.loads(Path(p).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{p}: not valid JSON ({exc})") from None
        items = obj["reports"] if isinstance(obj, dict) and "reports" in obj else [obj]
        for item in items:
            rep = EvalReport.from_json(item)
            if not rep.model:
                rep.model = Path(p).stem
            reports.append(rep)
    return reports


def cmd_compare(args) -> dict:
    _require(args, "reports", "out")
    reports = _load_reports(args.reports)
    grids = grids_from_reports(reports)
    reference = args.reference or reports[0].model
    result = compare_models(grids, reference, alpha=args.alpha)
    _write_json(args.out, result.to_json())
    n_sig = sum(c.significant for c in result.comparisons)
    return {"reference": reference, "tests": len(result.comparisons), "significant": n_sig,
            "out": str(args.out)}


def check_provenance(reports) -> None:
    """Refuse to aggregate reports built from different inputs or settings."""
    configs = {json.dumps(r.config, sort_keys=True) for r in reports}
    if len(configs) > 1:
        raise ValidationError("reports were produced with different evaluation settings")
    by_set: dict[str, str] = {}
    for r in reports:
        digest = (r.provenance.get("manifest") or {}).get("sha256")
        if digest is None:
            raise ValidationError(f"report for {r.model!r} on {r.test_set!r} carries no provenance")
        seen = by_set.setdefault(r.test_set, digest)
        if seen != digest:
            raise ValidationError(f"reports for test set {r.test_set!r} come from different manifests")


def cmd_report(args) -> dict:
    _require(args, "reports", "out_dir")
    reports = _load_reports(args.reports)
    check_provenance(reports)
    table = render_tables(reports)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.csv").write_text(table.csv, encoding="utf-8")
    (out / "table.txt").write_text(table.text, encoding="utf-8")
    _write_json(out / "report_set.json", {"reports": [r.to_json() for r in reports]})

    plots = []
    for test_set in sorted({r.test_set for r in reports}):
        subset = [r for r in reports if r.test_set == test_set]
        if args.metric not in subset[0].metrics:
            raise ValidationError(f"metric {args.metric!r} absent; available: {sorted(subset[0].metrics)}")
        reference = None
        bars = []
        for r in subset:
            s = r.metrics[args.metric]
            if args.reference is not None and r.model == args.reference:
                reference = (s.mean, s.std)
            else:
                bars.append(Bar(r.model, s.mean, s.std))
        if args.reference is not None and reference is None:
            raise ValidationError(f"reference model {args.reference!r} has no report on {test_set!r}")
        if not bars:
            continue
        path = out / "plots" / f"{test_set}_{args.metric}.svg"
        render_barplot(PlotSpec(f"{test_set}: {args.metric}", tuple(bars), reference), path)
        plots.append(str(path))
    return {"rows": len(table.rows), "columns": len(table.columns), "plots": plots, "out_dir": str(out)}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> Parser:
    p = Parser(prog="cadebench", description="CADe benchmarking toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--work-dir", type=Path, help="resolve relative paths against this directory")
    sub = p.add_subparsers(dest="command", metavar="command")

    a = sub.add_parser("augment", help="augment a manifest with a preset")
    a.add_argument("--preset", required=True, choices=[x.value for x in Preset])
    a.add_argument("--seed", type=_seed)
    a.add_argument("--manifest", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--views", type=int, default=8, help="local views per image (pretraining presets)")
    a.add_argument("--val-cap", type=int, default=None, help="use only the first N options per transform")
    a.add_argument("--size", type=int, default=256, help="model input side before augmentation")
    a.add_argument("--gt", default="plausible", help="GT mask carried along with the image")
    a.set_defaults(func=cmd_augment)

    c = sub.add_parser("corrupt", help="generate a corrupted test set")
    c.add_argument("--manifest", required=True)
    c.add_argument("--seed", type=_seed)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--replicates", type=int, default=5)
    c.add_argument("--max-k", type=int, default=5)
    c.set_defaults(func=cmd_corrupt)

    k = sub.add_parser("consensus", help="build consensus GT masks")
    k.add_argument("--manifest", required=True)
    k.add_argument("--strategy", default="all", choices=[*_ALL_STRATEGIES, "all"])
    k.add_argument("--rule", default="pairwise", choices=["pairwise", "intersection", "majority"])
    k.add_argument("--quorum", type=int)
    k.add_argument("--out-dir", required=True)
    k.set_defaults(func=cmd_consensus)

    n = sub.add_parser("plan", help="add video frames to a training manifest")
    n.add_argument("--frames")
    n.add_argument("--base")
    n.add_argument("--tiers", default="hq")
    n.add_argument("--fraction", type=float, default=0.10)
    n.add_argument("--seed", type=_seed)
    n.add_argument("--out")
    n.add_argument("--config-out", help="also write the training config preset here")
    n.set_defaults(func=cmd_plan)

    e = sub.add_parser("evaluate", help="score prediction files")
    e.add_argument("--manifest")
    e.add_argument("--pred", nargs="+")
    e.add_argument("--fusion", nargs="+", default=["average", "or", "and"],
                   choices=[f.value for f in FusionStrategy])
    e.add_argument("--gt", default="plausible")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--model")
    e.add_argument("--test-set")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("compare", help="Wilcoxon/BH comparison of models")
    m.add_argument("--reports", nargs="+")
    m.add_argument("--reference")
    m.add_argument("--alpha", type=float, default=0.05)
    m.add_argument("--out")
    m.set_defaults(func=cmd_compare)

    r = sub.add_parser("report", help="tables and bar plots from evaluation reports")
    r.add_argument("--reports", nargs="+")
    r.add_argument("--out-dir")
    r.add_argument("--metric", default="AUROC_cls")
    r.add_argument("--reference")
    r.set_defaults(func=cmd_report)
    return p


def _resolve_paths(args) -> None:
    base = args.work_dir
    for name in PATH_ARGS:
        value = getattr(args, name, None)
        if value is None:
            continue

        def fix(v):
            v = Path(v)
            return v if base is None or v.is_absolute() else base / v

        setattr(args, name, [fix(v) for v in value] if isinstance(value, list) else fix(value))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _resolve_paths(args)
    try:
        summary = args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
