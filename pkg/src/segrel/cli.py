"""Command-line entry point.

    segrel <bench|calibrate|ood-eval|correlate|subsample-study|fid|
            plan-shift|plan-inpaint|run-inpaint|curate> [flags]

Exit codes: 0 ok, 2 validation error, 3 partial/degraded run. The
SEGREL_SERVICE_URL environment variable overrides --service. All report
files are byte-identical across runs with identical inputs and seed.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analytics, calibration, curation, genplan, ood, seg_metrics, srt
from .errors import (
    ConsistencyError,
    DataError,
    EmptyInputError,
    RejectionError,
    SegrelError,
    TransportError,
)
from .imaging import read_image_png, read_label_png, read_mask_png, write_image_png, write_mask_png
from .manifest import DatasetManifest, ManifestEntry, load_manifest, save_manifest
from .reports import read_csv, read_json, write_csv, write_json
from .service import make_client
from .types import BinaryMask, LabelMap, LogitStack

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3


# Input-path flags validated up front; --log is excluded because the verdict
# log legitimately starts out missing.
_INPUT_PATH_FLAGS = (
    "gt",
    "pred",
    "manifest",
    "plans",
    "metrics",
    "reference",
    "a",
    "b",
    "captions",
    "curation",
    "ui",
)


@dataclass
class RunConfig:
    """Validated common settings for one subcommand invocation."""

    command: str
    out: str | None
    seed: int
    service: str

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        for flag in _INPUT_PATH_FLAGS:
            value = getattr(args, flag, None)
            if value is None:
                continue
            for path in value if isinstance(value, list) else [value]:
                if not Path(path).exists():
                    raise ValueError(f"--{flag}: {path} does not exist")
        seed = getattr(args, "seed", 0)
        if not 0 <= seed < 1 << 64:
            raise ValueError(f"seed must be a 64-bit value, got {seed}")
        service = os.environ.get("SEGREL_SERVICE_URL") or getattr(args, "service", "mock")
        return cls(
            command=args.command,
            out=getattr(args, "out", None),
            seed=seed,
            service=service,
        )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _service_spec(args) -> str:
    return args.config.service


def _load_pred_manifests(paths) -> list[DatasetManifest]:
    manifests = [load_manifest(p) for p in paths]
    if not manifests:
        raise EmptyInputError("no prediction manifests given")
    return manifests


def _prediction_label(manifest: DatasetManifest, entry: ManifestEntry) -> LabelMap:
    if entry.label_path is not None:
        return read_label_png(manifest.resolve(entry.label_path), manifest.ignore_id)
    if entry.logits_path is not None:
        tensor = srt.read_tensor(manifest.resolve(entry.logits_path))
        if not isinstance(tensor, LogitStack):
            raise DataError(f"sample {entry.sample_id}: logits tensor has wrong rank")
        return LabelMap(tensor.data.argmax(axis=2).astype(np.uint8), manifest.ignore_id)
    raise DataError(f"sample {entry.sample_id}: entry has neither label_path nor logits_path")


def _group_entries(manifest: DatasetManifest):
    groups: dict[tuple[str, str], list[ManifestEntry]] = {}
    for entry in manifest.sorted_entries():
        key = (entry.model_id or "model", entry.domain_tag)
        groups.setdefault(key, []).append(entry)
    return dict(sorted(groups.items()))


# --- bench ---------------------------------------------------------------------


def cmd_bench(args) -> int:
    out = _out_dir(args)
    gt_manifest = load_manifest(args.gt)
    if not gt_manifest.entries:
        raise EmptyInputError(f"{args.gt}: manifest has no entries")
    gt_by_id = gt_manifest.by_id()
    names = seg_metrics.class_names(gt_manifest.num_classes)
    rows = []
    for pred_manifest in _load_pred_manifests(args.pred):
        if not pred_manifest.entries:
            raise EmptyInputError("prediction manifest has no entries")
        for (model_id, domain_tag), entries in _group_entries(pred_manifest).items():
            cm = seg_metrics.ConfusionMatrix.zeros(gt_manifest.num_classes)
            for entry in entries:
                ref = gt_by_id.get(entry.sample_id)
                if ref is None or ref.label_path is None:
                    raise ConsistencyError(
                        f"sample {entry.sample_id}: no ground-truth label in {args.gt}"
                    )
                gt = read_label_png(gt_manifest.resolve(ref.label_path), gt_manifest.ignore_id)
                pred = _prediction_label(pred_manifest, entry)
                try:
                    cm = seg_metrics.merge(
                        cm,
                        seg_metrics.accumulate(
                            pred, gt, gt_manifest.num_classes, gt_manifest.ignore_id
                        ),
                    )
                except DataError as exc:
                    raise DataError(f"sample {entry.sample_id}: {exc}") from exc
            for class_id, iou in seg_metrics.iou_per_class(cm):
                rows.append((model_id, domain_tag, names[class_id], iou))
            rows.append((model_id, domain_tag, "mIoU", seg_metrics.miou(cm)))
    path = out / "bench.csv"
    write_csv(path, ("model_id", "domain_tag", "metric", "value"), rows)
    print(f"wrote {path}")
    return EXIT_OK


# --- calibrate -------------------------------------------------------------------


def _calibration_loader(manifest: DatasetManifest, entry: ManifestEntry):
    def load():
        if entry.logits_path is None or entry.label_path is None:
            raise DataError(f"sample {entry.sample_id}: calibrate needs logits_path and label_path")
        tensor = srt.read_tensor(manifest.resolve(entry.logits_path))
        if not isinstance(tensor, LogitStack):
            raise DataError(f"sample {entry.sample_id}: logits tensor has wrong rank")
        gt = read_label_png(manifest.resolve(entry.label_path), manifest.ignore_id)
        return tensor, gt

    return load


def cmd_calibrate(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    if not manifest.entries:
        raise EmptyInputError(f"{args.manifest}: manifest has no entries")
    records = []
    for (model_id, domain_tag), entries in _group_entries(manifest).items():
        loaders = [_calibration_loader(manifest, e) for e in entries]
        params = calibration.fit_temperature(loaders, args.mode)

        def pooled_ece(temp):
            return calibration.ece_pooled(
                (
                    (calibration.apply_temperature(logits, temp), gt)
                    for logits, gt in (load() for load in loaders)
                ),
                bins=args.bins,
            ).ece

        ece_before = pooled_ece(calibration.TemperatureParams.scalar(1.0))
        ece_after = pooled_ece(params)
        improvement = (
            calibration.relative_ece_improvement(ece_before, ece_after)
            if ece_before > 0
            else None
        )
        records.append(
            {
                "model_id": model_id,
                "domain_tag": domain_tag,
                "mode": args.mode,
                "temperatures": [float(v) for v in params.values],
                "ece_before": ece_before,
                "ece_after": ece_after,
                "relative_improvement_pct": improvement,
            }
        )
    path = out / "calibrate.json"
    write_json(path, records)
    print(f"wrote {path}")
    return EXIT_OK


# --- ood-eval --------------------------------------------------------------------


def _accepted_sample_ids(curation_path: str, known_ids: set[str]) -> set[str]:
    records = curation.load_curation_manifest(curation_path)
    latest = curation.compact_verdicts(records)
    for sample_id in latest:
        if sample_id not in known_ids:
            raise ConsistencyError(f"curation references unknown sample {sample_id!r}")
    return {s for s, r in latest.items() if r.verdict == "accepted"}


def cmd_ood_eval(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    if not manifest.entries:
        raise EmptyInputError(f"{args.manifest}: manifest has no entries")
    known = {e.sample_id for e in manifest.entries}
    accepted: set[str] | None = None
    if args.curated_only:
        if not args.curation:
            raise ValueError("--curated-only requires --curation")
        accepted = _accepted_sample_ids(args.curation, known)
    records = []
    for model_id, entries in sorted(
        _group_by_model(manifest).items(), key=lambda kv: kv[0]
    ):
        if accepted is not None:
            entries = [e for e in entries if e.sample_id in accepted]
        if not entries:
            raise EmptyInputError(f"model {model_id}: no samples to evaluate")
        items = []
        for entry in entries:
            items.append(_ood_item(manifest, entry, args.score_fn))
        if args.per_image:
            per = [ood.evaluate_ood(s, m, e) for s, m, e in items]
            result = {
                "fpr95": float(np.mean([r.fpr95 for r in per])),
                "auroc": float(np.mean([r.auroc for r in per])),
                "aupr_in": float(np.mean([r.aupr_in for r in per])),
                "aupr_out": float(np.mean([r.aupr_out for r in per])),
                "n_in": int(sum(r.n_in for r in per)),
                "n_out": int(sum(r.n_out for r in per)),
            }
        else:
            pooled = ood.evaluate_ood_pooled(items)
            result = {
                "fpr95": pooled.fpr95,
                "auroc": pooled.auroc,
                "aupr_in": pooled.aupr_in,
                "aupr_out": pooled.aupr_out,
                "n_in": pooled.n_in,
                "n_out": pooled.n_out,
            }
        records.append(
            {
                "model_id": model_id,
                "score_fn": args.score_fn,
                "curated_only": bool(args.curated_only),
                "per_image": bool(args.per_image),
                "n_samples": len(entries),
                **result,
            }
        )
    path = out / "ood_eval.json"
    write_json(path, records)
    print(f"wrote {path}")
    return EXIT_OK


def _group_by_model(manifest: DatasetManifest) -> dict[str, list[ManifestEntry]]:
    groups: dict[str, list[ManifestEntry]] = {}
    for entry in manifest.sorted_entries():
        groups.setdefault(entry.model_id or "model", []).append(entry)
    return groups


def _ood_item(manifest: DatasetManifest, entry: ManifestEntry, score_fn: str):
    if entry.logits_path is None or entry.ood_mask_path is None:
        raise DataError(f"sample {entry.sample_id}: ood-eval needs logits_path and ood_mask_path")
    tensor = srt.read_tensor(manifest.resolve(entry.logits_path))
    if not isinstance(tensor, LogitStack):
        raise DataError(f"sample {entry.sample_id}: logits tensor has wrong rank")
    if score_fn == "entropy":
        probs = calibration.apply_temperature(tensor, calibration.TemperatureParams.scalar(1.0))
        score = ood.entropy_score(probs)
    elif score_fn == "maxlogit":
        score = ood.maxlogit_score(tensor)
    else:
        raise ValueError(f"unknown score_fn {score_fn!r}")
    ood_mask = read_mask_png(manifest.resolve(entry.ood_mask_path))
    eval_mask = None
    if entry.label_path is not None:
        label = read_label_png(manifest.resolve(entry.label_path), manifest.ignore_id)
        eval_mask = BinaryMask(label.data != manifest.ignore_id)
    return score, ood_mask, eval_mask


# --- correlate -------------------------------------------------------------------


def _metric_vectors(csv_paths, metric: str) -> dict[str, dict[str, float]]:
    """model_id -> {domain_tag -> value} for one metric name."""
    vectors: dict[str, dict[str, float]] = {}
    for path in csv_paths:
        header, rows = read_csv(path)
        if header != ["model_id", "domain_tag", "metric", "value"]:
            raise DataError(f"{path}: not a bench metrics CSV")
        for model_id, domain_tag, name, value in rows:
            if name == metric and value != "":
                vectors.setdefault(model_id, {})[domain_tag] = float(value)
    return vectors


def cmd_correlate(args) -> int:
    out = _out_dir(args)
    vectors = _metric_vectors(args.metrics, args.metric)
    models = sorted(
        m for m, v in vectors.items() if args.x_domain in v and args.y_domain in v
    )
    if len(models) < 3:
        raise EmptyInputError(
            f"need >= 3 models with {args.metric} on both domains, found {len(models)}"
        )
    xs = [vectors[m][args.x_domain] for m in models]
    ys = [vectors[m][args.y_domain] for m in models]
    pcc = analytics.pearson(xs, ys)
    fit = analytics.ols_fit(xs, ys, args.ci)
    scatter = out / "correlate_scatter.csv"
    write_csv(scatter, ("model_id", "x", "y"), list(zip(models, xs, ys)))
    report = {
        "metric": args.metric,
        "x_domain": args.x_domain,
        "y_domain": args.y_domain,
        "n": fit.n,
        "pcc": pcc,
        "fit": {
            "slope": fit.slope,
            "intercept": fit.intercept,
            "ci_level": fit.ci_level,
            "se_slope": fit.se_slope,
            "se_intercept": fit.se_intercept,
            "residual_se": fit.residual_se,
            "x_mean": fit.x_mean,
            "s_xx": fit.s_xx,
        },
    }
    path = out / "correlate.json"
    write_json(path, report)
    print(f"wrote {scatter}")
    print(f"wrote {path}")
    return EXIT_OK


# --- subsample study --------------------------------------------------------------


def cmd_subsample_study(args) -> int:
    out = _out_dir(args)
    gt_manifest = load_manifest(args.gt)
    gt_by_id = gt_manifest.by_id()
    per_model: dict[str, dict[str, object]] = {}
    for pred_manifest in _load_pred_manifests(args.pred):
        for (model_id, _), entries in _group_entries(pred_manifest).items():
            cms = per_model.setdefault(model_id, {})
            for entry in entries:
                ref = gt_by_id.get(entry.sample_id)
                if ref is None or ref.label_path is None:
                    raise ConsistencyError(
                        f"sample {entry.sample_id}: no ground-truth label in {args.gt}"
                    )
                gt = read_label_png(gt_manifest.resolve(ref.label_path), gt_manifest.ignore_id)
                pred = _prediction_label(pred_manifest, entry)
                cms[entry.sample_id] = seg_metrics.accumulate(
                    pred, gt, gt_manifest.num_classes, gt_manifest.ignore_id
                )
    sample_sets = {m: sorted(v) for m, v in per_model.items()}
    ids = next(iter(sample_sets.values()))
    for model_id, sample_ids in sample_sets.items():
        if sample_ids != ids:
            raise ConsistencyError(f"model {model_id} covers a different image set")
    per_image_values = {m: [per_model[m][s] for s in ids] for m in per_model}
    header, rows = read_csv(args.reference)
    reference: dict[str, float] = {}
    for model_id, domain_tag, name, value in rows:
        if name == "mIoU" and domain_tag == args.reference_domain:
            reference[model_id] = float(value)
    n_grid = [int(n) for n in args.n_grid.split(",")]
    result = analytics.subsample_study(
        per_image_values,
        reference,
        n_grid,
        args.repeats,
        args.seed,
        aggregate=lambda cms: seg_metrics.miou(seg_metrics.merge_all(cms)),
    )
    path = out / "subsample_study.csv"
    write_csv(path, ("n", "pcc_mean", "pcc_std"), [(r.n, r.pcc_mean, r.pcc_std) for r in result])
    print(f"wrote {path}")
    return EXIT_OK


# --- fid ---------------------------------------------------------------------------


def cmd_fid(args) -> int:
    out = _out_dir(args)
    a = srt.read_embeddings(args.a)
    b = srt.read_embeddings(args.b)
    report = {
        "frechet_distance": analytics.frechet_distance(a, b),
        "n_a": a.n,
        "n_b": b.n,
        "dim": a.dim,
    }
    path = out / "fid.json"
    write_json(path, report)
    print(f"wrote {path}")
    return EXIT_OK


# --- generation plans -----------------------------------------------------------------


def cmd_plan_shift(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    params = genplan.GenerationParams.for_preset(args.preset)
    captions = read_json(args.captions) if args.captions else None
    client = make_client(_service_spec(args)) if captions is None else None
    requests = genplan.plan_shift_generation(
        manifest, args.domain, params, args.seed, captions=captions, client=client
    )
    path = out / "shift_plans.json"
    genplan.save_shift_plans(requests, args.seed, args.domain, params, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_plan_inpaint(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    plans = genplan.plan_inpaint_generation(
        manifest, args.seed, genplan.InpaintParams(steps=args.steps)
    )
    path = out / "inpaint_plans.json"
    genplan.save_inpaint_plans(plans, args.seed, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run_inpaint(args) -> int:
    out = _out_dir(args)
    plans, _seed = genplan.load_inpaint_plans(args.plans)
    plans_dir = Path(args.plans).parent
    client = make_client(_service_spec(args))
    images_dir = out / "images"
    masks_dir = out / "masks"
    images_dir.mkdir(exist_ok=True)
    masks_dir.mkdir(exist_ok=True)

    def execute(plan: genplan.InpaintPlan):
        image_path = Path(plan.image_path)
        if not image_path.is_absolute():
            image_path = plans_dir / image_path
        image = read_image_png(image_path)
        refined, mask = genplan.run_inpaint(plan, image, client)
        write_image_png(refined, images_dir / f"{plan.sample_id}.png")
        write_mask_png(mask, masks_dir / f"{plan.sample_id}.png")
        return plan

    entries = []
    rejections = []
    with ThreadPoolExecutor(max_workers=args.max_workers) as pool:
        futures = {pool.submit(execute, plan): plan for plan in plans}
        for future, plan in futures.items():
            try:
                future.result()
                entries.append(
                    ManifestEntry(
                        sample_id=plan.sample_id,
                        image_path=f"images/{plan.sample_id}.png",
                        ood_mask_path=f"masks/{plan.sample_id}.png",
                        domain_tag=f"inpaint:{plan.object_name}",
                    )
                )
            except (RejectionError, TransportError, SegrelError, OSError) as exc:
                rejections.append(
                    {
                        "sample_id": plan.sample_id,
                        "error_type": type(exc).__name__,
                        "message": str(exc),
                    }
                )
    entries.sort(key=lambda e: e.sample_id)
    rejections.sort(key=lambda r: r["sample_id"])
    manifest = DatasetManifest(entries=tuple(entries), num_classes=2, ignore_id=255)
    save_manifest(manifest, out / "generated_manifest.json")
    write_json(out / "rejections.json", rejections)
    print(f"generated {len(entries)} samples, rejected {len(rejections)}")
    return EXIT_PARTIAL if rejections else EXIT_OK


# --- curation --------------------------------------------------------------------------


def cmd_curate_serve(args) -> int:
    manifest = load_manifest(args.manifest)
    server = curation.CurationServer(
        manifest, args.log, ui_dir=args.ui, host=args.host, port=args.port
    )
    print(f"curation server on {server.url} (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_curate_export(args) -> int:
    records = curation.export_verdicts(args.log, args.out)
    print(f"wrote {args.out} ({len(records)} records)")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segrel", description="Reliability assessment toolkit for semantic segmentation"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="per-model per-domain mIoU and per-class IoU")
    p.add_argument("--gt", required=True, help="ground-truth manifest JSON")
    p.add_argument("--pred", required=True, action="append", help="prediction manifest JSON (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", help="fit temperature scaling and report ECE")
    p.add_argument("--manifest", required=True, help="manifest with logits_path + label_path")
    p.add_argument("--mode", choices=("scalar", "per_class"), default="scalar")
    p.add_argument("--bins", type=int, default=calibration.DEFAULT_BINS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ood-eval", help="pixel-level OOD detection metrics")
    p.add_argument("--manifest", required=True, help="manifest with logits_path + ood_mask_path")
    p.add_argument("--score-fn", choices=("entropy", "maxlogit"), default="entropy")
    p.add_argument("--curated-only", action="store_true")
    p.add_argument("--curation", help="curation manifest JSON (with --curated-only)")
    p.add_argument("--per-image", action="store_true", help="average per-image metrics instead of pooling")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ood_eval)

    p = sub.add_parser("correlate", help="cross-domain correlation and regression")
    p.add_argument("--metrics", required=True, action="append", help="bench CSV (repeatable)")
    p.add_argument("--x", dest="x_domain", required=True)
    p.add_argument("--y", dest="y_domain", required=True)
    p.add_argument("--metric", default="mIoU")
    p.add_argument("--ci", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("subsample-study", help="correlation stability vs sample count")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, action="append")
    p.add_argument("--reference", required=True, help="bench CSV holding the reference mIoU")
    p.add_argument("--reference-domain", required=True)
    p.add_argument("--n-grid", required=True, help="comma-separated sample counts")
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subsample_study)

    p = sub.add_parser("fid", help="Fréchet distance between embedding sets")
    p.add_argument("--a", required=True, help="SRT1 rank-2 f64 tensor")
    p.add_argument("--b", required=True, help="SRT1 rank-2 f64 tensor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fid)

    p = sub.add_parser("plan-shift", help="plan covariate-shift generation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--preset", choices=("sd15", "sdxl"), default="sd15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--captions", help="JSON {sample_id: caption}; otherwise the service /caption is used")
    p.add_argument("--service", default="mock")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan_shift)

    p = sub.add_parser("plan-inpaint", help="plan OOD-object inpainting")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan_inpaint)

    p = sub.add_parser("run-inpaint", help="execute inpaint plans against a service")
    p.add_argument("--plans", required=True)
    p.add_argument("--service", default="mock")
    p.add_argument("--max-workers", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_inpaint)

    p = sub.add_parser("curate", help="human curation server / export")
    curate_sub = p.add_subparsers(dest="curate_command", required=True)
    ps = curate_sub.add_parser("serve", help="serve the review API and frontend")
    ps.add_argument("--manifest", required=True, help="generated dataset manifest")
    ps.add_argument("--log", required=True, help="append-only verdict log (JSON lines)")
    ps.add_argument("--ui", help="directory with the built frontend")
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8764)
    ps.set_defaults(func=cmd_curate_serve)
    pe = curate_sub.add_parser("export", help="compact the verdict log into a curation manifest")
    pe.add_argument("--log", required=True)
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=cmd_curate_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.config = RunConfig.from_args(args)
        return args.func(args)
    except (SegrelError, ValueError, ZeroDivisionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
