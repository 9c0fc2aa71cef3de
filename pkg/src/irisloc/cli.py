"""Command-line interface.

    irisloc synth     --n 50 --out data/
    irisloc localize  data/ --out results/
    irisloc evaluate  results/ data/ --out report/
    irisloc encode    data/ results/ --out templates/
    irisloc pairs     data/manifest.csv --out pairs.csv
    irisloc match     templates/ pairs.csv --out scores.csv
    irisloc verify    scores.csv
    irisloc gradcheck --seed 0
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .exceptions import IrisError
from .imaging import Circle, threshold_window
from .localization import LocalizationParams, localize
from .losses import gradcheck
from .metrics import aggregate, score_image
from .recognition import encode, match, normalize, verification_stats
from .synth import CorruptionSpec, generate, random_spec

GRADCHECK_TOL = 1e-4
PRED_MASK_WINDOW = (128, 255)

# -- settings -----------------------------------------------------------------


def _settings(args) -> dict:
    cfg = io.read_config(args.config) if getattr(args, "config", None) else {}
    for key in ("n_angles", "delta", "rows", "cols", "wavelength", "sigma_ratio", "max_shift"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _loc_params(cfg) -> LocalizationParams:
    d = LocalizationParams()
    return LocalizationParams(
        mask_window=(cfg.get("mask_lo", d.mask_window[0]), cfg.get("mask_hi", d.mask_window[1])),
        center_window=(cfg.get("center_lo", d.center_window[0]), cfg.get("center_hi", d.center_window[1])),
        boundary_window=(cfg.get("boundary_lo", d.boundary_window[0]), cfg.get("boundary_hi", d.boundary_window[1])),
        n_angles=cfg.get("n_angles", d.n_angles),
        delta=cfg.get("delta", d.delta),
        ring_tolerance=cfg.get("ring_tolerance", d.ring_tolerance),
    )


def _pool_map(fn, items, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(item) for item in items]


def _read_manifest(directory) -> list[dict]:
    path = Path(directory) / "manifest.csv"
    if not path.exists():
        return []
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# -- synth ----------------------------------------------------------------------


def _synth_one(job):
    out, case_id, seed, corruption, rotation, texture_seed = job
    if texture_seed is None:
        spec = random_spec(seed, corruption=corruption)
    else:
        # every sample of a subject shares geometry and texture
        spec = replace(random_spec(texture_seed, corruption=corruption), sample_seed=seed, rotation_deg=rotation)
    image, gt, maps = generate(spec)
    out = Path(out)
    io.write_pgm(out / f"{case_id}.pgm", image)
    io.write_probmaps(out / f"{case_id}.fmap", maps)
    io.write_mask(out / f"{case_id}_mask.pgm", gt.mask)
    ann = io.annotation_dict(case_id, gt.pupil_center, gt.inner, gt.outer, f"{case_id}_mask.pgm")
    io.write_annotation(out / f"{case_id}.json", ann)
    return case_id


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corruption = CorruptionSpec(
        edge_width=args.edge_width,
        blob_count=args.blobs,
        blob_intensity=args.blob_intensity,
        map_noise_sigma=args.noise,
        occlusion_fraction=args.occlusion,
    )
    seeds = np.random.SeedSequence(args.seed)
    jobs, rows = [], []
    if args.samples_per_subject:
        rng = np.random.default_rng(seeds.spawn(1)[0])
        for s in range(args.n):
            texture_seed = int(rng.integers(2**31))
            for k in range(args.samples_per_subject):
                case_id = f"subj{s:04d}_s{k}"
                rotation = 0.0 if k == 0 else float(rng.uniform(0.0, args.max_rotation))
                jobs.append((out, case_id, int(rng.integers(2**31)), corruption, rotation, texture_seed))
                rows.append({"id": case_id, "subject": f"subj{s:04d}"})
    else:
        for i, child in enumerate(seeds.spawn(args.n)):
            case_id = f"case{i:04d}"
            jobs.append((out, case_id, int(child.generate_state(1)[0]), corruption, 0.0, None))
            rows.append({"id": case_id, "subject": case_id})
    _pool_map(_synth_one, jobs, args.jobs)
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["id", "subject"])
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} cases to {out}")
    return 0


# -- localize ----------------------------------------------------------------------


def _localize_one(job):
    path, out, params = job
    case_id = Path(path).name[: -len(".fmap")]
    maps = io.read_probmaps(path)
    io.write_mask(Path(out) / f"{case_id}.mask.pgm", threshold_window(maps.mask, *PRED_MASK_WINDOW))
    try:
        res = localize(maps, params)
    except IrisError as exc:
        record = {"id": case_id, "status": "failed", "reason": getattr(exc, "reason", type(exc).__name__)}
    else:
        record = {"id": case_id, "status": "ok", **res.to_dict()}
    (Path(out) / f"{case_id}.result.json").write_text(json.dumps(record, indent=2) + "\n")
    return record


def cmd_localize(args) -> int:
    params = _loc_params(_settings(args))
    src = Path(args.input)
    if src.is_dir():
        manifest = _read_manifest(src)
        paths = [src / f"{r['id']}.fmap" for r in manifest] if manifest else sorted(src.glob("*.fmap"))
    else:
        paths = [src]
    if not paths:
        print(f"no FMAP inputs found in {src}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = _pool_map(_localize_one, [(p, out, params) for p in paths], args.jobs)
    with open(out / "results.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "status", "reason"])
        for r in records:
            w.writerow([r["id"], r["status"], r.get("reason", "")])
    ok = sum(r["status"] == "ok" for r in records)
    print(f"localized {ok}/{len(records)} images")
    return 0 if ok else 1


# -- evaluate --------------------------------------------------------------------


def _annotation_ids(gt_dir):
    return sorted(p.stem for p in Path(gt_dir).glob("*.json") if not p.name.endswith(".result.json"))


def cmd_evaluate(args) -> int:
    results, gt_dir = Path(args.results), Path(args.gt)
    ids = _annotation_ids(gt_dir)
    rows, skipped = [], []
    for case_id in ids:
        res_path = results / f"{case_id}.result.json"
        mask_path = results / f"{case_id}.mask.pgm"
        if not res_path.exists() or not mask_path.exists():
            skipped.append(case_id)
            continue
        ann = io.read_annotation(gt_dir / f"{case_id}.json")
        gt_mask = io.read_mask_pgm(gt_dir / ann["mask_path"])
        pred = json.loads(res_path.read_text())
        inner = outer = None
        if pred.get("status", "ok") == "ok":
            inner, outer = Circle.from_dict(pred["inner"]), Circle.from_dict(pred["outer"])
        rows.append(
            score_image(
                case_id, gt_mask, io.read_mask_pgm(mask_path),
                Circle.from_dict(ann["inner"]), Circle.from_dict(ann["outer"]), inner, outer,
            )
        )
    for case_id in skipped:
        print(f"skipped {case_id}: no matching result", file=sys.stderr)
    if not rows:
        print("no image could be evaluated", file=sys.stderr)
        return 1
    report = aggregate(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, report)
    seg, loc = report.segmentation, report.localization
    print(
        f"n={report.n} E1={seg.e1:.5f} E2={seg.e2:.5f} F1={seg.f1_mean:.5f}+-{seg.f1_std:.5f} "
        f"mIOU={seg.miou:.5f} mHdis inner={loc.mhdis_inner:.3f} outer={loc.mhdis_outer:.3f} "
        f"overall={loc.mhdis_overall:.3f}"
    )
    return 0


def _fmt(v):
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def _write_report(out, report):
    fields = ["id", "e1", "e2", "f1", "iou", "hd_inner", "hd_outer"]
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(fields)
        for r in report.per_image:
            w.writerow([r.id] + [_fmt(getattr(r, k)) for k in fields[1:]])
        seg, loc = report.segmentation, report.localization
        w.writerow(["aggregate", _fmt(seg.e1), _fmt(seg.e2), _fmt(seg.f1_mean), _fmt(seg.miou),
                    _fmt(loc.mhdis_inner), _fmt(loc.mhdis_outer)])
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    io.write_curve(out / "curve_inner.csv", report.localization.success_curve_inner)
    io.write_curve(out / "curve_outer.csv", report.localization.success_curve_outer)


# -- recognition ----------------------------------------------------------------


def cmd_encode(args) -> int:
    cfg = _settings(args)
    images, circles = Path(args.images), Path(args.circles)
    manifest = _read_manifest(images)
    ids = [r["id"] for r in manifest] if manifest else sorted(p.stem for p in images.glob("*.fmap"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for case_id in ids:
        res_path = circles / f"{case_id}.result.json"
        if res_path.exists():
            rec = json.loads(res_path.read_text())
            if rec.get("status") != "ok":
                print(f"skipped {case_id}: localization {rec.get('reason')}", file=sys.stderr)
                continue
            mask = io.read_mask_pgm(circles / f"{case_id}.mask.pgm")
        elif (circles / f"{case_id}.json").exists():
            rec = io.read_annotation(circles / f"{case_id}.json")
            mask = io.read_mask_pgm(circles / rec["mask_path"])
        else:
            print(f"skipped {case_id}: no circles", file=sys.stderr)
            continue
        img = io.read_pgm(images / f"{case_id}.pgm")
        try:
            norm = normalize(img, mask, Circle.from_dict(rec["inner"]), Circle.from_dict(rec["outer"]),
                             cfg.get("rows", 64), cfg.get("cols", 512))
            tpl = encode(norm, cfg.get("wavelength", 18.0), cfg.get("sigma_ratio", 0.5))
        except IrisError as exc:
            print(f"skipped {case_id}: {exc}", file=sys.stderr)
            continue
        io.write_template(out / f"{case_id}.itpl", tpl)
        written += 1
    print(f"wrote {written} templates to {out}")
    return 0 if written else 1


def cmd_pairs(args) -> int:
    with open(args.manifest, newline="") as f:
        rows = list(csv.DictReader(f))
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["a", "b", "label"])
        for ra, rb in itertools.combinations(rows, 2):
            w.writerow([ra["id"], rb["id"], int(ra.get("subject") == rb.get("subject"))])
    return 0


def cmd_match(args) -> int:
    cfg = _settings(args)
    max_shift = cfg.get("max_shift", 16)
    with open(args.pairs, newline="") as f:
        pairs = list(csv.DictReader(f))
    if not pairs:
        print("pairs file is empty", file=sys.stderr)
        return 1
    tdir = Path(args.templates)
    cache = {}

    def load(case_id):
        if case_id not in cache:
            cache[case_id] = io.read_template(tdir / f"{case_id}.itpl")
        return cache[case_id]

    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["a", "b", "label", "score", "shift", "valid_bits", "status"])
        for p in pairs:
            label = p.get("label", "")
            try:
                m = match(load(p["a"]), load(p["b"]), max_shift)
            except (IrisError, FileNotFoundError) as exc:
                w.writerow([p["a"], p["b"], label, "", "", 0, getattr(exc, "reason", "missing-template")])
                continue
            w.writerow([p["a"], p["b"], label, repr(m.hd), m.shift, m.valid_bits, "ok"])
    print(f"matched {len(pairs)} pairs")
    return 0


def cmd_verify(args) -> int:
    genuine, impostor = io.read_scores(args.scores)
    if len(genuine) == 0 or len(impostor) == 0:
        print("need both genuine and impostor scores", file=sys.stderr)
        return 1
    stats = verification_stats(genuine, impostor)
    print(f"EER={stats.eer:.6f} DI={stats.di:.6f} genuine={len(genuine)} impostor={len(impostor)}")
    return 0


def cmd_gradcheck(args) -> int:
    errors = gradcheck(seed=args.seed)
    ok = True
    for name, err in errors.items():
        passed = err < GRADCHECK_TOL
        ok &= passed
        print(f"{name:14s} max_rel_err={err:.3e} {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value parameter file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)

    parser = argparse.ArgumentParser(prog="irisloc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic eyes")
    p.add_argument("--n", type=int, default=50, help="number of cases (or subjects)")
    p.add_argument("--out", required=True)
    p.add_argument("--edge-width", type=int, default=3)
    p.add_argument("--blobs", type=int, default=5)
    p.add_argument("--blob-intensity", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--occlusion", type=float, default=0.0)
    p.add_argument("--samples-per-subject", type=int, default=0)
    p.add_argument("--max-rotation", type=float, default=8.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("localize", parents=[common], help="fit iris circles to probability maps")
    p.add_argument("input", help="FMAP file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--n-angles", dest="n_angles", type=int)
    p.add_argument("--delta", type=int)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", parents=[common], help="score results against annotations")
    p.add_argument("results")
    p.add_argument("gt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("encode", parents=[common], help="build iris templates")
    p.add_argument("images", help="directory with <id>.pgm images")
    p.add_argument("circles", help="directory with localization results or annotations")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--wavelength", type=float)
    p.add_argument("--sigma-ratio", dest="sigma_ratio", type=float)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("pairs", help="all-pairs list with genuine/impostor labels")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("match", parents=[common], help="Hamming-distance matching of template pairs")
    p.add_argument("templates")
    p.add_argument("pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--max-shift", dest="max_shift", type=int)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("verify", help="EER and decidability from a score CSV")
    p.add_argument("scores")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the losses")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IrisError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
