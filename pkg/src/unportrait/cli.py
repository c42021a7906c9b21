"""Command-line entry point.

Exit status: 0 on success, 1 on invalid arguments or input, 2 when a stage
fails at runtime.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
TOY_SIZE, FULL_SIZE = 64, 512


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def _emit(report: dict, out: str | None) -> None:
    text = _dump(report)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")


def _size(args) -> int:
    if args.size:
        return args.size
    return FULL_SIZE if args.full else TOY_SIZE


def _add_scale_flags(p) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--toy", action="store_true", help=f"toy resolution {TOY_SIZE} (default)")
    g.add_argument("--full", action="store_true", help=f"full resolution {FULL_SIZE}")
    p.add_argument("--size", type=int, help="explicit square image size in pixels")


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from .dataset import DatasetSpec, generate_dataset

    spec = DatasetSpec(subjects=args.subjects, views=args.views, distances=args.distances, size=_size(args),
                       supersample=args.supersample, seed=args.seed,
                       pose_range_deg=(args.pose_range,) * 3,
                       meshes=tuple(tuple(m) for m in args.mesh or ()))
    header, rows = generate_dataset(spec, args.out)
    print(_dump({"manifest": str(Path(args.out) / "manifest.txt"), "rows": len(rows),
                 "rejected": len(header["rejected"])}))
    return EXIT_OK


def cmd_train(args) -> int:
    import torch

    from .dataset import load_dataset
    from .nets import ModelConfig
    from .pipeline import ModelBundle
    from .training import TrainConfig, completion_arrays, train_classifier, train_completion, train_flownet

    data = load_dataset(args.manifest)
    size = args.size or data.near_rgb.shape[1]
    if size != data.near_rgb.shape[1]:
        raise ValueError(f"dataset images are {data.near_rgb.shape[1]}px, --size asks for {size}")
    mcfg = ModelConfig(size=size)
    cfg = TrainConfig(seed=args.seed, epochs=args.epochs, batch_size=args.batch_size,
                      adversarial=args.adversarial,
                      checkpoint_dir=str(Path(args.out) / "epochs") if args.epoch_checkpoints else None)
    torch.manual_seed(args.seed)
    cls, h_cls = train_classifier(data, cfg, mcfg)
    flow, h_flow = train_flownet(data, cfg, mcfg)
    comp, h_comp = train_completion(completion_arrays(data), cfg, mcfg)
    ModelBundle(mcfg, cls, flow, comp).save(args.out)
    report = {"samples": len(data), "seed": args.seed, "epochs": args.epochs, "adversarial": args.adversarial,
              "classifier_epoch_loss": h_cls.epoch_losses, "flownet_epoch_loss": h_flow.epoch_losses,
              "completion_epoch_loss": h_comp.epoch_losses}
    _emit(report, str(Path(args.out) / "train_report.json"))
    return EXIT_OK


def _load_input(path, mask_path=None):
    from .fileio import read_mask, read_png
    from .imaging import ImageBuffer

    img = read_png(path)
    if mask_path:
        mask = read_mask(mask_path)
        if mask.shape != img.shape:
            raise ValueError(f"mask {mask.shape} does not match image {img.shape}")
        img = ImageBuffer.from_rgb(img.rgb, mask)
    return img


def cmd_estimate(args) -> int:
    from .camera import CameraConfig, focal_for_distance
    from .distance import GeomLandmarkSet, estimate_distance, fit_distance_geometric, label_from_estimate
    from .fileio import read_named_points
    from .mesh import parametric_head

    report = {}
    if args.models:
        from .nets import image_tensor
        from .pipeline import ModelBundle

        bundle = ModelBundle.load(args.models)
        img = _load_input(args.input, args.mask)
        d, diag = estimate_distance(bundle.classifier, image_tensor(img, bundle.config.size)[0])
        report["classifier"] = {"distance_cm": d, "label": label_from_estimate(d).index, "flag": diag.flag,
                                "non_monotone": diag.non_monotone, "focal_mm": focal_for_distance(d)}
    if args.landmarks:
        pts = read_named_points(args.landmarks, 2)
        ref = read_named_points(args.reference, 3) if args.reference else parametric_head().landmark_points()
        width = args.image_width
        if width is None:
            if not args.input:
                raise ValueError("--image-width or --input is required for the geometric fit")
            width = _load_input(args.input).width
        cam = CameraConfig(focal_for_distance(160.0), (width, width))
        fit = fit_distance_geometric(GeomLandmarkSet(pts, ref, view_scale=args.view_scale), cam,
                                     fit_pose=args.fit_pose)
        report["geometric"] = {"distance_cm": fit.distance_cm, "residual_px": fit.residual_px,
                               "pose_deg": list(fit.pose_deg), "label": label_from_estimate(fit.distance_cm).index}
    if not report:
        raise ValueError("give --models and/or --landmarks")
    _emit(report, args.out)
    return EXIT_OK


def cmd_undistort(args) -> int:
    from .fileio import read_flow, read_named_points, write_flow, write_png
    from .pipeline import ModelBundle, undistort
    from .preprocess import PreprocessSpec, preprocess

    img = _load_input(args.input, args.mask)
    transform = None
    if args.landmarks:
        spec = PreprocessSpec.scaled(args.size or img.width)
        img, transform = preprocess(img, read_named_points(args.landmarks, 2), spec)
    bundle = ModelBundle.load(args.models)
    flow = read_flow(args.oracle_flow) if args.oracle_flow else None
    res = undistort(img, bundle, flow=flow, distance_cm=args.distance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_flow(out / "flow.flw", res.flow)
    write_png(out / "warped.png", res.warped)
    write_png(out / "completed.png", res.completed)
    write_png(out / "final.png", res.blended)
    report = res.report()
    report["oracle_flow"] = bool(args.oracle_flow)
    if transform is not None:
        report["preprocess_transform"] = {"scale": transform.scale, "theta": transform.theta,
                                          "tx": transform.tx, "ty": transform.ty}
    _emit(report, str(out / "report.json"))
    return EXIT_OK


def _read_predictions(path) -> dict[str, float]:
    preds = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected '<id> <distance_cm>'")
        preds[parts[0]] = float(parts[1])
    return preds


def cmd_eval(args) -> int:
    from .fileio import read_manifest
    from .metrics import distance_stats

    _, rows = read_manifest(args.manifest)
    preds = _read_predictions(args.pred)
    truth = {r["id"]: r["distance_cm"] for r in rows}
    missing = sorted(set(preds) - set(truth))
    if missing:
        raise ValueError(f"predictions for unknown ids: {', '.join(missing[:5])}")
    ids = sorted(preds)
    if not ids:
        raise ValueError("no predictions")
    report = {"distance_stats": distance_stats([preds[i] for i in ids], [truth[i] for i in ids]),
              "unpredicted": len(truth) - len(ids)}
    _emit(report, args.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibration import fit_color_matrix, fit_similarity, read_rows

    report = {}
    if args.color:
        rows = read_rows(Path(args.color).read_text(encoding="utf-8"), 6)
        fit = fit_color_matrix(rows[:, :3], rows[:, 3:], affine=args.affine)
        report["color"] = {"matrix": fit.matrix.tolist(), "rms": fit.rms, "patches": len(rows)}
    if args.points:
        rows = read_rows(Path(args.points).read_text(encoding="utf-8"), 4)
        fit = fit_similarity(rows[:, :2], rows[:, 2:])
        t = fit.transform
        report["similarity"] = {"scale": t.scale, "theta_deg": float(np.degrees(t.theta)), "tx": t.tx, "ty": t.ty,
                                "rms": fit.rms, "points": len(rows)}
    if not report:
        raise ValueError("give --color and/or --points")
    _emit(report, args.out)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from .fileio import read_named_points, write_png
    from .preprocess import PreprocessSpec, preprocess

    img = _load_input(args.input, args.mask)
    size = args.size or FULL_SIZE
    base = PreprocessSpec.scaled(size)
    spec = PreprocessSpec((size, size), args.ipd if args.ipd else base.target_ipd_px,
                          tuple(args.anchor) if args.anchor else base.anchor_px)
    out_img, tf = preprocess(img, read_named_points(args.landmarks, 2), spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "preprocessed.png", out_img)
    _emit({"scale": tf.scale, "theta": tf.theta, "tx": tf.tx, "ty": tf.ty, "size": size},
          str(out / "transform.json"))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="unportrait", description="Portrait perspective undistortion toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a paired dataset with ground-truth flow")
    s.add_argument("--subjects", type=int, default=2)
    s.add_argument("--views", type=int, default=10)
    s.add_argument("--distances", type=int, default=20)
    s.add_argument("--supersample", type=int, default=4)
    s.add_argument("--pose-range", type=float, default=45.0, help="max |angle| per axis, degrees")
    s.add_argument("--mesh", nargs=2, action="append", metavar=("OBJ", "LANDMARKS"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    _add_scale_flags(s)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train classifier, FlowNet and CompletionNet")
    t.add_argument("--manifest", required=True)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--adversarial", action="store_true")
    t.add_argument("--epoch-checkpoints", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    _add_scale_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="estimate camera-to-subject distance")
    e.add_argument("--input")
    e.add_argument("--mask")
    e.add_argument("--models")
    e.add_argument("--landmarks", help="'name x y' table for the geometric fit")
    e.add_argument("--reference", help="'name x y z' head-frame table (default: parametric head)")
    e.add_argument("--image-width", type=int)
    e.add_argument("--view-scale", type=float, help="known image-plane scale (default: free)")
    e.add_argument("--fit-pose", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    u = sub.add_parser("undistort", help="run the full correction pipeline")
    u.add_argument("--input", required=True)
    u.add_argument("--mask")
    u.add_argument("--models", required=True)
    u.add_argument("--landmarks", help="preprocess with this 'name x y' table first")
    u.add_argument("--oracle-flow", help="FLW1 flow to use instead of the FlowNet prediction")
    u.add_argument("--distance", type=float, help="skip estimation and use this distance (cm)")
    u.add_argument("--size", type=int)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_undistort)

    v = sub.add_parser("eval", help="distance statistics for a prediction file")
    v.add_argument("--manifest", required=True)
    v.add_argument("--pred", required=True, help="'<id> <distance_cm>' per line")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    c = sub.add_parser("calibrate", help="fit rig color matrix and/or alignment similarity")
    c.add_argument("--color", help="rows 'sr sg sb rr rg rb'")
    c.add_argument("--affine", action="store_true")
    c.add_argument("--points", help="rows 'x y x2 y2'")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("preprocess", help="normalize scale and eye anchor")
    r.add_argument("--input", required=True)
    r.add_argument("--mask")
    r.add_argument("--landmarks", required=True)
    r.add_argument("--size", type=int)
    r.add_argument("--ipd", type=float)
    r.add_argument("--anchor", type=float, nargs=2)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_preprocess)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    from .nets import configure_threads

    try:
        configure_threads()
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
