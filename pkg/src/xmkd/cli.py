"""Command-line entry point: ``xmkd <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("xmkd")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3
DATA_ENV = "XMKD_DATA_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _data_root(args) -> Path:
    root = args.data or os.environ.get(DATA_ENV)
    if not root:
        raise UsageError(f"no dataset given: pass --data or set {DATA_ENV}")
    return Path(root)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.replace(".", "__", 1)] = yaml.safe_load(raw)
    if args.seed is not None:
        overrides["train__seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _snapshot(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.yaml")


# --- subcommands ------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .dataio import SyntheticSceneSpec, generate_dataset

    spec = SyntheticSceneSpec.from_file(args.spec) if args.spec else SyntheticSceneSpec()
    out = Path(args.out)
    seed = 0 if args.seed is None else args.seed
    manifest = generate_dataset(spec, seed, out)
    print(f"wrote {spec.num_train + spec.num_val} scenes to {out} ({manifest.name})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .dataio import load_manifest
    from .evalkit.plots import plot_history
    from .trainer import save_checkpoint, train

    cfg = _run_config(args)
    root = _data_root(args)
    tr, va = load_manifest(root, "train"), load_manifest(root, "val")
    out = Path(args.out)
    result = train(tr, cfg, val_manifest=va)
    _snapshot(out, result.config)
    save_checkpoint(out / "checkpoint.npz", result.model, result.config, epoch=cfg.train.epochs, history=result.epochs)
    _write_json(out / "metrics.json", {
        "epochs": result.epochs,
        "first_total": result.history[0]["total"],
        "last_total": result.history[-1]["total"],
        "clip_events": result.clip_events,
        "calls": result.calls,
    })
    with open(out / "history.tsv", "w") as fh:
        keys = ["step", "epoch", "lr", "total", "l3d", "l2d", "l_contrast", "l_kd"]
        fh.write("\t".join(keys) + "\n")
        for h in result.history:
            fh.write("\t".join(repr(h[k]) for k in keys) + "\n")
    plot_history(result.history, out / "loss.png")
    last = result.epochs[-1]
    print(f"trained {cfg.train.epochs} epochs: val mIoU {last.get('val_miou', float('nan')):.4f} -> {out}")
    return EXIT_OK


def _load_model(path):
    from .trainer import load_checkpoint

    return load_checkpoint(path)


def cmd_eval(args) -> int:
    from .dataio import load_manifest
    from .trainer import evaluate, load_frames

    model, cfg, _ = _load_model(args.checkpoint)
    man = load_manifest(_data_root(args), args.split)
    metrics = evaluate(model, load_frames(man, with_images=False), cfg.model.num_classes, cfg.loss.ignore_index)
    metrics["class_names"] = man.class_names
    metrics["split"] = args.split
    out = Path(args.out)
    _snapshot(out, cfg)
    _write_json(out / "eval.json", metrics)
    lines = ["class\tIoU"] + [f"{n}\t{'nan' if v is None else f'{v:.4f}'}" for n, v in zip(man.class_names, metrics["iou"])]
    lines += [f"mIoU\t{metrics['miou']:.4f}", f"Acc\t{metrics['acc']:.4f}"]
    (out / "eval.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .dataio import load_pointcloud, save_labels
    from .trainer import infer3d

    model, cfg, _ = _load_model(args.checkpoint)
    cloud = load_pointcloud(args.cloud)
    pred = infer3d(model, cloud)
    save_labels(pred.astype(np.uint32), args.out)
    counts = np.bincount(pred, minlength=cfg.model.num_classes)
    print("\t".join(f"{i}:{int(c)}" for i, c in enumerate(counts)))
    return EXIT_OK


def cmd_export(args) -> int:
    from .trainer import export_inference, save_checkpoint

    model, cfg, meta = _load_model(args.checkpoint)
    if meta["kind"] == "inference":
        raise ValueError("checkpoint is already an inference model")
    inf, report = export_inference(model)
    out = Path(args.out)
    save_checkpoint(out, inf, cfg, epoch=meta.get("epoch", 0), kind="inference")
    _write_json(out.with_suffix(".params.json"), report)
    print(f"inference parameters {report['inference_total']} (training-only removed: {report['training_only']})")
    return EXIT_OK


def _experiment(args, kind: str) -> int:
    from .dataio import load_manifest
    from .evalkit.harness import DEFAULT_GRID, ablation_run, sensitivity_sweep

    cfg = _run_config(args)
    root = _data_root(args)
    tr, va = load_manifest(root, "train"), load_manifest(root, "val")
    base = 0 if args.seed is None else args.seed
    seeds = [base + i for i in range(args.num_seeds)]
    if kind == "ablation":
        report = ablation_run(tr, va, cfg, seeds=seeds)
    else:
        grid = DEFAULT_GRID
        if args.grid:
            try:
                grid = [tuple(float(x) for x in g.split(",")) for g in args.grid]
            except ValueError as exc:
                raise UsageError(f"--grid expects lc,lk pairs: {exc}") from exc
            if any(len(g) != 2 for g in grid):
                raise UsageError("--grid expects lc,lk pairs")
        report = sensitivity_sweep(tr, va, cfg, grid=grid, seeds=seeds)
    out = Path(args.out)
    _snapshot(out, cfg)
    report.write(out, figures=not args.no_figures)
    sys.stdout.write(report.to_tsv())
    return EXIT_OK


def cmd_ablate(args) -> int:
    return _experiment(args, "ablation")


def cmd_sweep(args) -> int:
    return _experiment(args, "sweep")


def _scene(args):
    from .dataio import load_manifest

    man = load_manifest(_data_root(args), args.split)
    for s in man.samples:
        if s.frame_id == args.frame:
            return man, s
    raise KeyError(f"frame {args.frame!r} not in split {args.split!r}")


def cmd_render_bev(args) -> int:
    from .dataio import PALETTE
    from .evalkit.bev import render_bev

    cfg = _run_config(args)
    man, sample = _scene(args)
    cloud = sample.load_cloud()
    labels = cloud.labels
    if args.checkpoint:
        from .trainer import infer3d

        labels = infer3d(_load_model(args.checkpoint)[0], cloud)
    palette = np.asarray(PALETTE[: man.num_classes])
    path = render_bev(cloud.positions, labels, palette, args.out, man.class_names,
                      extent=cfg.eval.bev_extent, resolution=cfg.eval.bev_resolution)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_fov_stats(args) -> int:
    from .dataio import load_manifest
    from .geometry import fov_coverage, project_points

    man = load_manifest(_data_root(args), args.split)
    rows = []
    for s in man.samples:
        if args.frame and s.frame_id != args.frame:
            continue
        corr = project_points(s.load_cloud(), s.load_calibration())
        rows.append((s.frame_id, len(corr), int(corr.in_fov.sum()), fov_coverage(corr)))
    if not rows:
        raise KeyError(f"frame {args.frame!r} not in split {args.split!r}")
    print("frame\tpoints\tin_fov\tcoverage\toutside")
    for fid, n, k, c in rows:
        print(f"{fid}\t{n}\t{k}\t{c:.6f}\t{1 - c:.6f}")
    cov = np.array([r[3] for r in rows])
    print(f"mean\t\t\t{cov.mean():.6f}\t{1 - cov.mean():.6f}")
    return EXIT_OK


def cmd_project_debug(args) -> int:
    from .geometry import project_points

    _, sample = _scene(args)
    corr = project_points(sample.load_cloud(), sample.load_calibration())
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("index\tu\tv\tdepth\tin_fov\n")
        for i in range(len(corr)):
            u, v = corr.pixel_uv[i]
            out.write(f"{i}\t{u:.6f}\t{v:.6f}\t{corr.depth[i]:.6f}\t{int(corr.in_fov[i])}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="single source of randomness")
    common.add_argument("--config", default=None, help="YAML run config (flat section.key or nested)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--data", default=None, help=f"dataset root (default: ${DATA_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="xmkd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    s.add_argument("--spec", default=None, help="scene spec YAML")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train and save a checkpoint")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--ckpt", "--checkpoint", dest="checkpoint", required=True)
    s.add_argument("--split", default="val", choices=["train", "val"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", parents=[common], help="label one point cloud")
    s.add_argument("--ckpt", "--checkpoint", dest="checkpoint", required=True)
    s.add_argument("--cloud", required=True)
    s.add_argument("--out", required=True, help="output .label file")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("export", parents=[common], help="strip to the 3D-only inference model")
    s.add_argument("--ckpt", "--checkpoint", dest="checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    for name, func, seeds in (("ablate", cmd_ablate, 3), ("sweep", cmd_sweep, 1)):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--out", required=True)
        s.add_argument("--num-seeds", type=int, default=seeds)
        s.add_argument("--no-figures", action="store_true")
        if name == "sweep":
            s.add_argument("--grid", nargs="+", metavar="LC,LK")
        s.set_defaults(func=func)

    s = sub.add_parser("render-bev", parents=[common], help="top-down label image of one frame")
    s.add_argument("--frame", required=True)
    s.add_argument("--split", default="val", choices=["train", "val"])
    s.add_argument("--ckpt", "--checkpoint", dest="checkpoint", default=None, help="render predictions instead of ground truth")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render_bev)

    s = sub.add_parser("fov-stats", parents=[common], help="share of points inside the camera view")
    s.add_argument("--split", default="val", choices=["train", "val"])
    s.add_argument("--frame", default=None)
    s.set_defaults(func=cmd_fov_stats)

    s = sub.add_parser("project-debug", parents=[common], help="per-point projection table")
    s.add_argument("--frame", required=True)
    s.add_argument("--split", default="val", choices=["train", "val"])
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_project_debug)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        msg = str(exc).splitlines()[0] if str(exc) else ""
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
