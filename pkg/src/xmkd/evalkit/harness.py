"""Ablation and loss-weight sensitivity experiments over several seeds."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import RunConfig
from ..dataio import DatasetManifest

log = logging.getLogger(__name__)

ABLATION_ROWS = ("Baseline (LiDAR only)", "+ Contrastive", "+ KL-divergence + Contrastive", "xModel-KD")
DEFAULT_GRID = ((0.05, 0.05), (0.1, 0.05), (0.1, 0.1), (0.2, 0.1))
# directional reference values, printed next to the desk-scale numbers
REFERENCE_MIOU = {name: v for name, v in zip(ABLATION_ROWS, (67.0, 67.8, 68.4, 69.1))}


def ablation_configs(base: RunConfig) -> list[tuple[str, RunConfig]]:
    """The four ablation rows derived from one base config.

    The third row adds the KL term without the teacher/student split: gradients
    flow into both branches (mutual KL). The last row is the full method.
    """
    lc = base.loss.lambda_contrast or 0.1
    lk = base.loss.lambda_kd or 0.1
    return [
        (ABLATION_ROWS[0], base.replace(model__use_2d=False, loss__lambda_contrast=0.0, loss__lambda_kd=0.0,
                                        kd__enabled=False)),
        (ABLATION_ROWS[1], base.replace(model__use_2d=True, loss__lambda_contrast=lc, loss__lambda_kd=0.0,
                                        kd__enabled=False)),
        (ABLATION_ROWS[2], base.replace(model__use_2d=True, loss__lambda_contrast=lc, loss__lambda_kd=lk,
                                        kd__enabled=True, kd__detach_teacher=False)),
        (ABLATION_ROWS[3], base.replace(model__use_2d=True, loss__lambda_contrast=lc, loss__lambda_kd=lk,
                                        kd__enabled=True, kd__detach_teacher=True)),
    ]


def sweep_configs(base: RunConfig, grid=DEFAULT_GRID) -> list[tuple[str, RunConfig]]:
    rows = []
    for lc, lk in grid:
        cfg = base.replace(model__use_2d=True, loss__lambda_contrast=float(lc), loss__lambda_kd=float(lk),
                           kd__enabled=True, kd__detach_teacher=True)
        rows.append((f"lc={float(lc):g},lk={float(lk):g}", cfg))
    return rows


@dataclass
class ExperimentRow:
    name: str
    config: RunConfig
    seeds: list[int] = field(default_factory=list)
    miou: list[float] = field(default_factory=list)
    acc: list[float] = field(default_factory=list)
    iou: list[list] = field(default_factory=list)
    loss_curves: list[list[float]] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def mean_miou(self) -> float:
        return float(np.mean(self.miou))

    @property
    def mean_acc(self) -> float:
        return float(np.mean(self.acc))

    def mean_iou(self) -> list:
        arr = np.array([[np.nan if v is None else v for v in row] for row in self.iou], dtype=np.float64)
        with np.errstate(invalid="ignore"):
            out = [float(np.nanmean(c)) if not np.all(np.isnan(c)) else None for c in arr.T]
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seeds": self.seeds,
            "miou": self.miou,
            "miou_mean": self.mean_miou,
            "miou_std": float(np.std(self.miou)),
            "acc": self.acc,
            "acc_mean": self.mean_acc,
            "iou_per_seed": self.iou,
            "iou_mean": self.mean_iou(),
            "loss_curves": self.loss_curves,
            "params": self.params,
            "config": self.config.to_flat(),
        }


@dataclass
class ExperimentReport:
    kind: str  # "ablation" or "sweep"
    rows: list[ExperimentRow]
    class_names: list[str]
    val_frames: list[str]
    seeds: list[int]

    def row(self, name: str) -> ExperimentRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "class_names": self.class_names,
            "seeds": self.seeds,
            "val_frames": self.val_frames,
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_tsv(self) -> str:
        head = ["config", "mIoU", "mIoU_std", "Acc"] + [f"IoU_{c}" for c in self.class_names]
        if self.kind == "ablation":
            head += ["lambda_contrast", "lambda_kd", "ref_mIoU"]
        else:
            head += ["lambda_contrast", "lambda_kd"]
        lines = ["\t".join(head)]
        for r in self.rows:
            cells = [r.name, f"{r.mean_miou:.4f}", f"{np.std(r.miou):.4f}", f"{r.mean_acc:.4f}"]
            cells += ["nan" if v is None else f"{v:.4f}" for v in r.mean_iou()]
            cells += [f"{r.config.loss.lambda_contrast:g}", f"{r.config.loss.lambda_kd:g}"]
            if self.kind == "ablation":
                cells.append(f"{REFERENCE_MIOU.get(r.name, float('nan')):.1f}")
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, out_dir, figures: bool = True) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / f"{self.kind}.json", "tsv": out / f"{self.kind}.tsv"}
        paths["json"].write_text(self.to_json())
        paths["tsv"].write_text(self.to_tsv())
        if figures:
            from .plots import plot_loss_curves, plot_miou_bars

            paths["loss_png"] = plot_loss_curves(self, out / f"{self.kind}_loss.png")
            paths["miou_png"] = plot_miou_bars(self, out / f"{self.kind}_miou.png")
        return paths


def run_experiment(
    kind: str,
    rows: list[tuple[str, RunConfig]],
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    seeds=(0, 1, 2),
) -> ExperimentReport:
    """Train every row once per seed and evaluate all of them on one val split."""
    from ..trainer import evaluate, export_inference, load_frames, train

    if val_manifest.split != "val":
        raise ValueError(f"validation manifest has split {val_manifest.split!r}")
    need_images = any(cfg.model.use_2d for _, cfg in rows)
    frames = load_frames(train_manifest, with_images=need_images)
    val_frames = load_frames(val_manifest, with_images=False)
    K = train_manifest.num_classes
    out_rows = []
    for name, cfg in rows:
        row = ExperimentRow(name, cfg.replace(model__num_classes=K))
        for seed in seeds:
            run_cfg = row.config.replace(train__seed=int(seed))
            res = train(train_manifest, run_cfg, frames=frames)
            metrics = evaluate(res.model, val_frames, K, run_cfg.loss.ignore_index)
            log.info("%s seed %d: mIoU %.4f", name, seed, metrics["miou"])
            row.seeds.append(int(seed))
            row.miou.append(metrics["miou"])
            row.acc.append(metrics["acc"])
            row.iou.append(metrics["iou"])
            row.loss_curves.append([h["total"] for h in res.history])
            if not row.params:
                _, report = export_inference(res.model)
                row.params = {"training_total": report["training_total"], "inference_total": report["inference_total"],
                              "active_2d": report["training_groups"]["encoder2d"] + report["training_groups"]["decoder2d"]}
        out_rows.append(row)
    return ExperimentReport(kind, out_rows, list(train_manifest.class_names), [f.frame_id for f in val_frames],
                            [int(s) for s in seeds])


def ablation_run(train_manifest, val_manifest, base_config: RunConfig, seeds=(0, 1, 2)) -> ExperimentReport:
    return run_experiment("ablation", ablation_configs(base_config), train_manifest, val_manifest, seeds)


def sensitivity_sweep(train_manifest, val_manifest, base_config: RunConfig, grid=DEFAULT_GRID,
                      seeds=(0,)) -> ExperimentReport:
    return run_experiment("sweep", sweep_configs(base_config, grid), train_manifest, val_manifest, seeds)
