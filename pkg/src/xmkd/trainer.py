"""Multi-task training loop, checkpoints and the exported 3D-only model."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .alignment import multiscale_contrastive
from .config import RunConfig
from .dataio import DatasetManifest, augment, ignore_out_of_range
from .distillation import kd_loss
from .evalkit.metrics import accuracy, confusion, miou
from .geometry import IGNORE, CorrespondenceSet, PointCloudFrame, project_labels, project_points
from .model import InferenceModel, XModelKD, predict_labels, strip_to_inference
from .segloss import LossBreakdown, modality_loss, total_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class FrameData:
    frame_id: str
    cloud: PointCloudFrame
    labels3d: torch.Tensor
    image: torch.Tensor | None = None  # [3, H, W]
    corr: CorrespondenceSet | None = None
    labels2d: torch.Tensor | None = None  # [H, W], IGNORE where no point landed
    pyramid2d: list | None = None  # cached when the 2D encoder is frozen


def load_frames(manifest: DatasetManifest, with_images: bool = True) -> list[FrameData]:
    K = manifest.num_classes
    frames = []
    for sample in manifest.samples:
        cloud = sample.load_cloud()
        cloud.validate()
        labels = ignore_out_of_range(cloud.labels, K) if cloud.labels is not None else np.full(len(cloud), IGNORE)
        cloud = PointCloudFrame(cloud.positions, cloud.intensity, labels)
        frame = FrameData(sample.frame_id, cloud, torch.as_tensor(labels, dtype=torch.long))
        if with_images and sample.image_path is not None:
            calib = sample.load_calibration()
            # correspondences and 2D labels come from the un-augmented cloud
            frame.corr = project_points(cloud, calib)
            frame.labels2d = torch.as_tensor(project_labels(cloud, frame.corr, calib.image_size), dtype=torch.long)
            frame.image = torch.as_tensor(sample.load_image()).permute(2, 0, 1).contiguous()
        frames.append(frame)
    return frames


def point_tensor(cloud: PointCloudFrame) -> torch.Tensor:
    return torch.as_tensor(
        np.concatenate([np.asarray(cloud.positions, np.float32), np.asarray(cloud.intensity, np.float32)[:, None]], 1)
    )


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TrainResult:
    model: XModelKD
    config: RunConfig
    history: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    calls: dict = field(default_factory=lambda: {"contrastive": 0, "kd": 0})
    clip_events: int = 0


def frame_losses(model: XModelKD, frame: FrameData, cfg: RunConfig, points: torch.Tensor, seed, calls=None):
    """Forward both branches on one frame and combine the loss terms."""
    ignore = cfg.loss.ignore_index
    pyr3d, _, logits3d = model.forward3d(points)
    l3d = modality_loss(logits3d, frame.labels3d, ignore)
    zero = logits3d.new_zeros(())
    l2d = l_con = l_kd = zero
    if model.use_2d and frame.image is not None:
        pyr2d, _, logits2d = model.forward2d(frame.image, frame.pyramid2d)
        K = logits2d.shape[0]
        l2d = modality_loss(logits2d.permute(1, 2, 0).reshape(-1, K), frame.labels2d.reshape(-1), ignore)
        if cfg.loss.lambda_contrast > 0:
            if calls is not None:
                calls["contrastive"] += 1
            l_con = multiscale_contrastive(
                frame.corr, pyr3d, pyr2d, model.heads["3d"], model.heads["2d"], cfg.align, seed
            )
        if cfg.kd.enabled and cfg.loss.lambda_kd > 0:
            if calls is not None:
                calls["kd"] += 1
            if frame.corr.in_fov.any():
                l_kd = kd_loss(logits2d.permute(1, 2, 0), logits3d, frame.corr, cfg.kd.detach_teacher)
    return total_loss(l3d, l2d, l_con, l_kd, cfg.loss.weights)


def train(
    manifest: DatasetManifest,
    config: RunConfig,
    val_manifest: DatasetManifest | None = None,
    frames: list[FrameData] | None = None,
    val_frames: list[FrameData] | None = None,
) -> TrainResult:
    if manifest.split != "train":
        raise TrainingError(f"training manifest has split {manifest.split!r}")
    cfg = config
    if cfg.model.num_classes == 0:
        cfg = cfg.replace(model__num_classes=manifest.num_classes)
    elif cfg.model.num_classes != manifest.num_classes:
        raise TrainingError(f"config K={cfg.model.num_classes} but manifest has {manifest.num_classes} classes")
    tc = cfg.train
    torch.use_deterministic_algorithms(True, warn_only=True)
    model = XModelKD(cfg.model, cfg.align, seed=tc.seed)
    if frames is None:
        frames = load_frames(manifest, with_images=cfg.model.use_2d)
    if model.use_2d and cfg.model.freeze_2d:
        with torch.no_grad():
            for f in frames:
                if f.image is not None:
                    f.pyramid2d = model.encode2d(f.image)
    else:
        for f in frames:
            f.pyramid2d = None

    params = model.trainable_parameters()
    opt = torch.optim.SGD(params, lr=tc.base_lr, momentum=tc.momentum, weight_decay=tc.weight_decay)
    steps_per_epoch = math.ceil(len(frames) / tc.batch_size)
    total_steps = tc.epochs * steps_per_epoch
    result = TrainResult(model, cfg)
    step = 0
    for epoch in range(tc.epochs):
        order = np.random.default_rng(np.random.SeedSequence([tc.seed, epoch])).permutation(len(frames))
        model.train()
        for b in range(steps_per_epoch):
            batch = order[b * tc.batch_size : (b + 1) * tc.batch_size]
            lr = cosine_lr(tc.base_lr, step, total_steps) if tc.schedule == "cosine" else tc.base_lr
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad(set_to_none=True)
            parts: list[LossBreakdown] = []
            for j, fi in enumerate(batch):
                frame = frames[fi]
                aug = augment(frame.cloud, cfg.aug, np.random.SeedSequence([tc.seed, epoch, int(fi)]))
                parts.append(frame_losses(model, frame, cfg, point_tensor(aug), [tc.seed, step, j], result.calls))
            loss = torch.stack([p.total for p in parts]).mean()
            record = {k: float(np.mean([p.as_floats()[k] for p in parts])) for k in parts[0].as_floats()}
            if not all(math.isfinite(v) for v in record.values()):
                raise TrainingError(f"non-finite loss at step {step}: {record}")
            loss.backward()
            norm = float(torch.nn.utils.clip_grad_norm_(params, tc.grad_clip))
            if norm > tc.grad_clip:
                result.clip_events += 1
                log.info("step %d: gradient norm %.3f clipped to %.1f", step, norm, tc.grad_clip)
            opt.step()
            record.update(step=step, epoch=epoch, lr=lr)
            result.history.append(record)
            step += 1
        summary = {
            "epoch": epoch,
            "mean_total": float(np.mean([h["total"] for h in result.history[-steps_per_epoch:]])),
        }
        if val_manifest is not None or val_frames is not None:
            metrics = evaluate(model, val_frames if val_frames is not None else load_frames(val_manifest, False),
                               cfg.model.num_classes, cfg.loss.ignore_index)
            summary.update(val_miou=metrics["miou"], val_acc=metrics["acc"])
        result.epochs.append(summary)
        log.info("epoch %d: %s", epoch, summary)
    for f in frames:
        f.pyramid2d = None
    return result


@torch.no_grad()
def infer3d(model, cloud: PointCloudFrame) -> np.ndarray:
    model.eval()
    points = point_tensor(cloud)
    logits = model.forward3d(points)[2] if isinstance(model, XModelKD) else model(points)
    return predict_labels(logits).numpy()


@torch.no_grad()
def evaluate(model, frames: list[FrameData], num_classes: int, ignore_index: int = IGNORE) -> dict:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for f in frames:
        pred = infer3d(model, f.cloud)
        cm += confusion(pred, f.labels3d.numpy(), num_classes, ignore_index)
    value, ious = miou(cm)
    return {
        "miou": value,
        "acc": accuracy(cm),
        "iou": [None if np.isnan(x) else float(x) for x in ious],
        "confusion": cm.tolist(),
        "frames": [f.frame_id for f in frames],
    }


# --- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, model, config: RunConfig, epoch: int = 0, history=None, kind: str | None = None) -> None:
    kind = kind or ("inference" if isinstance(model, InferenceModel) else "training")
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    arrays["__config__"] = np.array(config.to_json())
    arrays["__meta__"] = np.array(json.dumps({"kind": kind, "epoch": epoch, "history": history or []}))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(model, config, meta)``; the model type follows the stored kind."""
    with np.load(path, allow_pickle=False) as data:
        config = RunConfig.from_json(str(data["__config__"]))
        meta = json.loads(str(data["__meta__"]))
        state = {k: torch.as_tensor(data[k]) for k in data.files if not k.startswith("__")}
    if meta["kind"] == "inference":
        model = InferenceModel(config.model, config.align)
    else:
        model = XModelKD(config.model, config.align, seed=config.train.seed)
    model.load_state_dict(state, strict=True)
    return model, config, meta


def export_inference(model: XModelKD) -> tuple[InferenceModel, dict]:
    """Strip every 2D and training-only module; report parameter counts."""
    inf = strip_to_inference(model)
    full = model.parameter_counts()
    report = {
        "inference_total": inf.parameter_counts()["total"],
        "inference_groups": inf.parameter_counts()["groups"],
        "training_total": full["total"],
        "training_only": full["training_only"],
        "training_groups": full["groups"],
    }
    return inf, report
