"""Segmentation losses (cross-entropy, Lovasz-Softmax) and the weighted total."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .alignment import EmptyLossWarning
from .geometry import IGNORE


@dataclass
class LossWeights:
    lambda_contrast: float = 0.1
    lambda_kd: float = 0.1

    def __post_init__(self):
        if self.lambda_contrast < 0 or self.lambda_kd < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossConfig(LossWeights):
    ignore_index: int = IGNORE

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_contrast, self.lambda_kd)


@dataclass
class LossBreakdown:
    l3d: Tensor
    l2d: Tensor
    l_contrast: Tensor
    l_kd: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l3d", "l2d", "l_contrast", "l_kd", "total")}


def _valid(labels: Tensor, num_classes: int, ignore_index: int) -> Tensor:
    keep = labels != ignore_index
    bad = keep & ((labels < 0) | (labels >= num_classes))
    if bool(bad.any()):
        i = int(torch.nonzero(bad)[0])
        raise ValueError(f"label {int(labels[i])} at entry {i} is outside [0, {num_classes}) and not ignore")
    return keep


def cross_entropy(logits: Tensor, labels: Tensor, ignore_index: int = IGNORE) -> Tensor:
    """Mean negative log-likelihood of the true class over non-ignored rows."""
    keep = _valid(labels, logits.shape[1], ignore_index)
    if not bool(keep.any()):
        warnings.warn("all labels ignored; cross-entropy defined as 0", EmptyLossWarning, stacklevel=2)
        return logits.sum() * 0.0
    logp = F.log_softmax(logits[keep], dim=1)
    return -logp.gather(1, labels[keep][:, None]).mean()


def lovasz_grad(gt_sorted: Tensor) -> Tensor:
    """Gradient of the Lovasz extension of the Jaccard loss w.r.t. sorted errors."""
    gts = gt_sorted.sum()
    intersection = gts - gt_sorted.cumsum(0)
    union = gts + (1 - gt_sorted).cumsum(0)
    jaccard = 1.0 - intersection / union
    if gt_sorted.numel() > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1].clone()
    return jaccard


def lovasz_softmax(probs: Tensor, labels: Tensor, ignore_index: int = IGNORE, per_class: bool = False):
    """Lovasz-Softmax over the classes present in the labels.

    Errors are sorted in descending order with ties kept in index order.
    With ``per_class`` a dict ``class -> loss`` is returned instead of the mean.
    """
    keep = _valid(labels, probs.shape[1], ignore_index)
    if not bool(keep.any()):
        warnings.warn("all labels ignored; Lovasz loss defined as 0", EmptyLossWarning, stacklevel=2)
        zero = probs.sum() * 0.0
        return {} if per_class else zero
    probs, labels = probs[keep], labels[keep]
    terms = {}
    for c in torch.unique(labels).tolist():
        fg = (labels == c).to(probs.dtype)
        errors = (fg - probs[:, c]).abs()
        errors_sorted, perm = torch.sort(errors, descending=True, stable=True)
        terms[c] = torch.dot(errors_sorted, lovasz_grad(fg[perm]))
    if per_class:
        return terms
    return torch.stack(list(terms.values())).mean()


def modality_loss(logits: Tensor, labels: Tensor, ignore_index: int = IGNORE) -> Tensor:
    """CE + Lovasz-Softmax on ``[n, K]`` logits."""
    keep = labels != ignore_index
    logits, labels = logits[keep], labels[keep]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyLossWarning)
        ce = cross_entropy(logits, labels, ignore_index)
        lov = lovasz_softmax(F.softmax(logits, dim=1), labels, ignore_index)
    return ce + lov


def total_loss(l3d, l2d, l_contrast, l_kd, weights: LossWeights) -> LossBreakdown:
    parts = [torch.as_tensor(x, dtype=torch.float64) if not isinstance(x, Tensor) else x for x in (l3d, l2d, l_contrast, l_kd)]
    l3d, l2d, l_contrast, l_kd = parts
    total = l3d + l2d + weights.lambda_contrast * l_contrast + weights.lambda_kd * l_kd
    return LossBreakdown(l3d, l2d, l_contrast, l_kd, total)
