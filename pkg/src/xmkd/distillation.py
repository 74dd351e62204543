"""KL distillation from 2D pixel predictions to matched 3D point predictions."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .alignment import EmptyLossWarning
from .geometry import CorrespondenceSet


@dataclass
class KDConfig:
    enabled: bool = True
    # False gives mutual learning: the KL term also trains the 2D branch
    detach_teacher: bool = True


def kd_loss(
    logits2d: Tensor,
    logits3d: Tensor,
    corr: CorrespondenceSet,
    detach_teacher: bool = True,
) -> Tensor:
    """Mean over in-FOV points of KL(softmax(2D logits at the point's pixel) || softmax(3D logits)).

    ``logits2d`` is ``[H, W, K]``, ``logits3d`` is ``[p, K]``. The pixel is the
    one containing the projection, ``(floor(v), floor(u))``.
    """
    H, W, K = logits2d.shape
    if logits3d.shape != (len(corr), K):
        raise ValueError(f"3D logits {tuple(logits3d.shape)} do not match {len(corr)} points x K={K}")
    idx = corr.indices
    if idx.size == 0:
        warnings.warn("no in-FOV points; KD loss defined as 0", EmptyLossWarning, stacklevel=2)
        return logits3d.new_zeros(())
    rows, cols = corr.pixel_index()
    teacher = logits2d[torch.as_tensor(rows), torch.as_tensor(cols)]
    if detach_teacher:
        teacher = teacher.detach()
    student = logits3d[torch.as_tensor(idx)]
    log_p = F.log_softmax(teacher, dim=1)
    log_q = F.log_softmax(student, dim=1)
    return (log_p.exp() * (log_p - log_q)).sum(dim=1).mean()
