"""Projection heads, point/pixel pair sampling and the multi-scale NT-Xent loss."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .geometry import CorrespondenceSet

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
LOOKUP_MODES = ("bilinear", "nearest")


class EmptyLossWarning(UserWarning):
    """A loss term had nothing to average over and was defined as 0."""


@dataclass
class ContrastiveConfig:
    temperature: float = 0.07
    pairs_per_scale: int = 512
    symmetric: bool = False
    lookup: str = "bilinear"
    proj_dim: int = 128

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.pairs_per_scale < 1:
            raise ValueError("pairs_per_scale must be >= 1")
        if self.lookup not in LOOKUP_MODES:
            raise ValueError(f"lookup must be one of {LOOKUP_MODES}")


def l2_normalize(z: Tensor, dim: int = -1) -> Tensor:
    return z / (z.norm(dim=dim, keepdim=True) + NORM_EPS)


class ProjectionHead(nn.Module):
    """linear -> ReLU -> linear into the shared embedding space."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, out_dim))

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


def project_embed(features: Tensor, head: ProjectionHead, channels_first: bool = False) -> Tensor:
    """Unit-norm embeddings of point rows ``[n, C]`` or a ``[C, h, w]`` map.

    Maps come back as ``[h, w, d_p]``.
    """
    if channels_first:
        features = features.permute(1, 2, 0)
    return l2_normalize(head(features))


@dataclass
class MatchedPairBatch:
    z3d: Tensor  # [N, d_p]
    z2d: Tensor  # [N, d_p]
    point_index: np.ndarray  # [N]
    scale: int  # 1-based, stride 2**scale
    map_uv: np.ndarray  # [N, 2] continuous location on the scale's feature map

    def __len__(self) -> int:
        return self.z3d.shape[0]


def sample_point_indices(corr: CorrespondenceSet, num_pairs: int, seed) -> np.ndarray:
    omega = corr.indices
    n = min(num_pairs, omega.size)
    if n == 0:
        return omega[:0]
    return np.random.default_rng(seed).choice(omega, size=n, replace=False)


def lookup_map(z_map: Tensor, map_uv: np.ndarray, mode: str = "bilinear") -> Tensor:
    """Sample an ``[h, w, D]`` map at continuous map coordinates.

    Cell ``(r, c)`` covers ``[c, c+1) x [r, r+1)`` so its centre sits at
    ``(c + 0.5, r + 0.5)``. Samples are clamped at the border and re-normalized.
    """
    h, w = z_map.shape[:2]
    u = torch.as_tensor(map_uv[:, 0], dtype=z_map.dtype)
    v = torch.as_tensor(map_uv[:, 1], dtype=z_map.dtype)
    if mode == "nearest":
        c = torch.floor(u).long().clamp(0, w - 1)
        r = torch.floor(v).long().clamp(0, h - 1)
        return l2_normalize(z_map[r, c])
    x = (u - 0.5).clamp(0, w - 1)
    y = (v - 0.5).clamp(0, h - 1)
    x0 = torch.floor(x).long().clamp(max=w - 2) if w > 1 else torch.zeros_like(x, dtype=torch.long)
    y0 = torch.floor(y).long().clamp(max=h - 2) if h > 1 else torch.zeros_like(y, dtype=torch.long)
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = (x - x0.to(x.dtype))[:, None]
    wy = (y - y0.to(y.dtype))[:, None]
    top = z_map[y0, x0] * (1 - wx) + z_map[y0, x1] * wx
    bottom = z_map[y1, x0] * (1 - wx) + z_map[y1, x1] * wx
    return l2_normalize(top * (1 - wy) + bottom * wy)


def sample_pairs(
    corr: CorrespondenceSet,
    z3d: Tensor,
    z2d_map: Tensor,
    scale: int,
    num_pairs: int,
    seed,
    lookup: str = "bilinear",
) -> MatchedPairBatch:
    """Draw up to ``num_pairs`` in-FOV points and pair each point's scale-``scale``
    embedding with the image embedding under its projection.

    ``z3d`` is either all ``[p, d_p]`` point embeddings or a callable taking
    point indices and returning their embeddings.
    """
    idx = sample_point_indices(corr, num_pairs, seed)
    map_uv = corr.pixel_uv[idx] / float(2**scale)
    if idx.size == 0:
        d = z2d_map.shape[-1]
        empty = z2d_map.new_zeros(0, d)
        return MatchedPairBatch(empty, empty, idx, scale, map_uv)
    rows = z3d(idx) if callable(z3d) else z3d[torch.as_tensor(idx)]
    return MatchedPairBatch(rows, lookup_map(z2d_map, map_uv, lookup), idx, scale, map_uv)


def nt_xent(z3d: Tensor, z2d: Tensor, temperature: float, symmetric: bool = False) -> Tensor:
    """Cross-entropy of each 3D row against all 2D rows, positive on the diagonal."""
    n = z3d.shape[0]
    if n == 0:
        warnings.warn("no matched pairs; contrastive loss defined as 0", EmptyLossWarning, stacklevel=2)
        return z3d.new_zeros(())
    logits = z3d @ z2d.T / temperature
    target = torch.arange(n)
    loss = F.cross_entropy(logits, target)
    if symmetric:
        loss = 0.5 * (loss + F.cross_entropy(logits.T, target))
    return loss


def multiscale_contrastive(
    corr: CorrespondenceSet,
    pyramid3d: list[Tensor],
    pyramid2d: list[Tensor],
    heads3d: nn.ModuleList,
    heads2d: nn.ModuleList,
    config: ContrastiveConfig,
    seed,
) -> Tensor:
    """Average over scales of the NT-Xent loss between matched point/pixel embeddings.

    Scale ``s`` (1-based) pairs ``pyramid3d[s-1]`` with the 2D map of stride
    ``2**s``. A scale without matched pairs contributes 0 to the average.
    """
    num_scales = len(pyramid3d)
    if len(pyramid2d) != num_scales:
        raise ValueError("pyramids have different numbers of scales")
    total = pyramid3d[0].new_zeros(())
    for i in range(num_scales):
        z2d_map = project_embed(pyramid2d[i], heads2d[i], channels_first=True)
        feats, head = pyramid3d[i], heads3d[i]
        batch = sample_pairs(
            corr,
            lambda idx, feats=feats, head=head: project_embed(feats[torch.as_tensor(idx)], head),
            z2d_map,
            scale=i + 1,
            num_pairs=config.pairs_per_scale,
            seed=_scale_seed(seed, i),
            lookup=config.lookup,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyLossWarning)
            term = nt_xent(batch.z3d, batch.z2d, config.temperature, config.symmetric)
        if len(batch) == 0:
            log.info("scale %d: no in-FOV points, contrastive term is 0", i + 1)
        total = total + term / num_scales
    return total


def _scale_seed(seed, scale_index: int):
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return np.random.SeedSequence(base + [scale_index])


class InverseProjection(nn.Module):
    """Single linear map from the embedding space back to a decoder's feature space."""

    def __init__(self, proj_dim: int, out_dim: int):
        super().__init__()
        self.linear = nn.Linear(proj_dim, out_dim)

    def forward(self, z: Tensor, channels_first_out: bool = False) -> Tensor:
        out = self.linear(z)
        if channels_first_out:
            out = out.permute(2, 0, 1)
        return out


def inverse_project(z: Tensor, inverse: InverseProjection, channels_first_out: bool = False) -> Tensor:
    if z.shape[-1] != inverse.linear.in_features:
        raise ValueError(f"embedding dim {z.shape[-1]} != {inverse.linear.in_features}")
    return inverse(z, channels_first_out)
