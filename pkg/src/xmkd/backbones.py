"""Small multi-scale encoders and decoders for the two modalities.

Shape contract (per frame, no batch axis):

    3D: points [p, 4] -> S x [p, l_c] -> (align) -> [p, l_h] -> logits [p, K]
    2D: image [3, H, W] -> S x [l_h, H/2^s, W/2^s] -> (align) -> [l_c, H/2, W/2] -> logits [K, H, W]

Feature maps are channels-first, as torch convolutions expect.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

FeaturePyramid = list[Tensor]


@dataclass
class BackboneConfig:
    num_scales: int = 4
    l_c: int = 64
    l_h: int = 64
    num_classes: int = 0  # 0: take K from the dataset manifest
    voxel_sizes: tuple[float, ...] = (0.4, 0.8, 1.6, 3.2)
    head_hidden: int = 64
    coord_scale: tuple[float, ...] = (25.0, 25.0, 2.5)  # meters per unit input, x/y/z
    freeze_2d: bool = True
    use_2d: bool = True

    def __post_init__(self):
        self.voxel_sizes = tuple(float(v) for v in self.voxel_sizes)
        self.coord_scale = tuple(float(v) for v in self.coord_scale)
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        if min(self.l_c, self.l_h, self.head_hidden) < 1:
            raise ValueError("feature dims must be >= 1")
        if len(self.voxel_sizes) != self.num_scales:
            raise ValueError(f"need {self.num_scales} voxel sizes, got {len(self.voxel_sizes)}")


def voxel_index(positions: Tensor, voxel_size: float) -> tuple[Tensor, int]:
    """Voxel id of every point (ids follow sorted voxel coordinates)."""
    coords = torch.floor(positions.detach() / voxel_size).to(torch.int64)
    _, inverse = torch.unique(coords, dim=0, return_inverse=True)
    return inverse, int(inverse.max()) + 1 if inverse.numel() else 0


def canonical_order(points: Tensor) -> Tensor:
    """Permutation that sorts points lexicographically by (x, y, z, intensity).

    Summing per-voxel features in this order makes pooling independent of
    the input point order, bit for bit.
    """
    order = torch.arange(points.shape[0])
    for col in range(points.shape[1] - 1, -1, -1):
        order = order[torch.sort(points.detach()[order, col], stable=True).indices]
    return order


def voxel_mean(features: Tensor, inverse: Tensor, num_voxels: int, order: Tensor) -> Tensor:
    """Mean feature of each point's voxel, broadcast back to the points."""
    sums = features.new_zeros(num_voxels, features.shape[1]).index_add(0, inverse[order], features[order])
    counts = torch.bincount(inverse, minlength=num_voxels).to(features.dtype)
    return (sums / counts[:, None])[inverse]


class PointEncoder(nn.Module):
    """Point encoder-decoder over S growing voxel sizes.

    Down path: each stage fuses the per-point features with the mean of the
    point's voxel. Up path: per-point merges from coarse to fine, so output
    scale ``s`` sees the context of every coarser scale.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.voxel_sizes = cfg.voxel_sizes
        self.register_buffer("coord_scale", torch.tensor(cfg.coord_scale), persistent=False)
        self.stem = nn.Sequential(nn.Linear(4, cfg.l_c), nn.ReLU(), nn.Linear(cfg.l_c, cfg.l_c), nn.ReLU())
        # stage input: point feature, its voxel mean, and raw voxel statistics
        # (offset from the centroid, spread per axis, mean intensity)
        self.stages = nn.ModuleList(nn.Linear(2 * cfg.l_c + 7, cfg.l_c) for _ in range(cfg.num_scales))
        self.up = nn.ModuleList(nn.Linear(2 * cfg.l_c, cfg.l_c) for _ in range(cfg.num_scales - 1))
        self.norms = nn.ModuleList(nn.LayerNorm(cfg.l_c) for _ in range(2 * cfg.num_scales - 1))

    def down(self, points: Tensor) -> tuple[FeaturePyramid, FeaturePyramid]:
        """Down-path features and the pooled components, one per scale."""
        xyz = points[:, :3]
        h = self.stem(torch.cat([xyz / self.coord_scale.to(xyz.dtype), points[:, 3:4]], dim=1))
        order = canonical_order(points)
        feats, pooled_all = [], []
        for size, stage in zip(self.voxel_sizes, self.stages):
            inverse, nv = voxel_index(xyz, size)
            pooled = voxel_mean(h, inverse, nv, order)
            stats = voxel_mean(torch.cat([xyz, xyz * xyz, points[:, 3:4]], dim=1), inverse, nv, order)
            centroid = stats[:, :3]
            spread = (stats[:, 3:6] - centroid * centroid).clamp_min(0.0).sqrt()
            geo = torch.cat([(xyz - centroid) / size, spread / size, stats[:, 6:7]], dim=1)
            h = h + F.relu(self.norms[len(feats)](stage(torch.cat([h, pooled, geo], dim=1))))
            feats.append(h)
            pooled_all.append(pooled)
        return feats, pooled_all

    def forward(self, points: Tensor) -> FeaturePyramid:
        feats, _ = self.down(points)
        out = list(feats)
        u = feats[-1]
        for s in range(len(feats) - 2, -1, -1):
            u = feats[s] + F.relu(self.norms[len(feats) + s](self.up[s](torch.cat([feats[s], u], dim=1))))
            out[s] = u
        return out


class ImageEncoder(nn.Module):
    """S stride-2 3x3 convolution stages."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        chans = [3] + [cfg.l_h] * cfg.num_scales
        self.stages = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], kernel_size=3, stride=2, padding=1) for i in range(cfg.num_scales)
        )

    def forward(self, image: Tensor) -> FeaturePyramid:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"expected a [3, H, W] image, got {tuple(image.shape)}")
        stride = 2 ** len(self.stages)
        if image.shape[1] % stride or image.shape[2] % stride:
            raise ValueError(f"image size {tuple(image.shape[1:])} is not divisible by {stride}")
        x = image[None]
        pyramid = []
        for conv in self.stages:
            x = F.relu(conv(x))
            pyramid.append(x[0])
        return pyramid


class PointDecoder(nn.Module):
    def __init__(self, in_dim: int, num_classes: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, in_dim), nn.ReLU(), nn.Linear(in_dim, num_classes))

    def forward(self, fused: Tensor) -> Tensor:
        return self.net(fused)


class ImageDecoder(nn.Module):
    def __init__(self, in_dim: int, num_classes: int):
        super().__init__()
        self.net = nn.Sequential(nn.Conv2d(in_dim, in_dim, 1), nn.ReLU(), nn.Conv2d(in_dim, num_classes, 1))

    def forward(self, fused: Tensor, out_size: tuple[int, int]) -> Tensor:
        logits = self.net(fused[None])
        return F.interpolate(logits, size=out_size, mode="bilinear", align_corners=False)[0]


def decode3d(decoder: PointDecoder, skip_proj: nn.Linear, pyramid: FeaturePyramid, aligned: Tensor) -> Tensor:
    """[p, l_h] aligned features + projected finest-scale skip -> [p, K] logits."""
    skip = pyramid[0]
    if aligned.shape[0] != skip.shape[0] or aligned.shape[1] != skip_proj.out_features:
        raise ValueError(f"aligned features {tuple(aligned.shape)} do not match skip {tuple(skip.shape)}")
    return decoder(aligned + skip_proj(skip))


def decode2d(
    decoder: ImageDecoder, skip_proj: nn.Conv2d, pyramid: FeaturePyramid, aligned: Tensor, out_size: tuple[int, int]
) -> Tensor:
    """[l_c, H/2, W/2] aligned map + projected finest-scale skip -> [K, H, W] logits."""
    skip = pyramid[0]
    if aligned.shape[1:] != skip.shape[1:] or aligned.shape[0] != skip_proj.out_channels:
        raise ValueError(f"aligned map {tuple(aligned.shape)} does not match skip {tuple(skip.shape)}")
    return decoder(aligned + skip_proj(skip[None])[0], out_size)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
