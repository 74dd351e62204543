"""The two-branch training network and its stripped 3D-only inference form."""
from __future__ import annotations

import torch
from torch import Tensor, nn

from .alignment import ContrastiveConfig, InverseProjection, ProjectionHead, inverse_project, project_embed
from .backbones import (
    BackboneConfig,
    ImageDecoder,
    ImageEncoder,
    PointDecoder,
    PointEncoder,
    decode2d,
    decode3d,
)

PARAM_GROUPS = ("encoder3d", "encoder2d", "decoder3d", "decoder2d", "heads", "inverse", "skips")
# parameter-name prefixes that survive export
INFERENCE_PREFIXES = ("encoder3d.", "heads.3d.0.", "inverse.3d.", "skips.3d.", "decoder3d.")


def run_3d(encoder, head, inverse, skip, decoder, points: Tensor):
    """Shared 3D path: returns (pyramid, finest embeddings, logits)."""
    pyramid = encoder(points)
    z = project_embed(pyramid[0], head)
    aligned = inverse_project(z, inverse)
    return pyramid, z, decode3d(decoder, skip, pyramid, aligned)


class XModelKD(nn.Module):
    def __init__(self, backbone: BackboneConfig, align: ContrastiveConfig, seed: int = 0):
        super().__init__()
        if backbone.num_classes < 1:
            raise ValueError("num_classes must be set before building the model")
        self.backbone_cfg = backbone
        self.align_cfg = align
        K, S, d_p, hid = backbone.num_classes, backbone.num_scales, align.proj_dim, backbone.head_hidden
        l_c, l_h = backbone.l_c, backbone.l_h
        self.use_2d = backbone.use_2d

        # 3D modules draw from their own generator state so the 3D
        # initialisation does not depend on whether the 2D branch exists
        torch.manual_seed(seed)
        self.encoder3d = PointEncoder(backbone)
        self.heads = nn.ModuleDict({"3d": nn.ModuleList(ProjectionHead(l_c, hid, d_p) for _ in range(S))})
        self.inverse = nn.ModuleDict({"3d": InverseProjection(d_p, l_h)})
        self.skips = nn.ModuleDict({"3d": nn.Linear(l_c, l_h)})
        self.decoder3d = PointDecoder(l_h, K)

        if self.use_2d:
            torch.manual_seed(seed + 1)
            self.encoder2d = ImageEncoder(backbone)
            self.heads["2d"] = nn.ModuleList(ProjectionHead(l_h, hid, d_p) for _ in range(S))
            self.inverse["2d"] = InverseProjection(d_p, l_c)
            self.skips["2d"] = nn.Conv2d(l_h, l_c, 1)
            self.decoder2d = ImageDecoder(l_c, K)
            if backbone.freeze_2d:
                self.encoder2d.requires_grad_(False)

    def forward3d(self, points: Tensor):
        return run_3d(
            self.encoder3d, self.heads["3d"][0], self.inverse["3d"], self.skips["3d"], self.decoder3d, points
        )

    def encode2d(self, image: Tensor) -> list[Tensor]:
        return self.encoder2d(image)

    def forward2d(self, image: Tensor, pyramid: list[Tensor] | None = None):
        """Returns (pyramid, finest embedding map [h, w, d_p], logits [K, H, W])."""
        if not self.use_2d:
            raise RuntimeError("model was built without the 2D branch")
        if pyramid is None:
            pyramid = self.encoder2d(image)
        z = project_embed(pyramid[0], self.heads["2d"][0], channels_first=True)
        aligned = inverse_project(z, self.inverse["2d"], channels_first_out=True)
        logits = decode2d(self.decoder2d, self.skips["2d"], pyramid, aligned, tuple(image.shape[1:]))
        return pyramid, z, logits

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def group_of(self, name: str) -> str:
        return name.split(".", 1)[0]

    def parameter_counts(self) -> dict:
        groups = {g: 0 for g in PARAM_GROUPS}
        inference = 0
        for name, p in self.named_parameters():
            groups[self.group_of(name)] += p.numel()
            if name.startswith(INFERENCE_PREFIXES):
                inference += p.numel()
        total = sum(groups.values())
        return {"groups": groups, "total": total, "inference_3d": inference, "training_only": total - inference}


class InferenceModel(nn.Module):
    """Only the 3D stream: encoder, finest 3D head, 3D inverse projection, 3D skip, 3D decoder."""

    def __init__(self, backbone: BackboneConfig, align: ContrastiveConfig):
        super().__init__()
        K, d_p, hid = backbone.num_classes, align.proj_dim, backbone.head_hidden
        self.backbone_cfg = backbone
        self.align_cfg = align
        self.encoder3d = PointEncoder(backbone)
        self.heads = nn.ModuleDict({"3d": nn.ModuleList([ProjectionHead(backbone.l_c, hid, d_p)])})
        self.inverse = nn.ModuleDict({"3d": InverseProjection(d_p, backbone.l_h)})
        self.skips = nn.ModuleDict({"3d": nn.Linear(backbone.l_c, backbone.l_h)})
        self.decoder3d = PointDecoder(backbone.l_h, K)

    def forward(self, points: Tensor) -> Tensor:
        return run_3d(
            self.encoder3d, self.heads["3d"][0], self.inverse["3d"], self.skips["3d"], self.decoder3d, points
        )[2]

    def parameter_counts(self) -> dict:
        groups: dict[str, int] = {}
        for name, p in self.named_parameters():
            g = name.split(".", 1)[0]
            groups[g] = groups.get(g, 0) + p.numel()
        return {"groups": groups, "total": sum(groups.values())}


def strip_to_inference(model: XModelKD) -> InferenceModel:
    inf = InferenceModel(model.backbone_cfg, model.align_cfg)
    state = {k: v for k, v in model.state_dict().items() if k.startswith(INFERENCE_PREFIXES)}
    inf.load_state_dict(state, strict=True)
    return inf


@torch.no_grad()
def predict_labels(logits: Tensor) -> Tensor:
    """Argmax over classes; torch.argmax returns the first maximal index."""
    return torch.argmax(logits, dim=1)
