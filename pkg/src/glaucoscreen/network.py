"""Backbone, branch encoders, fusion head and the three-branch classifier."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import CBAM
from .dwm import DEFAULT_SCALES, DwmScaleConfig, WindowProposal, extract_patches, propose_windows

EMBED_DIM = 128


@dataclass(frozen=True)
class BackboneConfig:
    stage_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    blocks_per_stage: tuple[int, int, int, int] = (1, 1, 1, 1)
    cbam_enabled: bool = True
    input_side: int = 299
    cbam_reduction: int = 16
    spatial_kernel: int = 7

    def __post_init__(self):
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ValueError("backbone needs exactly four residual stages")
        if any(b <= a for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ValueError(f"stage channels must strictly increase, got {self.stage_channels}")
        if min(self.blocks_per_stage) < 1 or self.input_side < 1:
            raise ValueError("blocks per stage and input side must be positive")

    @property
    def feature_side(self) -> int:
        side = self.input_side
        side = (side + 2 * 3 - 7) // 2 + 1  # stem conv
        side = (side + 2 - 3) // 2 + 1  # stem max pool
        for _ in range(3):  # stages 2-4
            side = (side + 2 - 3) // 2 + 1
        return side


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "mha_readout"
    heads: int = 4
    token_count: int = 6
    embed_dim: int = EMBED_DIM
    token_offsets: bool = True

    def __post_init__(self):
        if self.mode not in ("mha_readout", "concat_linear"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if self.mode == "mha_readout" and self.embed_dim % self.heads:
            raise ValueError(f"{self.heads} heads do not divide embedding width {self.embed_dim}")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    patch_side: int = 299
    scales: tuple[DwmScaleConfig, ...] = DEFAULT_SCALES
    nms_kernel: int = 3
    fusion_mode: str = "mha_readout"
    heads: int = 4
    token_offsets: bool = True
    branches: int = 3

    def __post_init__(self):
        if self.branches not in (2, 3):
            raise ValueError(f"branches must be 2 or 3, got {self.branches}")

    @property
    def proposals(self) -> int:
        return sum(s.proposals for s in self.scales) if self.branches == 3 else 0

    @property
    def fusion(self) -> FusionConfig:
        return FusionConfig(
            mode=self.fusion_mode,
            heads=self.heads,
            token_count=2 + self.proposals,
            token_offsets=self.token_offsets,
        )

    @property
    def patch_backbone(self) -> BackboneConfig:
        return BackboneConfig(**{**asdict(self.backbone), "input_side": self.patch_side})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        bb = dict(d.pop("backbone", {}))
        for key in ("stage_channels", "blocks_per_stage"):
            if key in bb:
                bb[key] = tuple(bb[key])
        scales = tuple(DwmScaleConfig(**s) if isinstance(s, dict) else DwmScaleConfig(*s) for s in d.pop("scales", DEFAULT_SCALES))
        return cls(backbone=BackboneConfig(**bb), scales=scales, **d)


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, std=1.0 / math.sqrt(m.in_features))
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, cfg: BackboneConfig):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.cbam = CBAM(cout, cfg.cbam_reduction, cfg.spatial_kernel) if cfg.cbam_enabled else None
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.cbam is not None:
            out = self.cbam(out)
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + identity)


class Backbone(nn.Module):
    """Stem (stride 4) and four residual stages; total stride 32."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.stage_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, c[0], 7, 2, 3, bias=False),
            nn.BatchNorm2d(c[0]),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, 2, 1),
        )
        stages = []
        cin = c[0]
        for i, (cout, nblocks) in enumerate(zip(c, cfg.blocks_per_stage)):
            blocks = []
            for j in range(nblocks):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(BasicBlock(cin, cout, stride, cfg))
                cin = cout
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.Sequential(*stages)
        self.post_cbam = CBAM(c[3], cfg.cbam_reduction, cfg.spatial_kernel) if cfg.cbam_enabled else None
        _init_weights(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        side = self.cfg.input_side
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != side or x.shape[3] != side:
            raise ValueError(f"backbone expects Bx3x{side}x{side} input, got {tuple(x.shape)}")
        x = self.stages(self.stem(x))
        if self.post_cbam is not None:
            x = self.post_cbam(x)
        return x


def branch_embed(fmap: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Global average pool then linear map; ``weight`` is ``out x C``."""
    batched = fmap if fmap.ndim == 4 else fmap.unsqueeze(0)
    if batched.shape[1] != weight.shape[1]:
        raise ValueError(f"feature map has {batched.shape[1]} channels, embedding expects {weight.shape[1]}")
    out = F.linear(batched.mean(dim=(2, 3)), weight, bias)
    return out if fmap.ndim == 4 else out[0]


class Encoder(nn.Module):
    """Backbone plus embedding readout for one branch."""

    def __init__(self, cfg: BackboneConfig, embed_dim: int = EMBED_DIM):
        super().__init__()
        self.backbone = Backbone(cfg)
        self.embed = nn.Linear(cfg.stage_channels[3], embed_dim)
        _init_weights(self.embed)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        fmap = self.backbone(x)
        return fmap, branch_embed(fmap, self.embed.weight, self.embed.bias)


def multihead_self_attention(tokens: torch.Tensor, q: nn.Linear, k: nn.Linear, v: nn.Linear, o: nn.Linear, heads: int):
    """Scaled dot-product self-attention over ``(B, T, D)`` tokens."""
    b, t, d = tokens.shape
    hd = d // heads

    def split(x):
        return x.reshape(b, t, heads, hd).transpose(1, 2)

    qh, kh, vh = split(q(tokens)), split(k(tokens)), split(v(tokens))
    att = torch.softmax(qh @ kh.transpose(-2, -1) / math.sqrt(hd), dim=-1)
    mixed = (att @ vh).transpose(1, 2).reshape(b, t, d)
    return o(mixed)


class FusionHead(nn.Module):
    def __init__(self, cfg: FusionConfig, n_classes: int = 2):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        if cfg.mode == "mha_readout":
            self.q, self.k, self.v, self.o = (nn.Linear(d, d) for _ in range(4))
            self.offsets = nn.Parameter(torch.zeros(cfg.token_count, d)) if cfg.token_offsets else None
            self.readout = nn.Linear(d, n_classes)
        else:
            self.readout = nn.Linear(cfg.token_count * d, n_classes)
        _init_weights(self)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim != 3 or tokens.shape[1] != self.cfg.token_count:
            raise ValueError(f"fusion expects Bx{self.cfg.token_count}xD tokens, got {tuple(tokens.shape)}")
        if self.cfg.mode == "concat_linear":
            return self.readout(tokens.flatten(1))
        x = tokens if self.offsets is None else tokens + self.offsets
        x = x + multihead_self_attention(x, self.q, self.k, self.v, self.o, self.cfg.heads)
        return self.readout(x.mean(dim=1))


def fuse_and_classify(embeddings: Sequence[torch.Tensor], head: FusionHead) -> torch.Tensor:
    """Fuse one sample's branch embeddings into a 2-vector of logits."""
    if len(embeddings) != head.cfg.token_count:
        raise ValueError(f"expected {head.cfg.token_count} embeddings, got {len(embeddings)}")
    return head(torch.stack(list(embeddings)).unsqueeze(0))[0]


class GlaucomaNet(nn.Module):
    """Global, ROI and (optionally) DWM-patch branches fused into two logits.

    Token order is ``[patch_1 .. patch_p, global, roi]``.  The patch branch
    re-encodes crops of the full image chosen from the global feature map;
    the selection is a discrete, non-differentiable step.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.global_encoder = Encoder(cfg.backbone)
        self.roi_encoder = Encoder(cfg.backbone)
        self.patch_encoder = Encoder(cfg.patch_backbone) if cfg.branches == 3 else None
        self.fusion = FusionHead(cfg.fusion)

    def propose(self, fmaps: torch.Tensor, image_side: int) -> list[list[WindowProposal]]:
        maps = fmaps.detach().cpu().double().numpy()
        return [
            propose_windows(m, self.cfg.scales, (image_side, image_side), self.cfg.nms_kernel) for m in maps
        ]

    def patch_batch(self, full: torch.Tensor, proposals: list[list[WindowProposal]]) -> torch.Tensor:
        images = full.detach().cpu().double().numpy()
        side = self.cfg.patch_side
        patches = [np.stack(extract_patches(img, props, side)) for img, props in zip(images, proposals)]
        return torch.from_numpy(np.concatenate(patches)).to(dtype=full.dtype, device=full.device)

    def forward(
        self,
        full: torch.Tensor,
        roi: torch.Tensor,
        proposals: list[list[WindowProposal]] | None = None,
    ) -> tuple[torch.Tensor, list[list[WindowProposal]]]:
        g_map, g_emb = self.global_encoder(full)
        _, r_emb = self.roi_encoder(roi)
        tokens = [g_emb.unsqueeze(1), r_emb.unsqueeze(1)]
        if self.patch_encoder is None:
            proposals = [[] for _ in range(full.shape[0])]
        else:
            if proposals is None:
                proposals = self.propose(g_map, full.shape[-1])
            _, p_emb = self.patch_encoder(self.patch_batch(full, proposals))
            tokens.insert(0, p_emb.reshape(full.shape[0], self.cfg.proposals, -1))
        return self.fusion(torch.cat(tokens, dim=1)), proposals


def model_forward(model: GlaucomaNet, full_image, roi_image) -> tuple[torch.Tensor, list[WindowProposal]]:
    """Single-sample convenience wrapper: ``(3, S, S)`` images in, 2 logits out."""
    dtype = next(model.parameters()).dtype
    full = torch.as_tensor(np.asarray(full_image), dtype=dtype).unsqueeze(0)
    roi = torch.as_tensor(np.asarray(roi_image), dtype=dtype).unsqueeze(0)
    logits, proposals = model(full, roi)
    return logits[0], proposals[0]
