"""Region-aware exposure correction network (RECNet).

The network is a constant-resolution chain of region-aware blocks (RMB).
Each block predicts a soft underexposure mask, splits its input features
into over-/under-exposed parts, normalizes each part toward an
exposure-invariant space (mask-aware instance normalization), and then
restores local detail through a mixed-scale spatial path plus dual
channel-wise self-attention. A squeeze-excitation refine block and a
zero-initialized residual head close the model, so an untrained network
is exactly the identity mapping.

Tensor layout is NCHW throughout: images are (B, 3, H, W) in [0, 1],
feature maps are (B, C, H, W), masks are (B, 1, H, W).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

IN_EPS = 1e-5  # instance-norm variance guard
MIN_IMAGE_SIZE = 8


@dataclass(frozen=True)
class ModelConfig:
    """Width/depth hyperparameters of the block stack."""

    num_blocks: int = 5
    base_channels: int = 32
    attn_heads: int = 4
    se_reduction: int = 8

    def __post_init__(self):
        if not 1 <= self.num_blocks <= 8:
            raise ValueError(f"num_blocks must be in [1, 8], got {self.num_blocks}")
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.base_channels % self.attn_heads != 0:
            raise ValueError(
                f"base_channels ({self.base_channels}) must be divisible by "
                f"attn_heads ({self.attn_heads})"
            )

    @property
    def head_dim(self) -> int:
        return self.base_channels // self.attn_heads

    @property
    def temperature(self) -> float:
        return math.sqrt(self.head_dim)


def validate_image(image: torch.Tensor) -> None:
    """Check an image tensor against the model's input contract."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise ValueError(f"expected image of shape (B, 3, H, W), got {tuple(image.shape)}")
    if image.shape[2] < MIN_IMAGE_SIZE or image.shape[3] < MIN_IMAGE_SIZE:
        raise ValueError(
            f"image must be at least {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}, "
            f"got {image.shape[2]}x{image.shape[3]}"
        )
    if not torch.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")


def _conv(in_ch: int, out_ch: int, kernel: int, groups: int = 1) -> nn.Conv2d:
    # zero padding sized to preserve H x W
    return nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2, groups=groups)


def instance_norm(x: torch.Tensor) -> torch.Tensor:
    """Per-sample, per-channel standardization over spatial positions.

    No learned affine; constant channels normalize to zero thanks to the
    variance epsilon.
    """
    return F.instance_norm(x, eps=IN_EPS)


def split_regions(f_in: torch.Tensor, mask_u: torch.Tensor):
    """Split features into over-/under-exposure parts via the soft mask.

    Returns (f_o, f_u) with f_u = f_in * mask_u and f_o = f_in * (1 - mask_u),
    so f_o + f_u reconstructs f_in.
    """
    if mask_u.shape[0] != f_in.shape[0] or mask_u.shape[-2:] != f_in.shape[-2:]:
        raise ValueError(
            f"mask shape {tuple(mask_u.shape)} does not align with features "
            f"{tuple(f_in.shape)}"
        )
    f_u = f_in * mask_u
    f_o = f_in * (1.0 - mask_u)
    return f_o, f_u


class ExposureMaskPredictor(nn.Module):
    """EMP: conv-relu stack ending in a sigmoid, one channel out.

    Produces the soft underexposure probability mask (1 = underexposed).
    """

    def __init__(self, channels: int):
        super().__init__()
        mid = max(channels // 2, 1)
        low = max(channels // 4, 1)
        self.body = nn.Sequential(
            _conv(channels, mid, 3),
            nn.ReLU(inplace=True),
            _conv(mid, low, 3),
            nn.ReLU(inplace=True),
            _conv(low, low, 3),
            nn.ReLU(inplace=True),
            _conv(low, 1, 1),
        )

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.body(feature))


class MaskAwareInstanceNorm(nn.Module):
    """MaIN: gated per-region instance normalization.

    Each exposure branch is re-weighted by a spatial gate computed from its
    channelwise max/avg maps concatenated with the branch mask, then
    instance-normalized together with the unsplit input and fused back to
    ``channels`` via per-branch 1x1 projections.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.gate_o = _conv(3, 1, 3)
        self.gate_u = _conv(3, 1, 3)
        self.proj_o = _conv(2 * channels, channels, 1)
        self.proj_u = _conv(2 * channels, channels, 1)

    @staticmethod
    def _gate_input(f_e: torch.Tensor, mask_e: torch.Tensor) -> torch.Tensor:
        f_max = f_e.amax(dim=1, keepdim=True)
        f_avg = f_e.mean(dim=1, keepdim=True)
        return torch.cat([f_max, f_avg, mask_e], dim=1)

    def fuse(self, f_o_gated: torch.Tensor, f_u_gated: torch.Tensor,
             f_in: torch.Tensor) -> torch.Tensor:
        branch_o = self.proj_o(instance_norm(torch.cat([f_o_gated, f_in], dim=1)))
        branch_u = self.proj_u(instance_norm(torch.cat([f_u_gated, f_in], dim=1)))
        return branch_o + branch_u

    def forward(self, f_o: torch.Tensor, f_u: torch.Tensor, f_in: torch.Tensor,
                mask_u: torch.Tensor) -> torch.Tensor:
        mask_o = 1.0 - mask_u
        g_o = torch.sigmoid(self.gate_o(self._gate_input(f_o, mask_o)))
        g_u = torch.sigmoid(self.gate_u(self._gate_input(f_u, mask_u)))
        return self.fuse(g_o * f_o, g_u * f_u, f_in)


class MixedScaleSpatial(nn.Module):
    """Multi-scale local feature path of the restoration unit.

    Two depthwise branches (3x3 and 5x5) feed merged key/value maps and the
    spatial output f_s. The pre-merge branches are returned as well because
    the channel-attention path consumes them as key/value pairs.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.dw3 = _conv(channels, channels, 3, groups=channels)
        self.dw5 = _conv(channels, channels, 5, groups=channels)
        self.merge_k = _conv(2 * channels, channels, 3)
        self.merge_v = _conv(2 * channels, channels, 5)
        self.fuse = _conv(2 * channels, channels, 1)

    def forward(self, f_n: torch.Tensor):
        b1 = F.relu(self.dw3(f_n))
        b2 = F.relu(self.dw5(f_n))
        both = torch.cat([b1, b2], dim=1)
        x_k = F.relu(self.merge_k(both))
        x_v = F.relu(self.merge_v(both))
        f_s = self.fuse(torch.cat([x_k, x_v], dim=1))
        return x_k, x_v, f_s, (b1, b2)


def channel_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                      heads: int):
    """Channel-wise attention: softmax((q^T k) / sqrt(d)) applied to v.

    q, k, v: (B, C, H, W) with C divisible by ``heads``. The attention
    matrix is (d x d) per head (d = C / heads), contracting over spatial
    positions; softmax normalizes over the key-channel axis.

    Returns (out, attn) with out (B, C, H, W) and attn (B, heads, d, d).
    """
    b, c, h, w = q.shape
    if c % heads != 0:
        raise ValueError(f"channel count {c} not divisible by {heads} heads")
    d = c // heads
    temperature = math.sqrt(d)

    def to_heads(x):
        return x.reshape(b, heads, d, h * w)

    qh, kh, vh = to_heads(q), to_heads(k), to_heads(v)
    logits = qh @ kh.transpose(-1, -2) / temperature  # (B, heads, d, d)
    attn = logits.softmax(dim=-1)
    out = attn @ vh
    return out.reshape(b, c, h, w), attn


class ChannelSelfAttention(nn.Module):
    """Dual CSA: queries from the raw block input, keys/values per scale."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q3 = _conv(channels, channels, 3)
        self.q5 = _conv(channels, channels, 5)
        self.fuse = _conv(2 * channels, channels, 1)

    def forward(self, f_in: torch.Tensor, keys, values) -> torch.Tensor:
        q1 = F.relu(self.q3(f_in))
        q2 = F.relu(self.q5(f_in))
        a1, _ = channel_attention(q1, keys[0], values[0], self.heads)
        a2, _ = channel_attention(q2, keys[1], values[1], self.heads)
        return self.fuse(torch.cat([a1, a2], dim=1))


class RegionAwareBlock(nn.Module):
    """One RMB: de-exposure (mask split + MaIN) followed by restoration."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_channels
        self.emp = ExposureMaskPredictor(c)
        self.main = MaskAwareInstanceNorm(c)
        self.spatial = MixedScaleSpatial(c)
        self.csa = ChannelSelfAttention(c, cfg.attn_heads)
        self.fuse = _conv(3 * c, c, 1)

    def forward(self, f_in: torch.Tensor):
        mask_u = self.emp(f_in)
        f_o, f_u = split_regions(f_in, mask_u)
        f_n = self.main(f_o, f_u, f_in, mask_u)
        _, _, f_s, branches = self.spatial(f_n)
        f_c = self.csa(f_in, branches, branches)
        f_out = self.fuse(torch.cat([f_n, f_s, f_c], dim=1))
        return f_out, mask_u


class RefineBlock(nn.Module):
    """Residual channel attention (squeeze-excitation with identity skip)."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        mid = max(channels // reduction, 1)
        self.squeeze = nn.Sequential(
            nn.Conv2d(channels, mid, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, channels, 1),
        )

    def gate_from(self, f: torch.Tensor) -> torch.Tensor:
        pooled = f.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.squeeze(pooled))

    @staticmethod
    def combine(f: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
        return f + f * gate

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.combine(f, self.gate_from(f))


class RECNet(nn.Module):
    """Full model: stem -> N region-aware blocks -> refine -> residual head.

    ``forward`` returns the corrected image clamped to [0, 1] and the list
    of per-block underexposure masks (all of them are supervised by the
    mask loss). The output head is zero-initialized, so a freshly built
    model reproduces its input exactly.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg if cfg is not None else ModelConfig()
        c = self.cfg.base_channels
        self.stem = _conv(3, c, 1)
        self.blocks = nn.ModuleList(
            RegionAwareBlock(self.cfg) for _ in range(self.cfg.num_blocks)
        )
        self.refine = RefineBlock(c, self.cfg.se_reduction)
        self.head = _conv(c, 3, 1)
        self.apply(init_conv_weights)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def stem_features(self, image: torch.Tensor) -> torch.Tensor:
        validate_image(image)
        return self.stem(image)

    def forward(self, image: torch.Tensor):
        f = self.stem_features(image)
        masks = []
        for block in self.blocks:
            f, mask_u = block(f)
            masks.append(mask_u)
        f = self.refine(f)
        out = (image + self.head(f)).clamp(0.0, 1.0)
        return out, masks


def init_conv_weights(module: nn.Module) -> None:
    """Kaiming fan-in normal for conv kernels, zero biases."""
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def model_summary(model: RECNet) -> str:
    """Per-module parameter counts plus the total, as a printable table."""
    rows = []
    for name, child in model.named_children():
        if isinstance(child, nn.ModuleList):
            for i, sub in enumerate(child):
                rows.append((f"{name}.{i}", count_parameters(sub)))
        else:
            rows.append((name, count_parameters(child)))
    out = io.StringIO()
    width = max(len(n) for n, _ in rows)
    cfg = model.cfg
    print(
        f"RECNet(num_blocks={cfg.num_blocks}, base_channels={cfg.base_channels}, "
        f"attn_heads={cfg.attn_heads})",
        file=out,
    )
    for name, n in rows:
        print(f"  {name:<{width}}  {n:>10,}", file=out)
    print(f"  {'total':<{width}}  {count_parameters(model):>10,}", file=out)
    return out.getvalue()
