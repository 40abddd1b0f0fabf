"""Training objectives: reconstruction, color, mask supervision, and the
exposure contrastive regularizer.

The total objective is a weighted sum of four terms: pixel MSE, a cosine
color term, binary cross entropy on the predicted exposure masks, and the
contrastive term that pulls each corrected region's perceptual features
toward the ground truth and away from the degraded input, plus a
cross-region style-correlation ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from recnet.data import luma
from recnet.perceptual import PerceptualExtractor

BCE_EPS = 1e-7
ECR_EPS = 1e-7
COS_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four loss terms (mse, cos, bce, ecr)."""

    mse: float = 1.0
    cos: float = 1.0
    bce: float = 0.25
    ecr: float = 0.1

    def __post_init__(self):
        for name in ("mse", "cos", "bce", "ecr"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse_loss(out: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check_same_shape(out, gt)
    return ((out - gt) ** 2).mean()


def cosine_color_loss(out: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """1 - mean cosine similarity of per-pixel RGB vectors.

    Scale-invariant in either argument; epsilon-guarded norms keep black
    pixels finite.
    """
    _check_same_shape(out, gt)
    return 1.0 - F.cosine_similarity(out, gt, dim=1, eps=COS_EPS).mean()


def compute_gt_mask(i_in: torch.Tensor, i_gt: torch.Tensor) -> torch.Tensor:
    """Binary overexposure mask: 1 where the input luma exceeds the target's.

    Strict inequality, so identical images yield an all-zero mask. The
    predictor's underexposure mask is supervised against the complement
    (see ``mask_target``).
    """
    _check_same_shape(i_in, i_gt)
    return (luma(i_in) > luma(i_gt)).to(i_in.dtype)


def mask_target(i_in: torch.Tensor, i_gt: torch.Tensor,
                polarity: str = "underexposure") -> torch.Tensor:
    """BCE target for the predicted mask under the chosen polarity.

    "underexposure" (default): target 1 where the input is darker than the
    ground truth, matching the predictor's mask semantics. "overexposure"
    supervises against the raw brighter-than-target mask instead.
    """
    m_gt = compute_gt_mask(i_in, i_gt)
    if polarity == "underexposure":
        return 1.0 - m_gt
    if polarity == "overexposure":
        return m_gt
    raise ValueError(f"unknown mask polarity {polarity!r}")


def bce_mask_loss(masks, target: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy of each block's mask against the target,
    averaged over blocks. Probabilities are clamped to [eps, 1-eps]."""
    if isinstance(masks, torch.Tensor):
        masks = [masks]
    if not masks:
        raise ValueError("no masks to supervise")
    total = 0.0
    for mask in masks:
        _check_same_shape(mask, target)
        p = mask.clamp(BCE_EPS, 1.0 - BCE_EPS)
        total = total - (target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()
    return total / len(masks)


def extract_regions(img: torch.Tensor, mask_u: torch.Tensor):
    """Split an image into (overexposed, underexposed) parts via the mask.

    Returns (omega_o, omega_u) with omega_o + omega_u == img elementwise.
    """
    if mask_u.shape[0] != img.shape[0] or mask_u.shape[-2:] != img.shape[-2:]:
        raise ValueError(
            f"mask shape {tuple(mask_u.shape)} does not align with image "
            f"{tuple(img.shape)}"
        )
    omega_u = img * mask_u
    omega_o = img * (1.0 - mask_u)
    return omega_o, omega_u


def style_correlation(h_o: torch.Tensor, h_u: torch.Tensor) -> torch.Tensor:
    """Cross-region style Gram: (1/P) * H_o^T H_u over spatial positions.

    h_o, h_u: (B, C, H, W) feature maps; returns (B, C, C). Normalizing by
    the position count keeps the statistic resolution-invariant.
    """
    _check_same_shape(h_o, h_u)
    b, c, h, w = h_o.shape
    flat_o = h_o.reshape(b, c, h * w)
    flat_u = h_u.reshape(b, c, h * w)
    return flat_o @ flat_u.transpose(1, 2) / (h * w)


def _l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).abs().mean()


def ecr_loss(i_out: torch.Tensor, i_in: torch.Tensor, i_gt: torch.Tensor,
             mask_u: torch.Tensor, extractor: PerceptualExtractor,
             detach_mask: bool = True) -> torch.Tensor:
    """Exposure contrastive regularizer.

    All three images are split with the SAME predicted mask. For each region
    the ratio D(h, h+)/(D(h, h+) + D(h, h-) + eps) pulls the corrected
    region's features toward the ground truth (positive) and away from the
    input (negative); a third ratio does the same for the cross-region style
    correlation. D is the mean absolute difference. Result lies in [0, 3).

    ``detach_mask`` stops this term's gradient from reshaping the mask; mask
    learning is left to the BCE supervision.
    """
    _check_same_shape(i_out, i_in)
    _check_same_shape(i_out, i_gt)
    m = mask_u.detach() if detach_mask else mask_u

    out_o, out_u = extract_regions(i_out, m)
    h_out = {"o": extractor(out_o), "u": extractor(out_u)}
    with torch.no_grad():
        gt_o, gt_u = extract_regions(i_gt, m)
        in_o, in_u = extract_regions(i_in, m)
        h_gt = {"o": extractor(gt_o), "u": extractor(gt_u)}
        h_in = {"o": extractor(in_o), "u": extractor(in_u)}

    loss = 0.0
    for region in ("o", "u"):
        d_pos = _l1(h_out[region], h_gt[region])
        d_neg = _l1(h_out[region], h_in[region])
        loss = loss + d_pos / (d_pos + d_neg + ECR_EPS)

    c_out = style_correlation(h_out["o"], h_out["u"])
    c_gt = style_correlation(h_gt["o"], h_gt["u"])
    c_in = style_correlation(h_in["o"], h_in["u"])
    d_pos = _l1(c_out, c_gt)
    d_neg = _l1(c_out, c_in)
    return loss + d_pos / (d_pos + d_neg + ECR_EPS)


def total_loss(i_out: torch.Tensor, i_in: torch.Tensor, i_gt: torch.Tensor,
               masks, weights: LossWeights,
               extractor: PerceptualExtractor | None = None,
               mask_polarity: str = "underexposure",
               detach_ecr_mask: bool = True):
    """Weighted sum of the four objectives plus a per-term breakdown.

    Returns (total, parts) where parts maps term names to their unweighted
    scalar tensors; the weighted parts always sum back to the total.
    """
    parts = {
        "mse": mse_loss(i_out, i_gt),
        "cos": cosine_color_loss(i_out, i_gt),
        "bce": bce_mask_loss(masks, mask_target(i_in, i_gt, mask_polarity)),
    }
    if weights.ecr > 0:
        if extractor is None:
            raise ValueError("ecr weight > 0 requires a perceptual extractor")
        final_mask = masks[-1] if not isinstance(masks, torch.Tensor) else masks
        parts["ecr"] = ecr_loss(i_out, i_in, i_gt, final_mask, extractor,
                                detach_mask=detach_ecr_mask)
    else:
        parts["ecr"] = torch.zeros((), dtype=i_out.dtype, device=i_out.device)
    total = (weights.mse * parts["mse"] + weights.cos * parts["cos"]
             + weights.bce * parts["bce"] + weights.ecr * parts["ecr"])
    return total, parts
