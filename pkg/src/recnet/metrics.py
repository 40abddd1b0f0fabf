"""Image quality metrics: PSNR and SSIM on unit-range images."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from recnet.data import luma

PSNR_CAP = 100.0  # reported for identical images instead of +inf

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """10 * log10(1 / MSE) in dB, peak 1.0; capped at 100 dB for identical
    inputs."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = ((a.double() - b.double()) ** 2).mean().item()
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(dtype, device) -> torch.Tensor:
    half = SSIM_WINDOW // 2
    coords = torch.arange(-half, half + 1, dtype=dtype, device=device)
    g = torch.exp(-(coords**2) / (2.0 * SSIM_SIGMA**2))
    window = g[:, None] * g[None, :]
    return (window / window.sum()).reshape(1, 1, SSIM_WINDOW, SSIM_WINDOW)


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean structural similarity on BT.601 luma.

    11x11 Gaussian window (sigma 1.5), valid-mode filtering (no padding),
    stability constants C1=0.01^2, C2=0.03^2 on unit dynamic range. Inputs
    are (B, 3, H, W); images smaller than the window are rejected.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape[-2]}x{a.shape[-1]} smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    x = luma(a.double())
    y = luma(b.double())
    window = _gaussian_window(x.dtype, x.device)

    def filt(t):
        return F.conv2d(t, window)  # valid mode

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    )
    return ssim_map.mean().item()
