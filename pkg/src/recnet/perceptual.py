"""Frozen perceptual feature extractor for the contrastive exposure loss.

The extractor is a VGG16-style conv/relu/maxpool stack tapped at a single
mid-level activation (default relu3_3). Weights are never bundled: they are
loaded from a local file produced either by ``scripts/fetch_vgg16_weights.py``
(canonical ImageNet-pretrained VGG16) or by :func:`save_surrogate_weights`
(a deterministic, seeded stand-in for offline desk-scale testing). The
weight file records its own architecture, so narrower surrogate stacks and
the full-width canonical stack load through the same path.

Extractor parameters are frozen; gradients flow to the input image only.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

WEIGHTS_FORMAT_VERSION = 1

# conv widths of VGG16's feature stack up to each nameable relu tap
VGG16_WIDTHS = (64, 64, "M", 128, 128, "M", 256, 256, 256)
TAPS = {
    "relu1_2": 2,  # number of conv layers included
    "relu2_2": 4,
    "relu3_3": 7,
}

# canonical ImageNet input normalization
_MEAN = (0.485, 0.456, 0.406)
_STD = (0.229, 0.224, 0.225)


class PerceptualWeightsError(RuntimeError):
    """Raised when extractor weights are missing or malformed."""


def _plan(widths, tap: str):
    """Conv/pool layout up to ``tap``: list of ('conv', in, out) / ('pool',)."""
    if tap not in TAPS:
        raise ValueError(f"unknown tap {tap!r}; choose from {sorted(TAPS)}")
    layers = []
    in_ch, convs = 3, 0
    for w in widths:
        if convs == TAPS[tap]:
            break
        if w == "M":
            layers.append(("pool",))
        else:
            layers.append(("conv", in_ch, int(w)))
            in_ch = int(w)
            convs += 1
    return layers


class PerceptualExtractor(nn.Module):
    """VGG-style stack tapped at one activation, weights frozen."""

    def __init__(self, widths, tap: str = "relu3_3"):
        super().__init__()
        self.tap = tap
        self.widths = tuple(widths)
        self.layers = nn.ModuleList()
        for spec in _plan(widths, tap):
            if spec[0] == "pool":
                self.layers.append(nn.MaxPool2d(2, 2))
            else:
                self.layers.append(nn.Conv2d(spec[1], spec[2], 3, padding=1))
        self.register_buffer("mean", torch.tensor(_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(_STD).view(1, 3, 1, 1), persistent=False)
        self.freeze()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def out_channels(self) -> int:
        convs = [m for m in self.layers if isinstance(m, nn.Conv2d)]
        return convs[-1].out_channels

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        x = (img - self.mean) / self.std
        for layer in self.layers:
            x = layer(x)
            if isinstance(layer, nn.Conv2d):
                x = F.relu(x)
        return x


def save_extractor_weights(path, state_dict, widths, origin: str,
                           tap: str = "relu3_3") -> None:
    payload = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "arch": "vgg16_features",
        "origin": origin,
        "tap": tap,
        "widths": tuple(widths),
        "state_dict": state_dict,
    }
    torch.save(payload, path)


def save_surrogate_weights(path, seed: int = 0, width_scale: float = 0.25,
                           tap: str = "relu3_3") -> str:
    """Write a deterministic, seeded surrogate weight file.

    The surrogate keeps the VGG16 layer pattern at ``width_scale`` of the
    canonical channel counts and uses Kaiming-initialized kernels drawn from
    a fixed-seed generator. It is NOT the pretrained network: use it for
    offline tests and desk-scale runs; fetch the canonical weights for real
    training. Returns the SHA-256 of the written file.
    """
    widths = tuple(
        w if w == "M" else max(int(round(w * width_scale)), 8) for w in VGG16_WIDTHS
    )
    gen = torch.Generator().manual_seed(seed)
    state = {}
    for i, spec in enumerate(_plan(widths, tap)):
        if spec[0] != "conv":
            continue
        _, in_ch, out_ch = spec
        fan_in = in_ch * 9
        w = torch.randn(out_ch, in_ch, 3, 3, generator=gen) * (2.0 / fan_in) ** 0.5
        state[f"layers.{i}.weight"] = w
        state[f"layers.{i}.bias"] = torch.zeros(out_ch)
    save_extractor_weights(path, state, widths, origin=f"surrogate(seed={seed})", tap=tap)
    return weights_sha256(path)


def weights_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_perceptual(path) -> PerceptualExtractor:
    """Load a frozen extractor from a weight file; fail loudly if absent."""
    path = Path(path) if path is not None else None
    if path is None or not path.is_file():
        raise PerceptualWeightsError(
            f"perceptual weight file not found: {path}. Fetch the canonical "
            "pretrained weights with scripts/fetch_vgg16_weights.py, or "
            "generate a deterministic offline surrogate with "
            "recnet.perceptual.save_surrogate_weights(path). Random weights "
            "are never substituted silently."
        )
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise PerceptualWeightsError(f"cannot read perceptual weights {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != WEIGHTS_FORMAT_VERSION:
        raise PerceptualWeightsError(
            f"{path} is not a perceptual weight file of format version "
            f"{WEIGHTS_FORMAT_VERSION}"
        )
    extractor = PerceptualExtractor(payload["widths"], payload["tap"])
    extractor.load_state_dict(payload["state_dict"])
    extractor.freeze()
    return extractor
