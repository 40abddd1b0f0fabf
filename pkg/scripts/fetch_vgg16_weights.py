#!/usr/bin/env python3
"""Download the canonical ImageNet-pretrained VGG16 weights and convert the
feature-stack subset used by the perceptual loss into recnet's weight-file
format. Prints the SHA-256 of the written file; record it in your training
config for reproducibility.

Usage:
    python scripts/fetch_vgg16_weights.py --out weights/vgg16_relu3_3.pt

Requires network access to download.pytorch.org. For fully offline setups,
generate a deterministic surrogate instead:

    python -c "from recnet.perceptual import save_surrogate_weights as s; \
               print(s('weights/perceptual_surrogate.pt'))"
"""

import argparse
import sys
import tempfile
import urllib.request
from pathlib import Path

import torch

from recnet.perceptual import TAPS, VGG16_WIDTHS, _plan, save_extractor_weights, weights_sha256

VGG16_URL = "https://download.pytorch.org/models/vgg16-397923af.pth"

# torchvision indexes the feature stack as features.<i>; map conv order ->
# torchvision conv indices for the layers we keep (through relu3_3)
TORCHVISION_CONV_INDICES = [0, 2, 5, 7, 10, 12, 14]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output weight file")
    parser.add_argument("--tap", default="relu3_3", choices=sorted(TAPS))
    parser.add_argument("--url", default=VGG16_URL)
    args = parser.parse_args()

    print(f"downloading {args.url} ...", file=sys.stderr)
    with tempfile.NamedTemporaryFile(suffix=".pth") as tmp:
        urllib.request.urlretrieve(args.url, tmp.name)
        full_state = torch.load(tmp.name, map_location="cpu", weights_only=True)

    state = {}
    conv_positions = [i for i, spec in enumerate(_plan(VGG16_WIDTHS, args.tap))
                      if spec[0] == "conv"]
    for ours, theirs in zip(conv_positions, TORCHVISION_CONV_INDICES):
        state[f"layers.{ours}.weight"] = full_state[f"features.{theirs}.weight"]
        state[f"layers.{ours}.bias"] = full_state[f"features.{theirs}.bias"]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_extractor_weights(out, state, VGG16_WIDTHS,
                           origin=f"vgg16 imagenet ({args.url})", tap=args.tap)
    print(f"wrote {out}")
    print(f"sha256: {weights_sha256(out)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
