"""Paired-image data tools: color conversion, PNG I/O, synthetic
mixed-exposure degradation, and augmentation.

Single images are float32 torch tensors of shape (3, H, W) in [0, 1];
masks are (1, H, W). Batch assembly stacks them to (B, C, H, W).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

logger = logging.getLogger(__name__)

GAIN_RANGE = (0.3, 3.0)
GAMMA_RANGE = (0.4, 2.5)
FEATHER_FRACTION = 0.05  # Gaussian feather radius relative to min(H, W)

# BT.601 full-range luma weights
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114


def luma(img: torch.Tensor) -> torch.Tensor:
    """BT.601 luma of an RGB tensor; channel dim is -3, kept at size 1."""
    r, g, b = img.unbind(dim=-3)
    y = r * _LUMA_R + g * _LUMA_G + b * _LUMA_B
    return y.unsqueeze(-3)


def rgb_to_ycbcr(img: torch.Tensor) -> torch.Tensor:
    """Full-range BT.601 RGB -> YCbCr; all channels stay within [0, 1]."""
    r, g, b = img.unbind(dim=-3)
    y = r * _LUMA_R + g * _LUMA_G + b * _LUMA_B
    cb = (b - y) / 1.772 + 0.5
    cr = (r - y) / 1.402 + 0.5
    return torch.stack([y, cb, cr], dim=-3)


@dataclass
class PairedSample:
    """A degraded/clean image pair with the cached binary exposure mask."""

    input: torch.Tensor  # (3, H, W)
    gt: torch.Tensor     # (3, H, W)
    gt_mask: torch.Tensor  # (1, H, W), 1 where input is brighter than gt
    id: str

    def __post_init__(self):
        if self.input.shape != self.gt.shape:
            raise ValueError("input and gt must share the same shape")


def _binary_exposure_mask(i_in: torch.Tensor, i_gt: torch.Tensor) -> torch.Tensor:
    return (luma(i_in) > luma(i_gt)).to(i_in.dtype)


@dataclass
class DegradationSpec:
    """Region-wise exposure degradation: per-region gain or gamma curves.

    ``transforms`` holds one ("gain", g) or ("gamma", y) entry per region.
    A valid spec darkens at least one region and brightens at least one
    (gain > 1 or gamma < 1 brightens; gain < 1 or gamma > 1 darkens). The
    region layout is normally sampled as smooth feathered blobs from the
    synthesis seed; ``layout`` can pin explicit per-region weight maps
    (K, H, W) summing to 1 per pixel.
    """

    transforms: tuple
    noise_std: float = 0.0
    layout: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_regions(self) -> int:
        return len(self.transforms)

    def brightens(self, idx: int) -> bool:
        kind, value = self.transforms[idx]
        return value > 1.0 if kind == "gain" else value < 1.0

    def darkens(self, idx: int) -> bool:
        kind, value = self.transforms[idx]
        return value < 1.0 if kind == "gain" else value > 1.0

    def validate(self) -> None:
        if not 2 <= self.num_regions <= 4:
            raise ValueError(f"expected 2-4 regions, got {self.num_regions}")
        for kind, value in self.transforms:
            if kind == "gain":
                lo, hi = GAIN_RANGE
            elif kind == "gamma":
                lo, hi = GAMMA_RANGE
            else:
                raise ValueError(f"unknown transform kind {kind!r}")
            if not lo <= value <= hi:
                raise ValueError(f"{kind} {value} outside [{lo}, {hi}]")
        if not any(self.brightens(i) for i in range(self.num_regions)) or \
           not any(self.darkens(i) for i in range(self.num_regions)):
            raise ValueError(
                "degradation is not mixed: need at least one brightening and "
                "one darkening region"
            )


def sample_degradation_spec(seed: int, num_regions: int | None = None) -> DegradationSpec:
    """Draw a valid mixed-exposure spec: one region forced over, one under."""
    rng = np.random.default_rng(seed)
    k = int(num_regions) if num_regions is not None else int(rng.integers(2, 5))
    transforms = []
    for i in range(k):
        kind = "gain" if rng.random() < 0.5 else "gamma"
        if i == 0:   # forced brightening
            value = rng.uniform(1.4, GAIN_RANGE[1]) if kind == "gain" \
                else rng.uniform(GAMMA_RANGE[0], 0.7)
        elif i == 1:  # forced darkening
            value = rng.uniform(GAIN_RANGE[0], 0.7) if kind == "gain" \
                else rng.uniform(1.4, GAMMA_RANGE[1])
        else:
            value = rng.uniform(*GAIN_RANGE) if kind == "gain" \
                else rng.uniform(*GAMMA_RANGE)
        transforms.append((kind, float(value)))
    spec = DegradationSpec(tuple(transforms), noise_std=0.0)
    spec.validate()
    return spec


def _random_region_weights(k: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth soft partition into k blobs: argmax of smoothed noise fields,
    feathered by a Gaussian blur of the one-hot maps."""
    sigma_field = 0.25 * min(h, w)
    fields = np.stack([
        gaussian_filter(rng.standard_normal((h, w)), sigma_field, mode="nearest")
        for _ in range(k)
    ])
    hard = (fields.argmax(axis=0)[None] == np.arange(k)[:, None, None]).astype(np.float64)
    feather = FEATHER_FRACTION * min(h, w)
    soft = np.stack([gaussian_filter(m, feather, mode="nearest") for m in hard])
    soft = np.clip(soft, 1e-8, None)
    return soft / soft.sum(axis=0, keepdims=True)


def _apply_transform(clean: torch.Tensor, kind: str, value: float) -> torch.Tensor:
    if kind == "gain":
        return (clean * value).clamp(0.0, 1.0)
    return clean.clamp(1e-8, 1.0) ** value


def synthesize_pair(clean: torch.Tensor, spec: DegradationSpec, seed: int,
                    require_mixed: bool = True) -> PairedSample:
    """Render a mixed-exposure input from a clean image.

    Per-region exposure curves are blended through the (feathered) region
    weights as a residual: input = clamp(clean + sum_k w_k * (T_k(clean) -
    clean)), which keeps identity transforms bitwise exact. Deterministic
    given (spec, seed).
    """
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise ValueError(f"expected clean image (3, H, W), got {tuple(clean.shape)}")
    if require_mixed:
        spec.validate()
    _, h, w = clean.shape
    rng = np.random.default_rng(seed)
    if spec.layout is not None:
        weights = np.asarray(spec.layout, dtype=np.float64)
        if weights.shape != (spec.num_regions, h, w):
            raise ValueError(
                f"layout shape {weights.shape} does not match "
                f"({spec.num_regions}, {h}, {w})"
            )
    else:
        weights = _random_region_weights(spec.num_regions, h, w, rng)

    degraded = clean.clone()
    for k, (kind, value) in enumerate(spec.transforms):
        w_k = torch.from_numpy(weights[k]).to(clean.dtype)
        degraded = degraded + w_k * (_apply_transform(clean, kind, value) - clean)
    if spec.noise_std > 0:
        noise = torch.from_numpy(
            rng.normal(0.0, spec.noise_std, size=clean.shape)
        ).to(clean.dtype)
        degraded = degraded + noise
    degraded = degraded.clamp(0.0, 1.0)
    return PairedSample(
        input=degraded,
        gt=clean,
        gt_mask=_binary_exposure_mask(degraded, clean),
        id=f"synth_{seed:08d}",
    )


def make_clean_image(h: int, w: int, seed: int) -> torch.Tensor:
    """Procedural well-exposed test scene: smooth color field plus a few
    soft blobs, kept inside [0.1, 0.9] so exposure shifts stay visible."""
    rng = np.random.default_rng(seed)
    img = np.zeros((3, h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for c in range(3):
        gx, gy = rng.uniform(-1, 1, 2)
        img[c] = 0.5 + 0.2 * (gx * (xx / w - 0.5) + gy * (yy / h - 0.5))
    for _ in range(6):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        radius = rng.uniform(0.08, 0.3) * min(h, w)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
        img += rng.uniform(-0.35, 0.35, size=(3, 1, 1)) * blob
    lo, hi = img.min(), img.max()
    img = 0.1 + 0.8 * (img - lo) / max(hi - lo, 1e-8)
    return torch.from_numpy(img).float()


# ---------------------------------------------------------------------------
# PNG I/O

def save_image(img: torch.Tensor, path) -> None:
    """Write a (3, H, W) or (1, H, W) float tensor in [0, 1] as 8-bit PNG."""
    arr = (img.detach().clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    arr = arr.transpose(1, 2, 0)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def load_image(path) -> torch.Tensor:
    """Read an 8-bit image file to a (3, H, W) float tensor in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1))


class PairedDataset:
    """Immutable list of paired samples with cached ground-truth masks."""

    def __init__(self, samples):
        self.samples = list(samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, idx: int) -> PairedSample:
        return self.samples[idx]

    def __iter__(self):
        return iter(self.samples)


IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


def load_paired_dir(input_dir, gt_dir) -> PairedDataset:
    """Pair same-named image files from two directories, sorted by name.

    Pairs whose sizes disagree are skipped with a warning; an empty name
    intersection is an error.
    """
    input_dir, gt_dir = Path(input_dir), Path(gt_dir)

    def names(d: Path):
        return {p.name: p for p in d.iterdir()
                if p.suffix.lower() in IMAGE_EXTENSIONS}

    in_files, gt_files = names(input_dir), names(gt_dir)
    common = sorted(in_files.keys() & gt_files.keys())
    if not common:
        raise ValueError(f"no matching image names between {input_dir} and {gt_dir}")
    for orphan in sorted(in_files.keys() ^ gt_files.keys()):
        logger.warning("unpaired image skipped: %s", orphan)

    samples = []
    for name in common:
        i_in = load_image(in_files[name])
        i_gt = load_image(gt_files[name])
        if i_in.shape != i_gt.shape:
            logger.warning("size mismatch for %s, skipping (%s vs %s)",
                           name, tuple(i_in.shape), tuple(i_gt.shape))
            continue
        samples.append(PairedSample(
            input=i_in, gt=i_gt,
            gt_mask=_binary_exposure_mask(i_in, i_gt), id=name,
        ))
    if not samples:
        raise ValueError("all candidate pairs were rejected")
    return PairedDataset(samples)


# ---------------------------------------------------------------------------
# Augmentation and batching

def augment(sample: PairedSample, seed: int) -> PairedSample:
    """Random horizontal/vertical flip applied jointly to the whole triple."""
    rng = np.random.default_rng(seed)
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    dims = [d for d, on in ((-1, flip_h), (-2, flip_v)) if on]
    if not dims:
        return sample
    return PairedSample(
        input=torch.flip(sample.input, dims),
        gt=torch.flip(sample.gt, dims),
        gt_mask=torch.flip(sample.gt_mask, dims),
        id=sample.id,
    )


def random_crop_batch(dataset, crop: int, batch: int, seed: int,
                      flip: bool = False):
    """Sample a batch of aligned random crops across input/gt/mask.

    Returns (inputs, gts, masks) stacked to (batch, C, crop, crop). The crop
    window is identical for all three tensors of a sample.
    """
    rng = np.random.default_rng(seed)
    inputs, gts, masks = [], [], []
    for _ in range(batch):
        sample = dataset[int(rng.integers(0, len(dataset)))]
        if flip:
            sample = augment(sample, int(rng.integers(0, 2**31)))
        _, h, w = sample.input.shape
        if crop > h or crop > w:
            raise ValueError(f"crop {crop} exceeds image size {h}x{w}")
        y0 = int(rng.integers(0, h - crop + 1))
        x0 = int(rng.integers(0, w - crop + 1))
        win = (slice(None), slice(y0, y0 + crop), slice(x0, x0 + crop))
        inputs.append(sample.input[win])
        gts.append(sample.gt[win])
        masks.append(sample.gt_mask[win])
    return torch.stack(inputs), torch.stack(gts), torch.stack(masks)
