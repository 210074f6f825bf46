"""Sample I/O, the deterministic synthetic dataset generator, and the
foreground/background global-contrast analysis.

On-disk format: 8-bit PNGs (RGB image; grayscale gt / depth / scribble) plus a
JSON manifest listing per-sample file paths and ids. Ground truth binarizes at
>127 on load. Scribble encoding: 0 = unlabeled, 128 = background stroke,
255 = foreground stroke.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .losses import SCRIBBLE_BG, SCRIBBLE_FG, ScribbleMask

SCRIBBLE_ENCODING = {0: 0, 128: SCRIBBLE_BG, 255: SCRIBBLE_FG}
_SCRIBBLE_VALUES = {0: 0, SCRIBBLE_BG: 128, SCRIBBLE_FG: 255}


@dataclass
class Sample:
    """One example: image, binary gt, optional depth and scribble annotation."""

    image: np.ndarray
    gt: np.ndarray
    depth: np.ndarray | None = None
    scribble: ScribbleMask | None = None
    id: str = ""

    def __post_init__(self):
        h, w = self.gt.shape
        if self.image.shape != (h, w, 3):
            raise ValueError(f"sample {self.id}: image {self.image.shape} does not "
                             f"match gt {(h, w)}")
        if self.depth is not None and self.depth.shape != (h, w):
            raise ValueError(f"sample {self.id}: depth {self.depth.shape} does not "
                             f"match gt {(h, w)}")
        if self.scribble is not None and self.scribble.labels.shape[-2:] != (h, w):
            raise ValueError(f"sample {self.id}: scribble does not match gt {(h, w)}")


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)


def save_gray(path, arr: np.ndarray) -> None:
    Image.fromarray(_to_u8(arr), mode="L").save(path)


def save_rgb(path, arr: np.ndarray) -> None:
    Image.fromarray(_to_u8(arr), mode="RGB").save(path)


def _load_u8(path, mode):
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert(mode), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc


def load_sample(paths: dict, base_dir=None) -> Sample:
    """Load a sample from a manifest entry {image, gt, depth?, scribble?, id?}.

    Relative paths resolve against base_dir when given.
    """
    if base_dir is not None:
        paths = {k: (os.path.join(base_dir, v)
                     if k != "id" and not os.path.isabs(v) else v)
                 for k, v in paths.items()}
    image = _load_u8(paths["image"], "RGB").astype(np.float64) / 255.0
    gt_raw = _load_u8(paths["gt"], "L")
    gt = (gt_raw > 127).astype(np.float64)
    if image.shape[:2] != gt.shape:
        raise ValueError(f"{paths['image']}: image {image.shape[:2]} vs "
                         f"gt {gt.shape} dimension mismatch")
    depth = None
    if paths.get("depth"):
        depth = _load_u8(paths["depth"], "L").astype(np.float64) / 255.0
        if depth.shape != gt.shape:
            raise ValueError(f"{paths['depth']}: depth {depth.shape} vs gt {gt.shape}")
    scribble = None
    if paths.get("scribble"):
        raw = _load_u8(paths["scribble"], "L")
        if raw.shape != gt.shape:
            raise ValueError(f"{paths['scribble']}: scribble {raw.shape} vs gt {gt.shape}")
        unknown = set(np.unique(raw)) - set(SCRIBBLE_ENCODING)
        if unknown:
            raise ValueError(f"{paths['scribble']}: unexpected scribble values "
                             f"{sorted(unknown)} (expected 0/128/255)")
        labels = np.zeros_like(raw, dtype=np.int8)
        for value, code in SCRIBBLE_ENCODING.items():
            labels[raw == value] = code
        scribble = ScribbleMask(labels[None])
    return Sample(image=image, gt=gt, depth=depth, scribble=scribble,
                  id=paths.get("id", os.path.basename(str(paths["image"]))))


def save_sample(directory, sample: Sample) -> dict:
    """Write a sample's maps as PNGs; returns a manifest entry with paths
    relative to `directory` (where the manifest is expected to live)."""
    os.makedirs(directory, exist_ok=True)
    entry = {"id": sample.id,
             "image": f"{sample.id}_img.png",
             "gt": f"{sample.id}_gt.png"}
    save_rgb(os.path.join(directory, entry["image"]), sample.image)
    save_gray(os.path.join(directory, entry["gt"]), sample.gt)
    if sample.depth is not None:
        entry["depth"] = f"{sample.id}_depth.png"
        save_gray(os.path.join(directory, entry["depth"]), sample.depth)
    if sample.scribble is not None:
        entry["scribble"] = f"{sample.id}_scribble.png"
        encoded = np.zeros(sample.scribble.labels.shape[-2:], np.uint8)
        for code, value in _SCRIBBLE_VALUES.items():
            encoded[sample.scribble.labels[0] == code] = value
        Image.fromarray(encoded, mode="L").save(os.path.join(directory, entry["scribble"]))
    return entry


def write_manifest(path, entries: list[dict]) -> None:
    with open(path, "w") as fh:
        json.dump({"samples": entries}, fh, indent=2, sort_keys=True)


def load_manifest(path) -> list[dict]:
    with open(path) as fh:
        payload = json.load(fh)
    return payload["samples"]


def save_dataset(directory, samples: list[Sample]) -> str:
    entries = [save_sample(directory, s) for s in samples]
    manifest = os.path.join(directory, "manifest.json")
    write_manifest(manifest, entries)
    return manifest


def load_dataset(manifest_path) -> list[Sample]:
    base = os.path.dirname(os.path.abspath(manifest_path))
    return [load_sample(entry, base_dir=base) for entry in load_manifest(manifest_path)]


# -- synthetic data -----------------------------------------------------------


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) << 32) ^ index))


def _smooth_noise(rng, size: int, amplitude: float) -> np.ndarray:
    coarse = rng.standard_normal((size // 4 + 1, size // 4 + 1))
    idx = np.linspace(0, coarse.shape[0] - 1, size)
    i0 = np.floor(idx).astype(int)
    t = idx - i0
    i1 = np.minimum(i0 + 1, coarse.shape[0] - 1)
    rows = coarse[i0][:, i0] * np.outer(1 - t, 1 - t) + coarse[i0][:, i1] * np.outer(1 - t, t) \
        + coarse[i1][:, i0] * np.outer(t, 1 - t) + coarse[i1][:, i1] * np.outer(t, t)
    return amplitude * rows


def _ellipse_mask(rng, size: int) -> np.ndarray:
    cy, cx = rng.uniform(0.25 * size, 0.75 * size, 2)
    ry = rng.uniform(0.10 * size, 0.30 * size)
    rx = rng.uniform(0.10 * size, 0.30 * size)
    angle = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(angle) + dy * np.sin(angle)
    v = -dx * np.sin(angle) + dy * np.cos(angle)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _polygon_mask(rng, size: int) -> np.ndarray:
    n = rng.integers(3, 7)
    cy, cx = rng.uniform(0.3 * size, 0.7 * size, 2)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = rng.uniform(0.12 * size, 0.32 * size, n)
    ys = cy + radii * np.sin(angles)
    xs = cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:size, 0:size]
    inside = np.ones((size, size), bool)
    for i in range(n):  # convex-by-construction: intersect half-planes
        y0, x0 = ys[i], xs[i]
        y1, x1 = ys[(i + 1) % n], xs[(i + 1) % n]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross >= 0
    return inside


def _erode(mask: np.ndarray, iterations: int = 2) -> np.ndarray:
    out = mask.copy()
    for _ in range(iterations):
        padded = np.pad(out, 1, constant_values=False)
        acc = np.ones_like(out)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                acc &= padded[1 + dy:1 + dy + out.shape[0], 1 + dx:1 + dx + out.shape[1]]
        out = acc
    return out


def _stroke(rng, region: np.ndarray, length: int) -> np.ndarray:
    """A random walk confined to `region`; falls back to a single pixel."""
    stroke = np.zeros_like(region)
    ys, xs = np.nonzero(region)
    if len(ys) == 0:
        return stroke
    k = rng.integers(len(ys))
    y, x = int(ys[k]), int(xs[k])
    stroke[y, x] = True
    for _ in range(length):
        options = [(y + dy, x + dx) for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0))
                   if 0 <= y + dy < region.shape[0] and 0 <= x + dx < region.shape[1]
                   and region[y + dy, x + dx]]
        if not options:
            break
        y, x = options[rng.integers(len(options))]
        stroke[y, x] = True
    return stroke


def synth_generate(seed: int, count: int, size: int, contrast_level: float = 1.0,
                   with_depth: bool = False, with_scribble: bool = False,
                   fg_ratio_band: tuple = (0.05, 0.6)) -> list[Sample]:
    """Deterministic synthetic dataset: textured background, 1-3 shapes as the
    salient foreground, optional smooth-gradient depth and sparse scribbles.

    contrast_level in [0, 1] controls the fg/bg color-mean separation. Each
    sample is generated from its own (seed, index) stream, so the dataset is
    independent of generation order. All maps are quantized to the 8-bit grid.
    """
    samples = []
    for index in range(count):
        rng = _sample_rng(seed, index)
        for attempt in range(64):
            n_shapes = rng.integers(1, 4)
            fg = np.zeros((size, size), bool)
            for _ in range(n_shapes):
                shape = _ellipse_mask(rng, size) if rng.random() < 0.6 \
                    else _polygon_mask(rng, size)
                fg |= shape
            ratio = fg.mean()
            if fg_ratio_band[0] <= ratio <= fg_ratio_band[1]:
                break
        else:
            raise RuntimeError(f"sample {index}: could not hit the foreground "
                               f"ratio band {fg_ratio_band}")

        base = rng.uniform(0.25, 0.75, 3)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        separation = 0.05 + 0.5 * contrast_level
        fg_color = np.clip(base + separation * direction, 0.0, 1.0)
        image = np.empty((size, size, 3))
        for c in range(3):
            texture = _smooth_noise(rng, size, 0.06) + 0.02 * rng.standard_normal((size, size))
            image[:, :, c] = np.where(fg, fg_color[c], base[c]) + texture
        image = np.clip(image, 0.0, 1.0)
        image = np.rint(image * 255.0) / 255.0

        depth = None
        if with_depth:
            ramp = np.linspace(0.25, 0.75, size)[:, None] * np.ones((1, size))
            tilt = np.linspace(-0.05, 0.05, size)[None, :]
            depth = ramp + tilt + _smooth_noise(rng, size, 0.02)
            depth = np.where(fg, np.clip(depth - 0.3 * (0.25 + 0.75 * contrast_level), 0, 1),
                             depth)
            depth = np.rint(np.clip(depth, 0.0, 1.0) * 255.0) / 255.0

        scribble = None
        if with_scribble:
            budget = max(int(0.05 * size * size), 2)
            fg_core = _erode(fg)
            if not fg_core.any():
                fg_core = fg
            bg_core = _erode(~fg)
            if not bg_core.any():
                bg_core = ~fg
            fg_stroke = _stroke(rng, fg_core, length=budget // 4)
            bg_stroke = _stroke(rng, bg_core, length=budget // 4)
            scribble = ScribbleMask.from_masks(fg_stroke[None], bg_stroke[None])

        samples.append(Sample(image=image, gt=fg.astype(np.float64), depth=depth,
                              scribble=scribble, id=f"synth_{seed}_{index:04d}"))
    return samples


# -- global contrast ----------------------------------------------------------


def _region_histogram(image: np.ndarray, mask: np.ndarray, bins: int) -> np.ndarray:
    """Concatenated per-channel histograms of the masked pixels, summing to 1."""
    counts = []
    vals = image[mask]
    for c in range(image.shape[2]):
        hist, _ = np.histogram(vals[:, c], bins=bins, range=(0.0, 1.0))
        counts.append(hist)
    flat = np.concatenate(counts).astype(np.float64)
    return flat / flat.sum()


def chi2_distance(a: np.ndarray, b: np.ndarray, eps: float = 1e-12) -> float:
    return float(0.5 * np.sum((a - b) ** 2 / (a + b + eps)))


def global_contrast(image: np.ndarray, fg_mask: np.ndarray, bg_mask: np.ndarray | None = None,
                    bins: int = 16) -> float:
    """Chi-squared distance between fg and bg color histograms, in [0, 1].

    Grayscale input (H, W) is replicated to three channels.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    fg_mask = np.asarray(fg_mask, bool)
    bg_mask = ~fg_mask if bg_mask is None else np.asarray(bg_mask, bool)
    if not fg_mask.any() or not bg_mask.any():
        raise ValueError("global contrast needs non-empty foreground and background")
    return chi2_distance(_region_histogram(image, fg_mask, bins),
                         _region_histogram(image, bg_mask, bins))


def sample_contrast(sample: Sample, modality: str) -> float:
    fg = sample.gt >= 0.5
    if modality == "rgb":
        return global_contrast(sample.image, fg)
    if modality == "depth":
        if sample.depth is None:
            raise ValueError(f"sample {sample.id} has no depth map")
        return global_contrast(sample.depth, fg)
    raise ValueError(f"unknown modality {modality!r} (expected 'rgb' or 'depth')")


def dataset_contrast_report(dataset, modality: str) -> dict:
    """Per-image chi-squared contrast for one modality plus the dataset mean."""
    per_image = [{"id": s.id, "chi2": sample_contrast(s, modality)} for s in dataset]
    mean = float(np.mean([rec["chi2"] for rec in per_image])) if per_image else float("nan")
    return {"modality": modality, "per_image": per_image, "mean": mean}


def contrast_difference(dataset) -> float:
    """Mean RGB contrast minus mean depth contrast (both modalities required)."""
    rgb = dataset_contrast_report(dataset, "rgb")["mean"]
    depth = dataset_contrast_report(dataset, "depth")["mean"]
    return rgb - depth
