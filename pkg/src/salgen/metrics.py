"""Saliency evaluation: MAE, mean F-measure, mean E-measure, S-measure, and
dataset-level aggregation with predictive-uncertainty statistics.

All four measures take a single grayscale prediction in [0, 1] and a binary
ground truth (anything >= 0.5 counts as foreground) and return a float in
[0, 1]. Thresholded measures sweep the 256 levels {i/255} with strict
binarization (pred > t). Degenerate-input conventions follow the reference
constructions; see the per-function notes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .inference import entropy_of_mean
from .tensor import Tensor

_EPS = np.finfo(np.float64).eps
_THRESHOLDS = np.arange(256) / 255.0


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} "
                         "must be equal-shape 2-D maps")
    if pred.min() < 0 or pred.max() > 1:
        raise ValueError("prediction must lie in [0, 1]")
    return pred, (gt >= 0.5).astype(np.float64)


def mae(pred, gt) -> float:
    """Mean absolute pixel difference."""
    pred, gtb = _check_pair(pred, gt)
    return float(np.abs(pred - gtb).mean())


def f_measure_mean(pred, gt, beta2: float = 0.3) -> float:
    """F-measure averaged over the 256 thresholds.

    Conventions: empty prediction has precision 0; empty GT with empty
    prediction scores 1; any other empty set scores 0.
    """
    pred, gtb = _check_pair(pred, gt)
    bins = pred[None, :, :] > _THRESHOLDS[:, None, None]
    tp = (bins & (gtb > 0)).sum(axis=(1, 2)).astype(np.float64)
    n_pred = bins.sum(axis=(1, 2)).astype(np.float64)
    n_gt = float(gtb.sum())
    f = np.zeros(256)
    if n_gt == 0:
        f[n_pred == 0] = 1.0
    else:
        ok = n_pred > 0
        prec = np.zeros(256)
        prec[ok] = tp[ok] / n_pred[ok]
        rec = tp / n_gt
        denom = beta2 * prec + rec
        nz = denom > 0
        f[nz] = (1 + beta2) * prec[nz] * rec[nz] / denom[nz]
    return float(f.mean())


def e_measure_mean(pred, gt, eps: float = 1e-12) -> float:
    """Enhanced-alignment measure averaged over the 256 thresholds.

    Identical maps (whole-measure, and per threshold) score exactly 1, the
    eps-free limit; an all-background GT scores mean(1 - FM), an
    all-foreground GT mean(FM). Note the t = 1.0 threshold always yields an
    empty binarization, so non-identical predictions cannot reach 1.
    """
    pred, gtb = _check_pair(pred, gt)
    if np.array_equal(pred, gtb):
        return 1.0
    n = gtb.size
    n_gt = gtb.sum()
    total = 0.0
    for t in _THRESHOLDS:
        fm = (pred > t).astype(np.float64)
        if np.array_equal(fm, gtb):
            total += 1.0
        elif n_gt == 0:
            total += float((1.0 - fm).mean())
        elif n_gt == n:
            total += float(fm.mean())
        else:
            phi_fm = fm - fm.mean()
            phi_gt = gtb - gtb.mean()
            align = 2.0 * phi_gt * phi_fm / (phi_gt ** 2 + phi_fm ** 2 + eps)
            total += float(((align + 1.0) ** 2 / 4.0).mean())
    return total / 256.0


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _ssim_block(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0 or np.array_equal(p, g):
        return 1.0
    xm, ym = p.mean(), g.mean()
    if n == 1:
        sx = sy = sxy = 0.0
    else:
        sx = ((p - xm) ** 2).sum() / (n - 1)
        sy = ((g - ym) ** 2).sum() / (n - 1)
        sxy = ((p - xm) * (g - ym)).sum() / (n - 1)
    alpha = 4.0 * xm * ym * sxy
    beta = (xm * xm + ym * ym) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + _EPS))
    return 1.0 if beta == 0 else 0.0


def _region_score(pred: np.ndarray, gtb: np.ndarray) -> float:
    """Area-weighted block SSIM over the four quadrants at the rounded centroid."""
    h, w = gtb.shape
    rows, cols = np.nonzero(gtb)
    cy = int(round(rows.mean()))
    cx = int(round(cols.mean()))
    score = 0.0
    for rs, cs in [(slice(0, cy + 1), slice(0, cx + 1)),
                   (slice(0, cy + 1), slice(cx + 1, w)),
                   (slice(cy + 1, h), slice(0, cx + 1)),
                   (slice(cy + 1, h), slice(cx + 1, w))]:
        pb, gb = pred[rs, cs], gtb[rs, cs]
        if pb.size:
            score += (pb.size / (h * w)) * _ssim_block(pb, gb)
    return score


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: object-aware and region-aware similarity, averaged.

    Degenerate GT: all-background scores 1 - mean(pred), all-foreground
    scores mean(pred). The region term averages the centroid-split score over
    the original and horizontally mirrored pair, because the inclusive block
    split alone is not mirror-symmetric.
    """
    pred, gtb = _check_pair(pred, gt)
    n_fg = gtb.sum()
    if n_fg == 0:
        return float(1.0 - pred.mean())
    if n_fg == gtb.size:
        return float(pred.mean())

    mu = gtb.mean()
    s_obj = mu * _object_score(pred[gtb > 0]) + (1 - mu) * _object_score((1.0 - pred)[gtb == 0])
    s_reg = 0.5 * (_region_score(pred, gtb)
                   + _region_score(pred[:, ::-1], gtb[:, ::-1]))
    return float(max(alpha * s_obj + (1 - alpha) * s_reg, 0.0))


@dataclass
class MetricReport:
    """Per-image measures plus dataset means and uncertainty statistics."""

    per_image: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.per_image)

    def mean(self, key: str) -> float:
        if not self.per_image:
            return float("nan")
        return float(np.mean([rec[key] for rec in self.per_image]))

    def summary(self) -> dict:
        keys = ("mae", "f_beta", "e_xi", "s_alpha", "mean_entropy")
        out = {"summary": True, "count": self.count, "skipped": len(self.skipped)}
        out.update({key: self.mean(key) for key in keys})
        return out

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.per_image:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.write(json.dumps(self.summary(), sort_keys=True) + "\n")


def _image_tensor(sample):
    return Tensor(np.ascontiguousarray(sample.image.transpose(2, 0, 1))[None])


def _depth_tensor(sample):
    if sample.depth is None:
        return None
    return Tensor(sample.depth[None, None])


def mean_prediction(model, sample, n_samples: int, rng) -> np.ndarray:
    """Mean sigmoid prediction over n latent draws (h = 0 when n == 1)."""
    x = _image_tensor(sample)
    depth = _depth_tensor(sample)
    if n_samples == 1:
        h0 = np.zeros(model.latent_dim)
        preds = model.predict_samples(x, 1, rng, depth=depth, h_fixed=h0)
    else:
        preds = model.predict_samples(x, n_samples, rng, depth=depth)
    return np.stack([p.numpy()[0, 0] for p in preds]).mean(axis=0)


def evaluate_dataset(model, dataset, n_samples: int = 10, seed: int = 0) -> MetricReport:
    """Evaluate a model over an iterable of samples.

    n_samples = 1 pins h = 0 (deterministic heads); larger values average
    sigmoid predictions over prior draws. Per-sample RNG streams are derived
    from (seed, index), so the report is independent of evaluation order.
    Samples that fail to load are skipped and recorded.
    """
    report = MetricReport()
    for index, sample in enumerate(dataset):
        rng = np.random.Generator(np.random.Philox(key=(int(seed) << 32) ^ index))
        try:
            mean_map = mean_prediction(model, sample, n_samples, rng)
            gt = sample.gt
            record = {
                "id": getattr(sample, "id", str(index)),
                "mae": mae(mean_map, gt),
                "f_beta": f_measure_mean(mean_map, gt),
                "e_xi": e_measure_mean(mean_map, gt),
                "s_alpha": s_measure(mean_map, gt),
                "mean_entropy": float(entropy_of_mean(mean_map).mean()),
            }
        except (OSError, ValueError) as exc:
            report.skipped.append({"id": getattr(sample, "id", str(index)),
                                   "error": str(exc)})
            continue
        report.per_image.append(record)
    return report
