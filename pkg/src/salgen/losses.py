"""Training objectives: structure-aware saliency loss, depth loss, GAN losses,
CVAE loss, and the weakly-supervised stack (partial CE, smoothness, gated CRF,
rotation consistency).

Predictions enter as logits; sigmoids are applied inside each loss for
numerical stability. Every loss returns a scalar Tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class LossWeights:
    lambda_adv: float = 0.1
    alpha_depth: float = 0.1
    beta_ssim: float = 0.85
    alpha_ss: float = 0.85
    lambda1: float = 0.3
    lambda2: float = 1.0
    lambda3: float = 1.2

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {value}")


# scribble label codes (in-memory; the 8-bit file encoding lives in salgen.data)
SCRIBBLE_UNKNOWN = 0
SCRIBBLE_BG = 1
SCRIBBLE_FG = 2


class ScribbleMask:
    """Sparse per-pixel labels: foreground strokes, background strokes, unknown."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels)
        if labels.ndim == 2:
            labels = labels[None]
        if labels.ndim != 3:
            raise ValueError(f"scribble labels must be (H, W) or (B, H, W), got {labels.shape}")
        bad = set(np.unique(labels)) - {SCRIBBLE_UNKNOWN, SCRIBBLE_BG, SCRIBBLE_FG}
        if bad:
            raise ValueError(f"scribble labels contain invalid codes {sorted(bad)}")
        self.labels = labels.astype(np.int8)

    @classmethod
    def from_masks(cls, fg: np.ndarray, bg: np.ndarray) -> "ScribbleMask":
        fg, bg = np.asarray(fg, bool), np.asarray(bg, bool)
        if np.any(fg & bg):
            raise ValueError("a pixel cannot be both foreground and background stroke")
        labels = np.zeros(fg.shape, np.int8)
        labels[bg] = SCRIBBLE_BG
        labels[fg] = SCRIBBLE_FG
        return cls(labels)

    def fg(self) -> np.ndarray:
        return self.labels == SCRIBBLE_FG

    def bg(self) -> np.ndarray:
        return self.labels == SCRIBBLE_BG

    def labeled(self) -> np.ndarray:
        return self.labels != SCRIBBLE_UNKNOWN

    def labeled_count(self) -> int:
        return int(self.labeled().sum())


def _require_finite(t: Tensor, what: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise ValueError(f"{what} contains NaN or Inf")


def _require_binary(y: Tensor, what: str) -> None:
    vals = y.data
    if not np.all((vals == 0) | (vals == 1)):
        raise ValueError(f"{what} must be binary 0/1")


def _require_unit(t: Tensor, what: str) -> None:
    if t.data.min() < 0 or t.data.max() > 1:
        raise ValueError(f"{what} must lie in [0, 1]")


def bce_logits(s: Tensor, y) -> Tensor:
    """Elementwise binary cross-entropy from logits, numerically stable."""
    y = y if isinstance(y, Tensor) else Tensor(y)
    return T.relu(s) - s * y + T.log(1.0 + T.exp(-T.absolute(s)))


def bce_probs(p: Tensor, target: float, eps: float = 1e-7) -> Tensor:
    """Elementwise BCE on probabilities against a constant target, clamped at eps."""
    pc = T.clip(p, eps, 1.0 - eps)
    return -(target * T.log(pc) + (1.0 - target) * T.log(1.0 - pc))


def edge_weight(y: Tensor, kernel: int = 31) -> Tensor:
    """Boundary-emphasis weights 1 + 5*|ap(y) - y|, ap = stride-1 mean pooling."""
    _require_binary(y, "edge_weight mask")
    pad = kernel // 2
    ap = T.avg_pool2d(T.detach(y), kernel, 1, pad)
    return 1.0 + 5.0 * T.absolute(ap - T.detach(y))


def structure_aware_loss(s: Tensor, y: Tensor) -> Tensor:
    """Edge-weighted BCE plus edge-weighted IoU, averaged over the batch."""
    if s.shape != y.shape:
        raise ValueError(f"prediction {s.shape} and mask {y.shape} disagree")
    _require_finite(s, "prediction logits")
    _require_binary(y, "ground-truth mask")
    omega = edge_weight(y)
    axes = tuple(range(1, s.ndim))
    ce = bce_logits(s, y)
    wbce = T.tsum(omega * ce, axes) / T.tsum(omega, axes)
    p = T.sigmoid(s)
    inter = T.tsum(omega * p * y, axes)
    union = T.tsum(omega * (p + y), axes)
    iou = 1.0 - (inter + 1.0) / (union - inter + 1.0)
    return T.tmean(wbce + iou)


def ssim_map(a: Tensor, b: Tensor, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> Tensor:
    """Classic SSIM over 3x3 mean-pool windows (valid placement)."""
    mu_a = T.avg_pool2d(a, 3, 1, 0)
    mu_b = T.avg_pool2d(b, 3, 1, 0)
    var_a = T.avg_pool2d(a * a, 3, 1, 0) - mu_a * mu_a
    var_b = T.avg_pool2d(b * b, 3, 1, 0) - mu_b * mu_b
    cov = T.avg_pool2d(a * b, 3, 1, 0) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def dssim(a: Tensor, b: Tensor) -> Tensor:
    """Structural dissimilarity (1 - SSIM) / 2, averaged; 0 iff maps identical."""
    return T.tmean((1.0 - ssim_map(a, b)) / 2.0)


def depth_loss(d_pred: Tensor, d_gt: Tensor, weights: LossWeights) -> Tensor:
    """Auxiliary depth objective: alpha * (beta * DSSIM + (1 - beta) * L1)."""
    if d_pred.shape != d_gt.shape:
        raise ValueError(f"depth maps disagree: {d_pred.shape} vs {d_gt.shape}")
    _require_unit(d_pred, "predicted depth")
    _require_unit(d_gt, "ground-truth depth")
    l1 = T.tmean(T.absolute(d_pred - d_gt))
    return weights.alpha_depth * (weights.beta_ssim * dssim(d_pred, d_gt)
                                  + (1.0 - weights.beta_ssim) * l1)


def gan_losses(s, y, x, disc_out_fake, disc_out_real, weights,
               disc_out_fake_detached=None):
    """Generator loss (reconstruction + adversarial) and discriminator loss.

    The discriminator term needs its fake input re-evaluated on a *detached*
    prediction so its gradients reach beta but never theta; pass that output as
    ``disc_out_fake_detached``. Without it the fake output's value is reused
    gradient-free (fine for evaluating the scalar, not for training beta).
    """
    l_rec = structure_aware_loss(s, y)
    l_adv = T.tmean(bce_probs(disc_out_fake, 1.0))
    l_gen = l_rec + weights.lambda_adv * l_adv
    fake_for_dis = (disc_out_fake_detached if disc_out_fake_detached is not None
                    else T.detach(disc_out_fake))
    l_dis = T.tmean(bce_probs(fake_for_dis, 0.0)) + T.tmean(bce_probs(disc_out_real, 1.0))
    return l_gen, l_dis


def kl_diag_gaussians(mu_q, logvar_q, mu_p, logvar_p) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over dims, batch-averaged."""
    term = (T.exp(logvar_q - logvar_p)
            + (mu_q - mu_p) * (mu_q - mu_p) / T.exp(logvar_p)
            - 1.0 + logvar_p - logvar_q)
    return T.tmean(T.tsum(0.5 * term, axis=1))


def cvae_loss(s, y, mu_q, logvar_q, mu_p, logvar_p) -> Tensor:
    """Reconstruction (prediction made with h ~ q) plus closed-form KL(q || p)."""
    return structure_aware_loss(s, y) + kl_diag_gaussians(mu_q, logvar_q, mu_p, logvar_p)


def partial_ce(s: Tensor, scribble: ScribbleMask) -> Tensor:
    """BCE averaged over scribble-labeled pixels; unknown pixels contribute nothing."""
    count = scribble.labeled_count()
    if count == 0:
        raise ValueError("scribble mask has no labeled pixels")
    b, _, h, w = s.shape
    if scribble.labels.shape != (b, h, w):
        raise ValueError(f"scribble labels {scribble.labels.shape} do not match "
                         f"prediction {s.shape}")
    target = scribble.fg().astype(s.dtype)[:, None]
    labeled = scribble.labeled().astype(s.dtype)[:, None]
    ce = bce_logits(s, Tensor(target)) * Tensor(labeled)
    return T.tsum(ce) / float(count)


def _grayscale(x: Tensor) -> Tensor:
    return T.tmean(x, axis=1, keepdims=True) if x.shape[1] > 1 else x


def smoothness_loss(s: Tensor, x: Tensor, edge_scale: float = 10.0) -> Tensor:
    """First-order edge-aware smoothness: |ds| damped where the image has edges."""
    if s.shape[0] != x.shape[0] or s.shape[2:] != x.shape[2:]:
        raise ValueError(f"prediction {s.shape} and image {x.shape} disagree")
    gray = T.detach(_grayscale(x))
    total = None
    for axis in (2, 3):
        sl_a = [slice(None)] * 4
        sl_b = [slice(None)] * 4
        sl_a[axis] = slice(1, None)
        sl_b[axis] = slice(None, -1)
        ds = T.absolute(s[tuple(sl_a)] - s[tuple(sl_b)])
        di = T.absolute(gray[tuple(sl_a)] - gray[tuple(sl_b)])
        term = T.tmean(ds * T.exp(-edge_scale * di))
        total = term if total is None else total + term
    return total


def gated_crf_loss(s: Tensor, x: Tensor, valid: np.ndarray | None = None,
                   radius: int = 5, sigma_pos: float = 3.0,
                   sigma_rgb: float = 0.1) -> Tensor:
    """Pairwise color+position kernel penalty, averaged over valid pixel pairs.

    Pairs (i, j) with 0 < ||pos_i - pos_j||^2 <= radius^2 and both pixels valid
    contribute w_ij * |s_i - s_j|; w_ij is Gaussian in position and RGB distance.
    """
    b, _, h, w = s.shape
    if x.shape[0] != b or x.shape[2:] != (h, w):
        raise ValueError(f"prediction {s.shape} and image {x.shape} disagree")
    if valid is None:
        valid = np.ones((b, 1, h, w))
    else:
        valid = np.asarray(valid, dtype=s.dtype).reshape(b, 1, h, w)
    img = x.data
    total = None
    count = 0.0
    for dy in range(0, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue
            if dy * dy + dx * dx > radius * radius:
                continue
            if dy >= h or abs(dx) >= w:
                continue
            ra = slice(0, h - dy)
            rb = slice(dy, h)
            if dx >= 0:
                ca, cb = slice(0, w - dx), slice(dx, w)
            else:
                ca, cb = slice(-dx, w), slice(0, w + dx)
            col_a = img[:, :, ra, ca]
            col_b = img[:, :, rb, cb]
            col_d2 = ((col_a - col_b) ** 2).sum(axis=1, keepdims=True)
            wgt = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma_pos ** 2)
                         - col_d2 / (2.0 * sigma_rgb ** 2))
            pair_valid = valid[:, :, ra, ca] * valid[:, :, rb, cb]
            count += float(pair_valid.sum())
            sa = s[:, :, ra, ca]
            sb = s[:, :, rb, cb]
            term = T.tsum(T.absolute(sa - sb) * Tensor((wgt * pair_valid).astype(s.dtype)))
            total = term if total is None else total + term
    if count == 0:
        return Tensor(np.zeros(()))
    return total / count


ROTATION_CHOICES = (2, 1, 3)  # half turn, quarter turn, reverse quarter turn


def rotation_consistency_loss(predict_fn, x: Tensor, weights: LossWeights,
                              rotation_k: int | None = None, rng=None,
                              s: Tensor | None = None) -> Tensor:
    """Consistency between predicting a rotated image and rotating the prediction.

    predict_fn maps an image tensor to saliency logits. The unrotated logits can
    be supplied as ``s`` to avoid recomputing them.
    """
    if rotation_k is None:
        if rng is None:
            raise ValueError("pass rotation_k or an rng to pick one")
        rotation_k = int(rng.choice(ROTATION_CHOICES))
    if s is None:
        s = predict_fn(x)
    rotated_pred = T.sigmoid(predict_fn(T.rot90(x, rotation_k)))
    pred_rotated = T.rot90(T.sigmoid(s), rotation_k)
    l1 = T.tmean(T.absolute(rotated_pred - pred_rotated))
    return (weights.alpha_ss * dssim(rotated_pred, pred_rotated)
            + (1.0 - weights.alpha_ss) * l1)


def weak_loss_terms(s: Tensor, x: Tensor, scribble: ScribbleMask,
                    weights: LossWeights, predict_fn=None,
                    rotation_k: int | None = None, rng=None,
                    valid: np.ndarray | None = None) -> dict:
    """Individual weak-supervision terms (unweighted)."""
    p = T.sigmoid(s)
    terms = {
        "pce": partial_ce(s, scribble),
        "smooth": smoothness_loss(p, x),
        "gcrf": gated_crf_loss(p, x, valid),
    }
    if predict_fn is not None:
        terms["consistency"] = rotation_consistency_loss(
            predict_fn, x, weights, rotation_k=rotation_k, rng=rng, s=s)
    return terms


def weak_loss(s: Tensor, x: Tensor, scribble: ScribbleMask, weights: LossWeights,
              predict_fn=None, rotation_k: int | None = None, rng=None,
              valid: np.ndarray | None = None) -> Tensor:
    """Scribble objective: partial CE + l1*smoothness + l2*gatedCRF + l3*consistency.

    The consistency term needs the model itself (it predicts on a rotated
    image), so it is included only when predict_fn is supplied.
    """
    terms = weak_loss_terms(s, x, scribble, weights, predict_fn, rotation_k, rng, valid)
    total = (terms["pce"] + weights.lambda1 * terms["smooth"]
             + weights.lambda2 * terms["gcrf"])
    if "consistency" in terms:
        total = total + weights.lambda3 * terms["consistency"]
    return total
