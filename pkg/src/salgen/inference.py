"""Latent-variable machinery: unadjusted Langevin sampling of the latent
posterior, prior sampling, and predictive-uncertainty estimation.

The log-joint for saliency is Gaussian in the sigmoid-bounded prediction with a
standard-normal prior on h:

    log p(y, h | x) = -||y - sigma(f(x, h))||^2 / (2 sigma^2) - ||h||^2 / 2 + const

Chains for the samples of a batch run independently but are stepped together
as one (B, K) state; the summed log-joint gives each row its own gradient.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG2 = float(np.log(2.0))


@contextmanager
def frozen_params(model):
    """Mark a model's parameters gradient-free for the duration of the block.

    Latent inference differentiates the log-joint w.r.t. h only; without this,
    every Langevin step would deposit (1/sigma^2)-scaled log-joint gradients
    into the parameter tensors and poison the next training update.
    """
    params = model.named_parameters() if hasattr(model, "named_parameters") else {}
    flags = [(p, p.requires_grad) for p in params.values()]
    for p, _ in flags:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in flags:
            p.requires_grad = flag


@dataclass
class LangevinConfig:
    step_size: float = 0.1
    noise_var: float = 0.3
    steps: int = 5
    divergence_threshold: float = 1e3

    def __post_init__(self):
        # step_size 0 and steps 0 are legal degenerations (identity chain)
        if self.step_size < 0:
            raise ValueError("step_size must be nonnegative")
        if self.noise_var <= 0:
            raise ValueError("noise_var must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")


@dataclass
class LatentState:
    """Final latent draw plus optional (step, log-joint, max row norm) trajectory."""

    h: np.ndarray
    trajectory: list = field(default_factory=list)
    seed: int | None = None


class LangevinDivergence(RuntimeError):
    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def gaussian_log_joint(model, x, y, sigma2: float, mask=None):
    """Closure h -> scalar log p(y, h | x), batch-summed; encoder output cached.

    With a 0/1 ``mask`` the data term is restricted to the marked pixels
    (used when only sparse labels exist).
    """
    with T.no_grad():
        pyr = model.encode(x)

    def log_joint(h):
        p = T.sigmoid(model.decode_with_latent(pyr, h))
        resid = y - p
        if mask is not None:
            resid = resid * mask
        return -T.tsum(resid * resid) / (2.0 * sigma2) - T.tsum(h * h) / 2.0

    return log_joint


def log_joint_grad(model, x, y, h: np.ndarray, sigma2: float) -> np.ndarray:
    """d log p(y, h | x) / dh via one backward pass."""
    with frozen_params(model):
        fn = gaussian_log_joint(model, x, y, sigma2)
        leaf = Tensor(np.array(h, dtype=T.get_dtype()), requires_grad=True)
        fn(leaf).backward()
    grad = leaf.grad
    if not np.all(np.isfinite(grad)):
        raise ValueError(f"non-finite latent gradient (|h| max {np.abs(h).max():.3g})")
    return grad


def langevin_sample(log_joint_fn, h0: np.ndarray, config: LangevinConfig, rng,
                    record_trajectory: bool = False) -> tuple[np.ndarray, list]:
    """Run T unadjusted Langevin steps from h0; returns (h_T, trajectory)."""
    h = np.array(h0, dtype=T.get_dtype())
    s = config.step_size
    trajectory = []

    def eval_grad(state):
        leaf = Tensor(state.copy(), requires_grad=True)
        value = log_joint_fn(leaf)
        value.backward()
        return float(value.data), leaf.grad

    for t in range(config.steps):
        value, grad = eval_grad(h)
        if record_trajectory:
            trajectory.append((t, value, float(np.abs(h).max())))
        if not np.all(np.isfinite(grad)):
            raise LangevinDivergence(f"non-finite gradient at step {t}", trajectory)
        noise = rng.standard_normal(h.shape).astype(h.dtype)
        h = h + 0.5 * s * s * grad + s * noise
        if np.abs(h).max() > config.divergence_threshold:
            trajectory.append((t + 1, float("nan"), float(np.abs(h).max())))
            raise LangevinDivergence(
                f"chain diverged at step {t + 1}: |h| = {np.abs(h).max():.3g}", trajectory)
    if record_trajectory:
        value, _ = eval_grad(h)
        trajectory.append((config.steps, value, float(np.abs(h).max())))
    return h, trajectory


def langevin_infer(model, x, y, config: LangevinConfig, rng,
                   record_trajectory: bool = False, seed: int | None = None,
                   mask=None) -> LatentState:
    """Sample h ~ p(h | x, y): prior init, then T Langevin steps."""
    batch = x.shape[0]
    h0 = rng.standard_normal((batch, model.latent_dim)).astype(T.get_dtype())
    if config.steps == 0:
        return LatentState(h=h0, trajectory=[], seed=seed)
    with frozen_params(model):
        fn = gaussian_log_joint(model, x, y, config.noise_var, mask=mask)
        h, trajectory = langevin_sample(fn, h0, config, rng, record_trajectory)
    return LatentState(h=h, trajectory=trajectory, seed=seed)


def sample_prior(k: int, rng, size: int | None = None) -> np.ndarray:
    """Standard-normal latent draw: (k,) vector, or (size, k) when size is given."""
    if k < 1:
        raise ValueError("latent dimension must be >= 1")
    shape = (k,) if size is None else (size, k)
    return rng.standard_normal(shape).astype(T.get_dtype())


def entropy_of_mean(mean_map: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    """Elementwise binary entropy of a mean prediction map, in [0, ln 2]."""
    p = np.clip(mean_map, eps, 1.0 - eps)
    return -(p * np.log(p) + (1.0 - p) * np.log(1.0 - p))


def predictive_uncertainty(model, x, n_samples: int = 10, rng=None,
                           depth=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean of n prior-sampled predictions and the entropy of that mean."""
    if n_samples < 2:
        raise ValueError("predictive uncertainty needs n_samples >= 2")
    if rng is None:
        rng = np.random.default_rng(0)
    if hasattr(model, "predict_samples"):
        preds = model.predict_samples(x, n_samples, rng, depth=depth)
        stacked = np.stack([p.numpy() for p in preds])
    else:
        outs = []
        with T.no_grad():
            for _ in range(n_samples):
                h = Tensor(sample_prior(model.latent_dim, rng, size=x.shape[0]))
                outs.append(model.predict(x, h).numpy())
        stacked = np.stack(outs)
    mean_map = stacked.mean(axis=0)
    return mean_map, entropy_of_mean(mean_map)


def write_trajectory(path, trajectory) -> None:
    """Line-delimited trajectory dump: {step, log_joint, h_norm} per record."""
    with open(path, "w") as fh:
        for step, value, norm in trajectory:
            fh.write(json.dumps({"step": step, "log_joint": value, "h_norm": norm}) + "\n")
