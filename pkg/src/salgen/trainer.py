"""Training loops for the five heads (deterministic, gan, cvae, abp, igan)
across three regimes (rgb_full, rgbd_full, rgb_weak), plus the optimizers.

All heads share one architecture (including the latent injector); they differ
in where h comes from and which loss terms are active:

    deterministic  h ~ N(0, I)            reconstruction only
    gan            h ~ N(0, I)            + adversarial, discriminator updated
    cvae           h ~ q(h | x, y)        + KL(q || p)
    abp            h by Langevin steps    reconstruction only
    igan           h by Langevin steps    + adversarial, discriminator updated

Generator and discriminator own disjoint parameter partitions and separate
optimizer states; the generator is updated first. RNG is split into named
counter-based streams ("shuffle", "latent", "aug") so heads that degenerate
into one another (abp with T=0, igan with lambda_adv=0 and T=0) consume
identical draws and reproduce the deterministic trainer bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import losses as L
from . import tensor as T
from .inference import LangevinConfig, LangevinDivergence, langevin_infer
from .losses import LossWeights, ScribbleMask
from .nets import ModelConfig, SaliencyModel, component_rng
from .tensor import Tensor

HEADS = ("deterministic", "gan", "cvae", "abp", "igan")
REGIMES = ("rgb_full", "rgbd_full", "rgb_weak")
OPTIMIZERS = ("adamw", "sgd")


@dataclass
class TrainConfig:
    head: str = "deterministic"
    regime: str = "rgb_full"
    epochs: int = 1
    batch_size: int = 4
    optimizer: str = "adamw"
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    seed: int = 0
    precision: str = "f32"
    log_every: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}, expected one of {HEADS}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}, expected one of {REGIMES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        payload = dict(payload)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        for key, sub in (("weights", LossWeights), ("langevin", LangevinConfig),
                         ("model", ModelConfig)):
            if key in payload and isinstance(payload[key], dict):
                sub_known = {f.name for f in fields(sub)}
                sub_unknown = sorted(set(payload[key]) - sub_known)
                if sub_unknown:
                    raise ValueError(f"unknown config keys in {key}: {sub_unknown}")
                payload[key] = sub(**payload[key])
        return cls(**payload)


# -- optimizers ---------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise ValueError(f"parameter {name} has no gradient")
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - self.lr * update - self.lr * self.weight_decay * p.data

    def zero_grad(self):
        T.zero_grads(self.params)


class SGD:
    """Heavy-ball SGD: v <- mu v + g, w <- w - lr v."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.9):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise ValueError(f"parameter {name} has no gradient")
            v = self.v[name]
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v

    def zero_grad(self):
        T.zero_grads(self.params)


def make_optimizer(kind: str, params: dict, lr: float, weight_decay: float = 1e-2):
    if kind == "adamw":
        return AdamW(params, lr, weight_decay=weight_decay)
    if kind == "sgd":
        return SGD(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def hash_params(params: dict) -> str:
    digest = hashlib.sha256()
    for name in sorted(params):
        digest.update(name.encode())
        digest.update(params[name].data.tobytes())
    return digest.hexdigest()


def grad_norm(params: dict) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


# -- batching -----------------------------------------------------------------


def collate(samples) -> dict:
    imgs = np.stack([s.image.transpose(2, 0, 1) for s in samples])
    gts = np.stack([s.gt[None] for s in samples])
    out = {"x": Tensor(imgs.astype(T.get_dtype())),
           "y": Tensor(gts.astype(T.get_dtype())),
           "ids": [s.id for s in samples], "depth": None, "scribble": None}
    if all(s.depth is not None for s in samples):
        out["depth"] = Tensor(np.stack([s.depth[None] for s in samples]).astype(T.get_dtype()))
    if all(s.scribble is not None for s in samples):
        out["scribble"] = ScribbleMask(np.concatenate([s.scribble.labels for s in samples]))
    return out


class _LatentView:
    """Model adapter for the Langevin machinery (binds depth for early fusion)."""

    def __init__(self, model: SaliencyModel, depth=None):
        self.model = model
        self.depth = depth
        self.latent_dim = model.latent_dim

    def encode(self, x):
        return self.model.encode(x, self.depth)

    def decode_with_latent(self, pyr, h):
        return self.model.decode_with_latent(pyr, h)

    def named_parameters(self):
        return self.model.named_parameters()


@dataclass
class TrainResult:
    model: SaliencyModel
    records: list
    config: TrainConfig
    checkpoint_path: str | None = None
    log_path: str | None = None


class Trainer:
    def __init__(self, dataset, config: TrainConfig, out_dir=None):
        self.dataset = list(dataset)
        self.config = config
        self.out_dir = out_dir
        self._validate_dataset()
        T.set_precision(config.precision)

        model_cfg_fields = asdict(config.model)
        model_cfg_fields["with_depth_head"] = config.regime == "rgbd_full"
        model_cfg_fields["early_fusion"] = config.regime == "rgbd_full"
        self.model = SaliencyModel(ModelConfig(**model_cfg_fields), seed=config.seed)

        self.shuffle_rng = component_rng(config.seed, "shuffle")
        self.latent_rng = component_rng(config.seed, "latent")
        self.aug_rng = component_rng(config.seed, "aug")

        self.opt_gen = make_optimizer(config.optimizer, self._generator_params(),
                                      config.learning_rate, config.weight_decay)
        self.uses_disc = config.head in ("gan", "igan")
        self.opt_disc = (make_optimizer(config.optimizer, self.model.discriminator_params(),
                                        config.learning_rate, config.weight_decay)
                         if self.uses_disc else None)
        self.records: list = []
        self.step = 0

    def _validate_dataset(self):
        if not self.dataset:
            raise ValueError("empty training dataset")
        if self.config.regime == "rgbd_full" and any(s.depth is None for s in self.dataset):
            raise ValueError("rgbd_full regime requires depth for every sample")
        if self.config.regime == "rgb_weak" and any(s.scribble is None for s in self.dataset):
            raise ValueError("rgb_weak regime requires scribbles for every sample")

    def _generator_params(self) -> dict:
        groups = self.model.param_groups()
        params = {**groups.theta1}
        params.update(self.model.store.subset("dec_sal.", "inject."))
        if self.config.regime == "rgbd_full" and self.config.weights.alpha_depth > 0:
            params.update(self.model.store.subset("dec_depth."))
        if self.config.head == "cvae":
            params.update(groups.cvae)
        return params

    # -- latent sources -----------------------------------------------------

    def _latent_by_langevin(self, batch):
        """Langevin per batch; on divergence falls back to per-sample chains,
        dropping the offending samples."""
        view = _LatentView(self.model, batch["depth"])
        y, mask = self._inference_target(batch)
        try:
            state = langevin_infer(view, batch["x"], y, self.config.langevin,
                                   self.latent_rng, mask=mask)
            return Tensor(state.h), None
        except LangevinDivergence:
            pass
        keep_rows, hs, dropped = [], [], []
        n = batch["x"].shape[0]
        for i in range(n):
            xi = Tensor(batch["x"].data[i:i + 1])
            yi = Tensor(y.data[i:i + 1])
            mi = Tensor(mask.data[i:i + 1]) if mask is not None else None
            di = Tensor(batch["depth"].data[i:i + 1]) if batch["depth"] is not None else None
            try:
                state = langevin_infer(_LatentView(self.model, di), xi, yi,
                                       self.config.langevin, self.latent_rng, mask=mi)
                keep_rows.append(i)
                hs.append(state.h[0])
            except LangevinDivergence:
                dropped.append(batch["ids"][i])
        if not keep_rows:
            return None, dropped
        self._slice_batch(batch, keep_rows)
        return Tensor(np.stack(hs)), dropped

    def _inference_target(self, batch):
        if self.config.regime == "rgb_weak":
            scr = batch["scribble"]
            y = Tensor(scr.fg().astype(T.get_dtype())[:, None])
            mask = Tensor(scr.labeled().astype(T.get_dtype())[:, None])
            return y, mask
        return batch["y"], None

    @staticmethod
    def _slice_batch(batch, rows):
        batch["x"] = Tensor(batch["x"].data[rows])
        batch["y"] = Tensor(batch["y"].data[rows])
        batch["ids"] = [batch["ids"][i] for i in rows]
        if batch["depth"] is not None:
            batch["depth"] = Tensor(batch["depth"].data[rows])
        if batch["scribble"] is not None:
            batch["scribble"] = ScribbleMask(batch["scribble"].labels[rows])

    # -- one optimization step ------------------------------------------------

    def train_batch(self, samples, epoch: int) -> dict:
        cfg = self.config
        w = cfg.weights
        batch = collate(samples)
        t0 = time.perf_counter()
        record = {"step": self.step, "epoch": epoch, "ids": list(batch["ids"])}

        dropped = None
        if cfg.head in ("abp", "igan"):
            h, dropped = self._latent_by_langevin(batch)
            if dropped:
                record["skipped_samples"] = dropped
            if h is None:
                record.update({"skipped_batch": True,
                               "wall_time": time.perf_counter() - t0})
                self.records.append(record)
                self.step += 1
                return record
        elif cfg.head in ("deterministic", "gan"):
            h = Tensor(self.latent_rng.standard_normal(
                (batch["x"].shape[0], self.model.latent_dim)).astype(T.get_dtype()))
        else:  # cvae: reparameterized below, but consume the stream's draw now
            eps = Tensor(self.latent_rng.standard_normal(
                (batch["x"].shape[0], self.model.latent_dim)).astype(T.get_dtype()))
            h = None

        x, y = batch["x"], batch["y"]
        pyr = self.model.encode(x, batch["depth"])
        components = {}

        if cfg.head == "cvae":
            mu_p, lv_p = self.model.cvae.prior(pyr.t4)
            y_for_posterior = self._posterior_target(batch)
            mu_q, lv_q = self.model.cvae.posterior(pyr.t4, y_for_posterior)
            h = mu_q + T.exp(lv_q / 2.0) * eps
            components["kl"] = L.kl_diag_gaussians(mu_q, lv_q, mu_p, lv_p)

        s = self.model.decode_saliency(self.model.inject(pyr, h))

        if cfg.regime == "rgb_weak":
            components["rec"] = self._weak_reconstruction(s, batch, h)
        else:
            components["rec"] = L.structure_aware_loss(s, y)
            if cfg.regime == "rgbd_full" and w.alpha_depth > 0:
                d_pred = self.model.decode_depth(pyr)
                components["depth"] = L.depth_loss(d_pred, batch["depth"], w)

        if self.uses_disc and w.lambda_adv > 0:
            p_fake = self.model.discriminate(x, T.sigmoid(s))
            components["adv"] = w.lambda_adv * self._disc_bce(p_fake, 1.0, batch)

        loss_gen = None
        for value in components.values():
            loss_gen = value if loss_gen is None else loss_gen + value
        loss_gen.backward()
        record["grad_norm"] = grad_norm(self.opt_gen.params)
        self.opt_gen.step()
        T.zero_grads(self.model.named_parameters())

        if self.uses_disc:
            with T.no_grad():
                fake_const = T.sigmoid(Tensor(s.data))
            p_fake_d = self.model.discriminate(x, fake_const)
            p_real = self.model.discriminate(x, self._real_mask(batch))
            loss_dis = (self._disc_bce(p_fake_d, 0.0, batch)
                        + self._disc_bce(p_real, 1.0, batch))
            loss_dis.backward()
            self.opt_disc.step()
            T.zero_grads(self.model.named_parameters())
            record["loss_dis"] = float(loss_dis.data)

        record["components"] = {k: float(v.data) for k, v in components.items()}
        # logged total is the exact sum of the logged components; the f32 graph
        # total can differ from it in the last float32 bit
        record["loss_total"] = sum(record["components"].values())
        record["wall_time"] = time.perf_counter() - t0
        self.records.append(record)
        self.step += 1
        return record

    def _posterior_target(self, batch):
        if self.config.regime == "rgb_weak":
            return Tensor(batch["scribble"].fg().astype(T.get_dtype())[:, None])
        return batch["y"]

    def _real_mask(self, batch):
        if self.config.regime == "rgb_weak":
            return Tensor(batch["scribble"].fg().astype(T.get_dtype())[:, None])
        return batch["y"]

    def _disc_bce(self, p, target, batch):
        """BCE on discriminator output; restricted to labeled pixels when weak."""
        ce = L.bce_probs(p, target)
        if self.config.regime == "rgb_weak":
            labeled = batch["scribble"].labeled().astype(T.get_dtype())[:, None]
            count = float(labeled.sum())
            return T.tsum(ce * Tensor(labeled)) / count
        return T.tmean(ce)

    def _weak_reconstruction(self, s, batch, h):
        depth = batch["depth"]

        def predict_fn(img):
            return self.model.forward(img, h=h, depth=depth)

        return L.weak_loss(s, batch["x"], batch["scribble"], self.config.weights,
                           predict_fn=predict_fn, rng=self.aug_rng)

    # -- epochs and orchestration ----------------------------------------------

    def run(self) -> TrainResult:
        cfg = self.config
        log_fh = None
        log_path = checkpoint_path = None
        if self.out_dir is not None:
            os.makedirs(self.out_dir, exist_ok=True)
            log_path = os.path.join(self.out_dir, "train_log.jsonl")
            log_fh = open(log_path, "w")
        if self.out_dir is not None:
            checkpoint_path = os.path.join(self.out_dir, "checkpoint.bin")
        try:
            for epoch in range(cfg.epochs):
                order = self.shuffle_rng.permutation(len(self.dataset))
                for start in range(0, len(order), cfg.batch_size):
                    chunk = [self.dataset[i] for i in order[start:start + cfg.batch_size]]
                    record = self.train_batch(chunk, epoch)
                    if log_fh is not None and record["step"] % cfg.log_every == 0:
                        log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                if checkpoint_path is not None:
                    self.model.save(checkpoint_path)  # interrupted runs stay resumable
        finally:
            if log_fh is not None:
                log_fh.close()
        return TrainResult(model=self.model, records=self.records, config=cfg,
                           checkpoint_path=checkpoint_path, log_path=log_path)


def train(dataset, config: TrainConfig, out_dir=None) -> TrainResult:
    return Trainer(dataset, config, out_dir).run()


def train_igan(dataset, config: TrainConfig, out_dir=None) -> TrainResult:
    """Alternating Langevin inference / generator update / discriminator update."""
    if config.head != "igan":
        raise ValueError(f"train_igan got head {config.head!r}")
    return train(dataset, config, out_dir)


def train_variant(dataset, config: TrainConfig, out_dir=None) -> TrainResult:
    """Any of the five heads under any regime."""
    return train(dataset, config, out_dir)
