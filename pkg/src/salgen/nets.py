"""Network zoo: windowed-attention encoder, convolutional decoders, conditional
discriminator, latent injection, and CVAE inference heads.

Everything is built on the in-repo tensor core. A model owns a flat store of
named parameter tensors, partitioned into the generator groups (theta1 encoder,
theta2 decoders), the discriminator (beta), and the CVAE heads.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError


def component_rng(seed: int, name: str) -> np.random.Generator:
    """Independent counter-based stream per named component."""
    key = (int(seed) << 32) ^ (zlib.crc32(name.encode()) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class ModelConfig:
    """Architecture knobs. Defaults are the desk-scale toy configuration."""

    image_size: int = 64
    in_channels: int = 3
    patch_size: int = 4
    stage_channels: tuple = (32, 64, 128, 256)
    depths: tuple = (1, 1, 2, 1)
    num_heads: tuple = (1, 2, 4, 8)
    window_size: int = 4
    mlp_ratio: float = 0.5
    decoder_channels: int = 32
    latent_dim: int = 8
    rcab_reduction: int = 4
    msd_dilations: tuple = (1, 3, 5)
    disc_channels: int = 64
    cvae_hidden: int = 32
    with_depth_head: bool = False
    early_fusion: bool = False

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.depths = tuple(self.depths)
        self.num_heads = tuple(self.num_heads)
        self.msd_dilations = tuple(self.msd_dilations)
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if not (len(self.stage_channels) == len(self.depths) == len(self.num_heads) == 4):
            raise ValueError("stage_channels, depths and num_heads must have 4 entries")
        for a, b in zip(self.stage_channels, self.stage_channels[1:]):
            if b != 2 * a:
                raise ValueError("stage_channels must increase by exact factors of 2")
        for i, (c, h) in enumerate(zip(self.stage_channels, self.num_heads)):
            if c % h != 0:
                raise ValueError(f"stage {i}: channels {c} not divisible by heads {h}")
        for i in range(4):
            grid = self.image_size // self.patch_size // (2 ** i)
            if grid < 1:
                raise ValueError("image too small for four stages")
            ws = min(self.window_size, grid)
            if grid % ws != 0:
                raise ValueError(f"stage {i}: grid {grid} not divisible by window {ws}")

    def stage_grid(self, stage: int) -> int:
        return self.image_size // self.patch_size // (2 ** stage)


@dataclass
class Pyramid:
    """Backbone features at strides 4/8/16/32 of the input (NCHW)."""

    t1: Tensor
    t2: Tensor
    t3: Tensor
    t4: Tensor

    def as_list(self):
        return [self.t1, self.t2, self.t3, self.t4]

    def with_t4(self, t4: Tensor) -> "Pyramid":
        return Pyramid(self.t1, self.t2, self.t3, t4)


@dataclass
class ModelParams:
    """Named parameter partitions: generator theta = {theta1, theta2}, plus beta."""

    theta1: dict
    theta2: dict
    beta: dict
    cvae: dict


class ParamStore:
    def __init__(self):
        self.tensors: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter name {name}")
        t = Tensor(np.asarray(array, dtype=T.get_dtype()), requires_grad=True)
        self.tensors[name] = t
        return t

    def subset(self, *prefixes: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items()
                if any(k.startswith(p) for p in prefixes)}

    def count(self, *prefixes: str) -> int:
        sel = self.subset(*prefixes) if prefixes else self.tensors
        return sum(t.size for t in sel.values())


def _glorot(rng, shape, fan_in, fan_out):
    return rng.standard_normal(shape) * np.sqrt(2.0 / (fan_in + fan_out))


class Linear:
    def __init__(self, store, name, rng, din, dout, zero_init=False):
        w = np.zeros((din, dout)) if zero_init else _glorot(rng, (din, dout), din, dout)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(dout))

    def __call__(self, x):
        return T.matmul(x, self.w) + self.b


class Conv:
    def __init__(self, store, name, rng, cin, cout, kernel, stride=1, padding=0,
                 dilation=1, zero_init=False, zero_bias=True):
        fan_in = cin * kernel * kernel
        fan_out = cout * kernel * kernel
        w = (np.zeros((cout, cin, kernel, kernel)) if zero_init
             else _glorot(rng, (cout, cin, kernel, kernel), fan_in, fan_out))
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(cout) if zero_bias
                           else rng.standard_normal(cout) * 0.01)
        self.stride, self.padding, self.dilation = stride, padding, dilation

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, self.stride, self.padding, self.dilation)


class LayerNorm:
    def __init__(self, store, name, dim):
        self.gamma = store.add(f"{name}.gamma", np.ones(dim))
        self.beta = store.add(f"{name}.beta", np.zeros(dim))

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


class BatchNorm2d:
    """Batch statistics over (N, H, W) per channel; no running averages."""

    def __init__(self, store, name, channels, eps=1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.channels = channels
        self.eps = eps

    def __call__(self, x):
        mu = T.tmean(x, (0, 2, 3), keepdims=True)
        var = T.tmean((x - mu) * (x - mu), (0, 2, 3), keepdims=True)
        xhat = (x - mu) / T.sqrt(var + self.eps)
        c = self.channels
        return T.reshape(self.gamma, (1, c, 1, 1)) * xhat + T.reshape(self.beta, (1, c, 1, 1))


# -- window attention --------------------------------------------------------


def window_partition(x, ws: int):
    """(B, H, W, C) -> (B*nWindows, ws*ws, C)."""
    b, h, w, c = x.shape
    if h % ws or w % ws:
        raise ShapeError(f"token grid {h}x{w} not divisible by window {ws}")
    x = T.reshape(x, (b, h // ws, ws, w // ws, ws, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (b * (h // ws) * (w // ws), ws * ws, c))


def window_merge(x, ws: int, b: int, h: int, w: int):
    c = x.shape[-1]
    x = T.reshape(x, (b, h // ws, w // ws, ws, ws, c))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (b, h, w, c))


_MASK_CACHE: dict = {}


def shifted_window_mask(h: int, w: int, ws: int, shift: int) -> np.ndarray:
    """Additive mask (nWindows, T, T): -1e9 on pairs wrapped across the border."""
    key = (h, w, ws, shift)
    mask = _MASK_CACHE.get(key)
    if mask is None:
        img = np.zeros((h, w))
        cnt = 0
        for hs in (slice(0, h - ws), slice(h - ws, h - shift), slice(h - shift, h)):
            for cs in (slice(0, w - ws), slice(w - ws, w - shift), slice(w - shift, w)):
                img[hs, cs] = cnt
                cnt += 1
        ids = img.reshape(h // ws, ws, w // ws, ws).transpose(0, 2, 1, 3)
        ids = ids.reshape(-1, ws * ws)
        mask = np.where(ids[:, :, None] != ids[:, None, :], -1e9, 0.0)
        _MASK_CACHE[key] = mask
    return mask


class WindowAttention:
    """Multi-head self-attention computed independently per (optionally shifted) window."""

    def __init__(self, store, name, rng, channels, heads):
        self.heads = heads
        self.dh = channels // heads
        self.c = channels
        self.wq = Linear(store, f"{name}.q", rng, channels, channels)
        self.wk = Linear(store, f"{name}.k", rng, channels, channels)
        self.wv = Linear(store, f"{name}.v", rng, channels, channels)
        self.wo = Linear(store, f"{name}.o", rng, channels, channels)

    def __call__(self, x, window_size: int, shifted: bool):
        b, h, w, c = x.shape
        ws = min(window_size, h, w)
        if h % ws or w % ws:
            raise ShapeError(f"token grid {h}x{w} not divisible by window {ws}")
        do_shift = shifted and ws < h
        shift = ws // 2 if do_shift else 0
        if do_shift:
            x = T.roll(x, (-shift, -shift), (1, 2))
        win = window_partition(x, ws)  # (BW, t, C)
        bw, t, _ = win.shape

        def split_heads(z):
            z = T.reshape(z, (bw, t, self.heads, self.dh))
            return T.transpose(z, (0, 2, 1, 3))

        q = split_heads(self.wq(win))
        k = split_heads(self.wk(win))
        v = split_heads(self.wv(win))
        att = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) / np.sqrt(self.dh)
        if do_shift:
            mask = shifted_window_mask(h, w, ws, shift)
            tiled = np.tile(mask[:, None, :, :], (b, 1, 1, 1)).astype(att.dtype)
            att = att + Tensor(tiled)
        att = T.softmax(att, axis=-1)
        out = T.matmul(att, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (bw, t, c))
        out = self.wo(out)
        out = window_merge(out, ws, b, h, w)
        if do_shift:
            out = T.roll(out, (shift, shift), (1, 2))
        return out


class WindowBlock:
    def __init__(self, store, name, rng, channels, heads, window_size, shifted, mlp_ratio):
        self.window_size = window_size
        self.shifted = shifted
        self.ln1 = LayerNorm(store, f"{name}.ln1", channels)
        self.attn = WindowAttention(store, f"{name}.attn", rng, channels, heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", channels)
        hidden = max(int(channels * mlp_ratio), 8)
        self.fc1 = Linear(store, f"{name}.fc1", rng, channels, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", rng, hidden, channels)

    def __call__(self, x):
        x = x + self.attn(self.ln1(x), self.window_size, self.shifted)
        return x + self.fc2(T.gelu(self.fc1(self.ln2(x))))


class PatchMerge:
    """2x2 token grouping followed by a 4C -> 2C projection."""

    def __init__(self, store, name, rng, channels):
        self.ln = LayerNorm(store, f"{name}.ln", 4 * channels)
        self.proj = Linear(store, f"{name}.proj", rng, 4 * channels, 2 * channels)

    def __call__(self, x):
        b, h, w, c = x.shape
        x = T.reshape(x, (b, h // 2, 2, w // 2, 2, c))
        x = T.transpose(x, (0, 1, 3, 2, 4, 5))
        x = T.reshape(x, (b, h // 2, w // 2, 4 * c))
        return self.proj(self.ln(x))


class Encoder:
    """Hierarchical windowed-attention encoder producing a 4-level pyramid."""

    def __init__(self, store, prefix, rng, config: ModelConfig):
        self.config = config
        c1 = config.stage_channels[0]
        self.patch = Conv(store, f"{prefix}.patch", rng, config.in_channels, c1,
                          config.patch_size, stride=config.patch_size)
        g = config.stage_grid(0)
        self.pos = store.add(f"{prefix}.pos", rng.standard_normal((g, g, c1)) * 0.02)
        self.stages = []
        self.merges = []
        for s in range(4):
            blocks = []
            for d in range(config.depths[s]):
                blocks.append(WindowBlock(store, f"{prefix}.s{s}.b{d}", rng,
                                        config.stage_channels[s], config.num_heads[s],
                                        config.window_size, shifted=(d % 2 == 1),
                                        mlp_ratio=config.mlp_ratio))
            self.stages.append(blocks)
            if s < 3:
                self.merges.append(PatchMerge(store, f"{prefix}.merge{s}", rng,
                                              config.stage_channels[s]))

    def __call__(self, x) -> Pyramid:
        cfg = self.config
        expected = (cfg.in_channels, cfg.image_size, cfg.image_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"encoder expects (B, {expected[0]}, {expected[1]}, {expected[2]}), "
                             f"got {x.shape}")
        z = self.patch(x)                      # (B, C1, g, g)
        z = T.transpose(z, (0, 2, 3, 1))       # tokens as (B, g, g, C)
        z = z + self.pos
        feats = []
        for s in range(4):
            for block in self.stages[s]:
                z = block(z)
            feats.append(T.transpose(z, (0, 3, 1, 2)))
            if s < 3:
                z = self.merges[s](z)
        return Pyramid(*feats)


# -- decoders ------------------------------------------------------------


class RCAB:
    """Residual block with squeeze-style channel attention."""

    def __init__(self, store, name, rng, channels, reduction):
        self.conv1 = Conv(store, f"{name}.conv1", rng, channels, channels, 3, padding=1)
        self.conv2 = Conv(store, f"{name}.conv2", rng, channels, channels, 3, padding=1)
        mid = max(channels // reduction, 1)
        self.down = Conv(store, f"{name}.down", rng, channels, mid, 1)
        self.up = Conv(store, f"{name}.up", rng, mid, channels, 1)

    def __call__(self, x):
        body = self.conv2(T.relu(self.conv1(x)))
        pooled = T.tmean(body, (2, 3), keepdims=True)
        scale = T.sigmoid(self.up(T.relu(self.down(pooled))))
        return x + body * scale


class MSD:
    """Multi-scale dilated block: 1x1-reduced dilated branches plus a global branch."""

    def __init__(self, store, name, rng, cin, cout, dilations):
        self.reduce = [Conv(store, f"{name}.r{d}", rng, cin, cout, 1) for d in dilations]
        self.branches = [Conv(store, f"{name}.d{d}", rng, cout, cout, 3,
                              padding=d, dilation=d) for d in dilations]
        self.global_proj = Conv(store, f"{name}.gap", rng, cin, cout, 1)
        n = len(dilations) + 1
        self.fuse = Conv(store, f"{name}.fuse", rng, n * cout, cout, 1)

    def __call__(self, x):
        _, _, h, w = x.shape
        outs = [T.leaky_relu(conv(T.leaky_relu(red(x))))
                for red, conv in zip(self.reduce, self.branches)]
        g = T.leaky_relu(self.global_proj(T.tmean(x, (2, 3), keepdims=True)))
        outs.append(T.resize_bilinear(g, h, w))
        return T.leaky_relu(self.fuse(T.concat(outs, axis=1)))


class Decoder:
    """Reduce each pyramid level to a common width, fuse at stride 4, refine, predict."""

    def __init__(self, store, prefix, rng, config: ModelConfig, bounded: bool):
        cd = config.decoder_channels
        self.bounded = bounded
        self.config = config
        self.reduce = [Conv(store, f"{prefix}.reduce{i}", rng, c, cd, 3, padding=1)
                       for i, c in enumerate(config.stage_channels)]
        self.rcab = RCAB(store, f"{prefix}.rcab", rng, 4 * cd, config.rcab_reduction)
        self.msd = MSD(store, f"{prefix}.msd", rng, 4 * cd, cd, config.msd_dilations)
        self.head = Conv(store, f"{prefix}.head", rng, cd, 1, 3, padding=1)

    def __call__(self, pyr: Pyramid) -> Tensor:
        cfg = self.config
        grid = cfg.stage_grid(0)
        feats = []
        for i, t in enumerate(pyr.as_list()):
            if t.shape[1] != cfg.stage_channels[i]:
                raise ShapeError(f"pyramid level {i + 1} has {t.shape[1]} channels, "
                                 f"expected {cfg.stage_channels[i]}")
            f = T.leaky_relu(self.reduce[i](t))
            if f.shape[2] != grid:
                f = T.resize_bilinear(f, grid, grid)
            feats.append(f)
        x = T.concat(feats, axis=1)
        x = self.rcab(x)
        x = self.msd(x)
        out = self.head(x)
        out = T.resize_bilinear(out, cfg.image_size, cfg.image_size)
        return T.sigmoid(out) if self.bounded else out


class LatentInjector:
    """Broadcast h over t4's grid, concat channel-wise, project back to C4."""

    def __init__(self, store, prefix, rng, config: ModelConfig):
        c4 = config.stage_channels[3]
        self.k = config.latent_dim
        self.conv = Conv(store, f"{prefix}.conv", rng, c4 + config.latent_dim, c4,
                         3, padding=1)

    def __call__(self, t4, h):
        if h.ndim != 2 or h.shape[1] != self.k:
            raise ShapeError(f"latent must be (B, {self.k}), got {h.shape}")
        if h.shape[0] != t4.shape[0]:
            raise ShapeError("latent batch does not match features")
        hmap = T.expand_spatial(h, t4.shape[2], t4.shape[3])
        return self.conv(T.concat([t4, hmap], axis=1))


class Discriminator:
    """Image-conditioned pixel-wise realness: concat(x, m) through stride-2 convs."""

    def __init__(self, store, prefix, rng, config: ModelConfig):
        ch = config.disc_channels
        cin = config.in_channels + 1
        self.conv1 = Conv(store, f"{prefix}.conv1", rng, cin, ch, 3, stride=2, padding=1)
        self.convs = [Conv(store, f"{prefix}.conv{i + 2}", rng, ch, ch, 3,
                           stride=2, padding=1) for i in range(3)]
        self.bns = [BatchNorm2d(store, f"{prefix}.bn{i + 2}", ch) for i in range(3)]
        self.head = Conv(store, f"{prefix}.head", rng, ch, 1, 3, padding=1)

    def __call__(self, x, m):
        if m.ndim != 4 or m.shape[1] != 1:
            raise ShapeError(f"mask must be (B, 1, H, W), got {m.shape}")
        if x.shape[0] != m.shape[0] or x.shape[2:] != m.shape[2:]:
            raise ShapeError(f"image {x.shape} and mask {m.shape} disagree")
        z = T.leaky_relu(self.conv1(T.concat([x, m], axis=1)))
        for conv, bn in zip(self.convs, self.bns):
            z = T.leaky_relu(bn(conv(z)))
        logit = self.head(z)
        logit = T.resize_bilinear(logit, x.shape[2], x.shape[3])
        return T.sigmoid(logit)


class CvaeHeads:
    """Gaussian prior p(h|x) and posterior q(h|x, y) heads; zero-init outputs."""

    def __init__(self, store, prefix, rng, config: ModelConfig):
        c4 = config.stage_channels[3]
        k = config.latent_dim
        ydim = (config.image_size // 4) ** 2
        hid = config.cvae_hidden
        self.k = k
        self.prior_fc1 = Linear(store, f"{prefix}.prior1", rng, c4, hid)
        self.prior_fc2 = Linear(store, f"{prefix}.prior2", rng, hid, 2 * k, zero_init=True)
        self.post_fc1 = Linear(store, f"{prefix}.post1", rng, c4 + ydim, hid)
        self.post_fc2 = Linear(store, f"{prefix}.post2", rng, hid, 2 * k, zero_init=True)

    @staticmethod
    def _gap(t4):
        return T.tmean(t4, (2, 3))

    def _split(self, out):
        return out[:, :self.k], out[:, self.k:]

    def prior(self, t4):
        return self._split(self.prior_fc2(T.gelu(self.prior_fc1(self._gap(t4)))))

    def posterior(self, t4, y):
        if y is None:
            raise ValueError("posterior head requires the ground-truth mask y")
        pooled = T.avg_pool2d(y, 4, 4)
        b = y.shape[0]
        flat = T.reshape(pooled, (b, pooled.shape[2] * pooled.shape[3]))
        z = T.concat([self._gap(t4), flat], axis=1)
        return self._split(self.post_fc2(T.gelu(self.post_fc1(z))))


class EarlyFusion:
    """concat(RGB, depth) -> 3x3 conv -> 3-channel input tensor."""

    def __init__(self, store, prefix, rng, config: ModelConfig):
        self.conv = Conv(store, f"{prefix}.conv", rng, config.in_channels + 1,
                         config.in_channels, 3, padding=1)

    def __call__(self, x, depth):
        if depth.shape[0] != x.shape[0] or depth.shape[2:] != x.shape[2:]:
            raise ShapeError(f"depth {depth.shape} does not match image {x.shape}")
        return self.conv(T.concat([x, depth], axis=1))


class SaliencyModel:
    """The full desk-scale model: all heads share one parameter store."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.store = ParamStore()
        self.fusion = (EarlyFusion(self.store, "fuse", component_rng(seed, "fuse"), config)
                       if config.early_fusion else None)
        self.encoder = Encoder(self.store, "enc", component_rng(seed, "enc"), config)
        self.injector = LatentInjector(self.store, "inject", component_rng(seed, "inject"), config)
        self.sal_decoder = Decoder(self.store, "dec_sal", component_rng(seed, "dec_sal"),
                                   config, bounded=False)
        self.depth_decoder = (Decoder(self.store, "dec_depth", component_rng(seed, "dec_depth"),
                                      config, bounded=True)
                              if config.with_depth_head else None)
        self.discriminator = Discriminator(self.store, "disc", component_rng(seed, "disc"), config)
        self.cvae = CvaeHeads(self.store, "cvae", component_rng(seed, "cvae"), config)

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    # -- forward paths ----------------------------------------------------

    def fuse_input(self, x, depth):
        if self.fusion is None:
            raise ValueError("early fusion is not enabled in this config")
        return self.fusion(x, depth)

    def encode(self, x, depth=None) -> Pyramid:
        if self.fusion is not None:
            if depth is None:
                raise ValueError("early-fusion model needs a depth map")
            x = self.fuse_input(x, depth)
        return self.encoder(x)

    def inject(self, pyr: Pyramid, h) -> Pyramid:
        return pyr.with_t4(self.injector(pyr.t4, h))

    def decode_saliency(self, pyr: Pyramid) -> Tensor:
        return self.sal_decoder(pyr)

    def decode_depth(self, pyr: Pyramid) -> Tensor:
        if self.depth_decoder is None:
            raise ValueError("depth head is not enabled in this config")
        return self.depth_decoder(pyr)

    def forward(self, x, h=None, depth=None) -> Tensor:
        """Saliency logits; h (B, K) is injected into t4 when given."""
        pyr = self.encode(x, depth)
        if h is not None:
            pyr = self.inject(pyr, h)
        return self.decode_saliency(pyr)

    def decode_with_latent(self, pyr: Pyramid, h) -> Tensor:
        return self.decode_saliency(self.inject(pyr, h))

    def predict(self, x, h=None, depth=None) -> Tensor:
        return T.sigmoid(self.forward(x, h, depth))

    def predict_samples(self, x, n: int, rng, depth=None, h_fixed=None) -> list:
        """n sigmoid predictions sharing one encoder pass; h ~ N(0, I) unless pinned."""
        with T.no_grad():
            pyr = self.encode(x, depth)
            outs = []
            for _ in range(n):
                if h_fixed is not None:
                    h = Tensor(np.broadcast_to(h_fixed, (x.shape[0], self.latent_dim)).copy())
                else:
                    h = Tensor(rng.standard_normal((x.shape[0], self.latent_dim)))
                outs.append(T.sigmoid(self.decode_with_latent(pyr, h)))
        return outs

    def discriminate(self, x, m) -> Tensor:
        return self.discriminator(x, m)

    # -- parameter bookkeeping ---------------------------------------------

    def param_groups(self) -> ModelParams:
        return ModelParams(
            theta1=self.store.subset("enc.", "fuse."),
            theta2=self.store.subset("dec_sal.", "dec_depth.", "inject."),
            beta=self.store.subset("disc."),
            cvae=self.store.subset("cvae."),
        )

    def generator_params(self) -> dict:
        g = self.param_groups()
        return {**g.theta1, **g.theta2, **g.cvae}

    def discriminator_params(self) -> dict:
        return self.param_groups().beta

    def named_parameters(self) -> dict:
        return dict(self.store.tensors)

    def param_count(self) -> int:
        return self.store.count()

    def save(self, path) -> None:
        save_checkpoint(path, self.named_parameters())

    def load(self, path) -> None:
        loaded = load_checkpoint(path)
        own = self.named_parameters()
        missing = sorted(set(own) - set(loaded))
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {missing[:4]}...")
        for name, tensor in own.items():
            arr = loaded[name]
            if arr.shape != tensor.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {tensor.shape}")
            tensor.data = arr.astype(tensor.dtype)


# -- checkpoint container ----------------------------------------------------

_CKPT_MAGIC = b"SGCKPT"
_CKPT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.float32, 1: np.float64}


def save_checkpoint(path, named) -> None:
    """Flat binary container: (name, dtype, shape, row-major little-endian data)."""
    items = sorted(named.items())
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<HI", _CKPT_VERSION, len(items)))
        for name, value in items:
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            code = _DTYPE_CODES[np.dtype(arr.dtype)]
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=f"<{arr.dtype.str[1:]}").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<HI", fh.read(6))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            dtype = np.dtype(_CODE_DTYPES[code]).newbyteorder("<")
            n_bytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
            arr = np.frombuffer(fh.read(n_bytes), dtype=dtype).reshape(shape)
            out[name] = arr.astype(arr.dtype.newbyteorder("="))
        return out
