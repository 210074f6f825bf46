"""Self-contained correctness checks runnable from the CLI: gradient checks on
every primitive and network path, plus closed-form oracle checks for losses,
metrics, the Langevin sampler and the contrast analysis."""

from __future__ import annotations

import numpy as np

from . import data as D
from . import inference as I
from . import losses as L
from . import metrics as M
from . import tensor as T
from .nets import ModelConfig, SaliencyModel
from .tensor import Tensor


def _tiny_model(seed=0):
    cfg = ModelConfig(image_size=8, patch_size=1, stage_channels=(4, 8, 16, 32),
                      depths=(1, 1, 1, 1), num_heads=(1, 2, 4, 8), window_size=2,
                      latent_dim=4, cvae_hidden=8)
    return SaliencyModel(cfg, seed=seed)


def _check_primitives(rng):
    cases = {
        "add": lambda t: t + 1.3, "mul": lambda t: t * t,
        "div": lambda t: t / (T.absolute(t) + 2.0), "exp": T.exp,
        "log": lambda t: T.log(T.absolute(t) + 0.5), "abs": T.absolute,
        "pow": lambda t: T.power(T.absolute(t) + 0.5, 1.7), "sigmoid": T.sigmoid,
        "leaky_relu": lambda t: T.leaky_relu(t, 0.2), "gelu": T.gelu,
        "softmax": lambda t: T.softmax(t, axis=1),
        "rot90": lambda t: T.rot90(t, 1), "roll": lambda t: T.roll(t, (1, 1), (0, 1)),
        "matmul": lambda t: T.matmul(t, T.transpose(t, (1, 0))),
    }
    worst = 0.0
    for fn in cases.values():
        for _ in range(3):
            x0 = rng.standard_normal((3, 4))
            wt = rng.standard_normal(fn(Tensor(x0)).shape)
            worst = max(worst, T.finite_diff_check(
                lambda t: T.tmean(fn(t) * wt), Tensor(x0)))
    x0 = rng.standard_normal((1, 2, 6, 6))
    kernel = Tensor(rng.standard_normal((2, 2, 3, 3)))
    for fn in (lambda t: T.conv2d(t, kernel, padding=1),
               lambda t: T.avg_pool2d(t, 3, 1, 1),
               lambda t: T.max_pool2d(t, 2, 2),
               lambda t: T.resize_bilinear(t, 9, 5)):
        wt = rng.standard_normal(fn(Tensor(x0)).shape)
        worst = max(worst, T.finite_diff_check(lambda t: T.tmean(fn(t) * wt), Tensor(x0)))
    assert worst <= 1e-4, f"worst primitive gradient error {worst:.3g}"
    return f"max rel err {worst:.2e}"


def _check_network_paths(rng):
    model = _tiny_model(seed=1)
    x0 = rng.random((1, 3, 8, 8))
    err1 = T.finite_diff_check(lambda t: T.tmean(T.sigmoid(model.forward(t))),
                               Tensor(x0), coords=12, rng=rng)
    err2 = T.finite_diff_check(
        lambda t: T.tmean(model.discriminate(Tensor(x0), T.sigmoid(t))),
        Tensor(rng.standard_normal((1, 1, 8, 8))), coords=12, rng=rng)
    pyr = model.encode(Tensor(x0))
    err3 = T.finite_diff_check(lambda h: T.tsum(model.decode_with_latent(pyr, h)),
                               Tensor(rng.standard_normal((1, 4))))
    worst = max(err1, err2, err3)
    assert worst <= 1e-4, f"network path gradient error {worst:.3g}"
    return f"max rel err {worst:.2e}"


def _check_attention(rng):
    from .nets import ParamStore, WindowAttention, component_rng
    store = ParamStore()
    attn = WindowAttention(store, "a", component_rng(2, "a"), channels=8, heads=2)
    x = rng.standard_normal((1, 4, 4, 8))
    windowed = attn(Tensor(x), window_size=4, shifted=False).numpy()
    tok = x.reshape(1, 16, 8)
    q = tok @ attn.wq.w.numpy() + attn.wq.b.numpy()
    k = tok @ attn.wk.w.numpy() + attn.wk.b.numpy()
    v = tok @ attn.wv.w.numpy() + attn.wv.b.numpy()
    heads = [np.stack([z[:, :, i * 4:(i + 1) * 4] for i in range(2)], 1) for z in (q, k, v)]
    att = heads[0] @ heads[1].transpose(0, 1, 3, 2) / 2.0
    att = np.exp(att - att.max(-1, keepdims=True))
    att /= att.sum(-1, keepdims=True)
    out = (att @ heads[2]).transpose(0, 2, 1, 3).reshape(1, 16, 8)
    out = (out @ attn.wo.w.numpy() + attn.wo.b.numpy()).reshape(1, 4, 4, 8)
    gap = np.abs(windowed - out).max()
    assert gap <= 1e-6, f"window/global attention gap {gap:.3g}"
    roundtrip = T.rot90(T.rot90(Tensor(x), 3), 1).numpy()
    assert np.array_equal(roundtrip, x), "rotation roundtrip not exact"
    return f"gap {gap:.2e}"


def _check_losses(rng):
    y = (rng.random((1, 1, 8, 8)) > 0.5).astype(float)
    s = Tensor(np.where(y > 0, 40.0, -40.0))
    perfect = L.structure_aware_loss(s, Tensor(y)).item()
    assert perfect < 1e-12, f"perfect structure loss {perfect:.3g}"
    half = Tensor(np.full((1, 1, 8, 8), 0.5))
    _, l_dis = L.gan_losses(Tensor(rng.standard_normal((1, 1, 8, 8))), Tensor(y),
                            Tensor(rng.random((1, 3, 8, 8))), half, half, L.LossWeights())
    assert abs(l_dis.item() - 2 * np.log(2)) < 1e-10, "uniform-discriminator loss"
    kl = L.kl_diag_gaussians(Tensor([[1.0]]), Tensor([[0.0]]),
                             Tensor([[0.0]]), Tensor([[0.0]])).item()
    assert abs(kl - 0.5) < 1e-12, f"KL closed form {kl}"
    labels = np.zeros((1, 8, 8), np.int8)
    labels[0, 2, 2:6] = L.SCRIBBLE_FG
    labels[0, 6, 2:6] = L.SCRIBBLE_BG
    scr = L.ScribbleMask(labels)
    leaf = Tensor(rng.standard_normal((1, 1, 8, 8)), requires_grad=True)
    L.partial_ce(leaf, scr).backward()
    assert np.all(leaf.grad[~scr.labeled()[:, None]] == 0), "partial CE leaks gradient"
    err = T.finite_diff_check(
        lambda t: L.structure_aware_loss(t, Tensor(y)),
        Tensor(rng.standard_normal((1, 1, 8, 8))))
    assert err <= 1e-4, f"structure loss gradient {err:.3g}"
    return "identities and gradients hold"


def _check_metrics(rng):
    g = (rng.random((6, 6)) > 0.5).astype(float)
    if g.sum() in (0, g.size):
        g[0, 0] = 1 - g[0, 0]
    assert M.mae(g, g) == 0.0
    assert M.s_measure(g, g) == 1.0
    assert M.e_measure_mean(g, g) == 1.0
    assert M.f_measure_mean(np.zeros((6, 6)), g) == 0.0
    p = rng.random((6, 6))
    total = M.mae(p, g) + M.mae(1 - p, g)
    assert abs(total - 1.0) < 1e-12, "mae complement identity"
    flipped = [fn(p[:, ::-1].copy(), g[:, ::-1].copy()) - fn(p, g)
               for fn in (M.mae, M.f_measure_mean, M.e_measure_mean, M.s_measure)]
    assert max(abs(v) for v in flipped) < 1e-10, "flip invariance"
    return "oracle identities hold"


def _check_langevin(rng):
    a = np.array([[1.0, 0.2], [0.1, 0.8], [0.6, -0.4]])
    b = np.array([0.3, -0.1, 0.2])
    y = np.array([1.2, 0.4, -0.5])
    s2 = 0.5
    lam = np.eye(2) + a.T @ a / s2
    mean = np.linalg.solve(lam, a.T @ (y - b) / s2)

    def log_joint(h):
        resid = Tensor(y) - T.matmul(h, Tensor(a.T)) - Tensor(b)
        return -T.tsum(resid * resid) / (2 * s2) - T.tsum(h * h) / 2.0

    class _Zero:
        def standard_normal(self, shape):
            return np.zeros(shape)

    h0 = np.array([[0.4, -0.2]])
    h, _ = I.langevin_sample(lambda t: 0.0 * T.tsum(t), h0,
                             I.LangevinConfig(steps=4), _Zero())
    assert np.array_equal(h, h0), "zero-field chain moved"
    cfg = I.LangevinConfig(step_size=0.1, steps=600)
    h, _ = I.langevin_sample(log_joint, rng.standard_normal((40, 2)), cfg, rng)
    gap = np.linalg.norm(h.mean(axis=0) - mean)
    assert gap < 0.3, f"conjugate posterior mean off by {gap:.3f}"
    ent = I.entropy_of_mean(np.array([0.5]))
    assert abs(ent[0] - np.log(2)) < 1e-12
    return f"posterior mean gap {gap:.3f}"


def _check_contrast(rng):
    image = np.tile(rng.random((4, 1, 3)), (1, 8, 1))
    fg = np.zeros((4, 8), bool)
    fg[:, :4] = True
    assert D.global_contrast(image, fg) == 0.0, "identical regions not zero"
    image = np.zeros((4, 4, 3))
    image[:2] = 0.01
    image[2:] = 0.99
    fg = np.zeros((4, 4), bool)
    fg[:2] = True
    val = D.global_contrast(image, fg)
    assert abs(val - 1.0) < 1e-9, f"disjoint histograms gave {val}"
    return "chi-squared cases hold"


def _check_checkpoint(rng, tmp=None):
    import tempfile
    model = _tiny_model(seed=4)
    x = Tensor(rng.random((1, 3, 8, 8)))
    before = model.forward(x).numpy().copy()
    with tempfile.NamedTemporaryFile(suffix=".bin", delete=False) as fh:
        path = fh.name
    model.save(path)
    other = _tiny_model(seed=99)
    other.load(path)
    assert np.array_equal(other.forward(x).numpy(), before), "checkpoint roundtrip"
    return "bitwise roundtrip"


CHECKS = [
    ("primitive-gradients", _check_primitives),
    ("network-path-gradients", _check_network_paths),
    ("attention-equivalence", _check_attention),
    ("loss-identities", _check_losses),
    ("metric-identities", _check_metrics),
    ("langevin-sampler", _check_langevin),
    ("global-contrast", _check_contrast),
    ("checkpoint-roundtrip", _check_checkpoint),
]


def run_selftest(verbose_print=print) -> bool:
    T.set_precision("f64")
    ok = True
    for name, fn in CHECKS:
        rng = np.random.default_rng(2024)
        try:
            detail = fn(rng)
            verbose_print(f"PASS {name}: {detail}")
        except AssertionError as exc:
            verbose_print(f"FAIL {name}: {exc}")
            ok = False
    return ok
