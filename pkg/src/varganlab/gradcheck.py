"""Finite-difference checks of every network/loss pairing the GAN variants use."""
from __future__ import annotations

import numpy as np

from . import zoo
from .nn import check_param_gradients, forward, grad_check, init_net, mean_loss

FD_STEP = 1e-5
# linear stacks are linear in every single parameter, so any step is exact;
# a wider one just lowers rounding noise
LINEAR_FD_STEP = 1e-3
# instances with a leaky-relu pre-activation or a minibatch L1 coordinate
# difference closer than this to zero are redrawn: a central difference that
# straddles the kink is not a gradient of anything
KINK_MARGIN = 1e-4
MAX_REDRAWS = 100


def _leaky_margin(cache) -> float:
    m = np.inf
    for layer, a in zip(cache.net.layers, cache.outputs):
        if layer.activation == "leaky_relu":
            z = np.where(a > 0, a, a / layer.slope)
            m = min(m, float(np.abs(z).min()))
    return m


def _margin(*caches) -> float:
    m = np.inf
    for c in caches:
        if c is None:
            continue
        if isinstance(c, zoo._DCache):
            m = min(m, _leaky_margin(c.body))
            if c.head is not None:
                m = min(m, _leaky_margin(c.head))
                diffs = np.abs(c.pen[:, None, :] - c.pen[None, :, :])
                # dropped-out pairs stay exactly equal under any perturbation
                live = (c.pen[:, None, :] != 0) | (c.pen[None, :, :] != 0)
                live &= ~np.eye(len(c.pen), dtype=bool)[:, :, None]
                if live.any():
                    m = min(m, float(diffs[live].min()))
        else:
            m = min(m, _leaky_margin(c))
    return m


def _redraw(check):
    """Retry ``check(rng)`` until it reports an instance clear of kinks."""
    def wrapped(*args, **kwargs):
        for _ in range(MAX_REDRAWS):
            err = check(*args, **kwargs)
            if err is not None:
                return err
        raise RuntimeError("could not draw an instance away from activation kinks")
    wrapped.__name__ = check.__name__
    wrapped.__doc__ = check.__doc__
    return wrapped


def _flat(grads_by_net: dict, names) -> list:
    return [g for name in names for pair in grads_by_net[name] for g in pair]


def _params(bundle, names) -> list:
    nets = bundle.nets()
    return [p for name in names for p in nets[name].params()]


def _small_bundle(variant, rng, conditional=None, data_dim=3, batch=8):
    return zoo.build_bundle(variant, data_dim, latent_dim=4, batch_size=batch, width=1 / 64,
                            condition_classes=conditional, seed=int(rng.integers(1 << 30)))


@_redraw
def check_layer_stack(activation: str, rng, dropout: float = 0.0, depth: int = 4) -> float:
    sizes = [5] + [7] * (depth - 1) + [3]
    acts = [activation] * depth
    net = init_net(sizes, acts, [dropout] * depth, seed=int(rng.integers(1 << 30)))
    for layer in net.layers:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    x = rng.normal(size=(6, 5))
    fseed = int(rng.integers(1 << 30))
    if _margin(forward(net, x, np.random.default_rng(fseed + 12345))[1]) < KINK_MARGIN:
        return None
    return grad_check(net, x, mean_loss, n_params=100, h=FD_STEP, seed=fseed)


@_redraw
def check_discriminator(variant: str, rng, conditional=None) -> float:
    """D parameters under the discriminator loss on a real and a fake batch."""
    b = _small_bundle(variant, rng, conditional)
    B = b.batch_size
    real = rng.uniform(size=(B, b.data_dim))
    fake = rng.uniform(size=(B, b.data_dim))
    labels = rng.integers(0, conditional, size=B) if conditional else None
    seed = int(rng.integers(1 << 30))

    def run():
        r = np.random.default_rng(seed)
        d_real, c_real = zoo.discriminator_forward(b, real, labels, r)
        d_fake, c_fake = zoo.discriminator_forward(b, fake, labels, r)
        return d_real, c_real, d_fake, c_fake

    d_real, c_real, d_fake, c_fake = run()
    if _margin(c_real, c_fake) < KINK_MARGIN:
        return None
    g_real, g_fake = zoo.discriminator_loss_grad(d_real, d_fake)
    gr, _ = zoo.discriminator_backward(b, c_real, g_real)
    gf, _ = zoo.discriminator_backward(b, c_fake, g_fake)
    names = [n for n in b.nets() if n.startswith("discriminator")]
    analytic = [x + y for x, y in zip(_flat(gr, names), _flat(gf, names))]

    def value():
        d_real, _, d_fake, _ = run()
        return zoo.discriminator_loss(d_real, d_fake)

    return check_param_gradients(_params(b, names), analytic, value, 100, FD_STEP,
                                 int(rng.integers(1 << 30)))


@_redraw
def check_varnet(rng, stable: bool) -> float:
    b = _small_bundle("vargan", rng)
    B = b.batch_size
    real = rng.uniform(size=(B, b.data_dim))
    limited = np.repeat(rng.uniform(size=(2, b.data_dim)), B // 2, axis=0)
    v0 = zoo.varnet_forward(b, limited, np.random.default_rng(0))[0][0]
    # keep the literal log|mcr - v| away from its kink
    label = 0.0 if v0 > 0.5 else 1.0
    seed = int(rng.integers(1 << 30))

    def run():
        r = np.random.default_rng(seed)
        v_real, c_real = zoo.varnet_forward(b, real, r)
        v_lim, c_lim = zoo.varnet_forward(b, limited, r)
        return v_real, c_real, v_lim, c_lim

    v_real, c_real, v_lim, c_lim = run()
    if _margin(c_real, c_lim) < KINK_MARGIN:
        return None
    g_real, g_lim = zoo.varnet_loss_grad(v_real, v_lim, label, stable)
    gr, _ = zoo.varnet_backward(b, c_real, g_real)
    gl, _ = zoo.varnet_backward(b, c_lim, g_lim)
    analytic = [x + y for x, y in zip(_flat(gr, ["varnet"]), _flat(gl, ["varnet"]))]

    def value():
        v_real, _, v_lim, _ = run()
        return zoo.varnet_loss(v_real, v_lim, label, stable)

    return check_param_gradients(_params(b, ["varnet"]), analytic, value, 100, FD_STEP,
                                 int(rng.integers(1 << 30)))


@_redraw
def check_generator(variant: str, rng, saturating: bool = True, conditional=None,
                    C: float = 1.0) -> float:
    """G parameters under the generator objective, through D (and V)."""
    b = _small_bundle(variant, rng, conditional)
    B = b.batch_size
    z = rng.normal(size=(B, b.latent_dim))
    labels = rng.integers(0, conditional, size=B) if conditional else None
    seed = int(rng.integers(1 << 30))

    def run():
        r = np.random.default_rng(seed)
        fake, g_cache = zoo.generator_forward(b, z, labels, r)
        d_fake, d_cache = zoo.discriminator_forward(b, fake, labels, r)
        if b.has_varnet:
            v_fake, v_cache = zoo.varnet_forward(b, fake, r)
            return zoo.vargan_generator_loss(d_fake, v_fake, C, saturating), (g_cache, d_fake, d_cache, v_fake, v_cache)
        return zoo.generator_adversarial_loss(d_fake, saturating), (g_cache, d_fake, d_cache, None, None)

    _, (g_cache, d_fake, d_cache, v_fake, v_cache) = run()
    if _margin(g_cache, d_cache, v_cache) < KINK_MARGIN:
        return None
    if b.has_varnet:
        g_d, g_v = zoo.vargan_generator_loss_grad(d_fake, v_fake, C, saturating)
        _, dx = zoo.discriminator_backward(b, d_cache, g_d)
        dx = dx + zoo.varnet_backward(b, v_cache, g_v)[1]
    else:
        g_d = zoo.generator_adversarial_loss_grad(d_fake, saturating)
        _, dx = zoo.discriminator_backward(b, d_cache, g_d)
    analytic = _flat(zoo.generator_backward(b, g_cache, dx), ["generator"])
    return check_param_gradients(_params(b, ["generator"]), analytic, lambda: run()[0], 100,
                                 FD_STEP, int(rng.integers(1 << 30)))


def check_linear_stack(rng) -> float:
    net = init_net([4, 6, 5, 2], ["identity"] * 3, seed=int(rng.integers(1 << 30)))
    x = rng.normal(size=(5, 4))
    return grad_check(net, x, mean_loss, n_params=100, h=LINEAR_FD_STEP, seed=int(rng.integers(1 << 30)))


def suite() -> dict:
    """Name -> callable(rng) returning the max relative error of one instance."""
    checks = {"linear_stack": check_linear_stack}
    for act in ("leaky_relu", "sigmoid", "tanh", "identity"):
        checks[f"stack_{act}"] = lambda rng, a=act: check_layer_stack(a, rng)
    checks["stack_leaky_relu_dropout"] = lambda rng: check_layer_stack("leaky_relu", rng, dropout=0.3)
    for variant in ("vanilla", "minibatch", "pacgan"):
        checks[f"d_loss_{variant}"] = lambda rng, v=variant: check_discriminator(v, rng)
    checks["d_loss_vanilla_conditional"] = lambda rng: check_discriminator("vanilla", rng, 2)
    checks["varnet_loss_literal"] = lambda rng: check_varnet(rng, stable=False)
    checks["varnet_loss_stable"] = lambda rng: check_varnet(rng, stable=True)
    for variant in zoo.VARIANTS:
        for sat in (True, False):
            tag = "sat" if sat else "nonsat"
            checks[f"g_loss_{variant}_{tag}"] = lambda rng, v=variant, s=sat: check_generator(v, rng, s)
    checks["g_loss_vargan_conditional"] = lambda rng: check_generator("vargan", rng, True, 8)
    checks["g_loss_vargan_small_C"] = lambda rng: check_generator("vargan", rng, True, None, 0.1)
    return checks


def run_suite(instances: int = 20, seed: int = 0, names=None) -> dict[str, float]:
    """Worst relative error per check over ``instances`` random instances."""
    out = {}
    for k, (name, fn) in enumerate(suite().items()):
        if names and name not in names:
            continue
        rng = np.random.default_rng([seed, k])
        out[name] = max(fn(rng) for _ in range(instances))
    return out


def tolerance(name: str) -> float:
    return 1e-8 if name == "linear_stack" else 1e-4
