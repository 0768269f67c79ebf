"""GAN variants and their loss arithmetic.

Variants: ``vanilla``, ``minibatch`` (distance feature in the discriminator),
``pacgan`` (packed discriminator), ``vargan`` (extra diversity-scoring net)
and ``pacvargan``. Any of them can be conditioned on one-hot class labels.

Each loss has a ``*_grad`` companion returning derivatives with respect to
its probability inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .nn import AdamState, Net, ShapeError, backward, forward, init_net

VARIANTS = ("vanilla", "minibatch", "pacgan", "vargan", "pacvargan")
PROB_CLAMP = 1e-7
LOG_FLOOR = 1e-7

GENERATOR_WIDTHS = (512, 1024, 2048, 4096)
DISCRIMINATOR_WIDTHS = (2048, 1024, 512)
DISCRIMINATOR_DROPOUT = (0.0, 0.3, 0.3)


def _clamp(p):
    p = np.asarray(p, dtype=np.float64)
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP), (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)


def _nonempty(*arrays):
    for a in arrays:
        if np.size(a) == 0:
            raise ValueError("empty batch")


def log_clamped(t):
    return np.log(np.maximum(t, LOG_FLOOR))


# -- losses ------------------------------------------------------------------


def discriminator_loss(d_real, d_fake) -> float:
    """-mean log D(x) - mean log(1 - D(G(z)))."""
    _nonempty(d_real, d_fake)
    r, _ = _clamp(d_real)
    f, _ = _clamp(d_fake)
    return float(-np.mean(np.log(r)) - np.mean(np.log1p(-f)))


def discriminator_loss_grad(d_real, d_fake):
    r, r_in = _clamp(d_real)
    f, f_in = _clamp(d_fake)
    g_real = np.where(r_in, -1.0 / (r * r.size), 0.0)
    g_fake = np.where(f_in, 1.0 / ((1.0 - f) * f.size), 0.0)
    return g_real, g_fake


def generator_adversarial_loss(d_fake, saturating: bool = True) -> float:
    _nonempty(d_fake)
    f, _ = _clamp(d_fake)
    if saturating:
        return float(np.mean(np.log1p(-f)))
    return float(-np.mean(np.log(f)))


def generator_adversarial_loss_grad(d_fake, saturating: bool = True):
    f, f_in = _clamp(d_fake)
    if saturating:
        return np.where(f_in, -1.0 / ((1.0 - f) * f.size), 0.0)
    return np.where(f_in, -1.0 / (f * f.size), 0.0)


def _check_label(mcr_label):
    if not 0.0 <= mcr_label <= 1.0:
        raise ValueError(f"MCR label must lie in [0, 1], got {mcr_label}")


def varnet_loss(v_real, v_limited, mcr_label: float, stable: bool = False) -> float:
    """Diversity-net objective: real batches toward 1, limited ones toward
    their MCR label.

    Default form: ``log(1 - v_real) + log|mcr - v_limited|`` with the logs
    floored at 1e-7. ``stable=True`` uses squared errors instead. Array
    inputs are averaged.
    """
    _check_label(mcr_label)
    v_real = np.asarray(v_real, dtype=np.float64)
    v_limited = np.asarray(v_limited, dtype=np.float64)
    if stable:
        return float(np.mean((v_real - 1.0) ** 2) + np.mean((v_limited - mcr_label) ** 2))
    return float(np.mean(log_clamped(1.0 - v_real))
                 + np.mean(log_clamped(np.abs(mcr_label - v_limited))))


def varnet_loss_grad(v_real, v_limited, mcr_label: float, stable: bool = False):
    _check_label(mcr_label)
    v_real = np.asarray(v_real, dtype=np.float64)
    v_limited = np.asarray(v_limited, dtype=np.float64)
    if stable:
        return (2.0 * (v_real - 1.0) / v_real.size,
                2.0 * (v_limited - mcr_label) / v_limited.size)
    gap_real = 1.0 - v_real
    g_real = np.where(gap_real > LOG_FLOOR, -1.0 / (np.maximum(gap_real, LOG_FLOOR) * v_real.size), 0.0)
    diff = v_limited - mcr_label
    # d/dv log|v - mcr| = 1 / (v - mcr)
    safe = np.where(np.abs(diff) > LOG_FLOOR, diff, 1.0)
    g_lim = np.where(np.abs(diff) > LOG_FLOOR, 1.0 / (safe * v_limited.size), 0.0)
    return g_real, g_lim


def _check_c(C):
    if not 0.0 < C <= 1.0:
        raise ValueError(f"penalty coefficient C must lie in (0, 1], got {C}")


def vargan_generator_loss(d_fake, v_fake, C: float = 1.0, saturating: bool = True) -> float:
    """Adversarial term plus ``C * log(1 - V(G(z)))``."""
    _check_c(C)
    v = np.asarray(v_fake, dtype=np.float64)
    return generator_adversarial_loss(d_fake, saturating) + C * float(np.mean(log_clamped(1.0 - v)))


def vargan_generator_loss_grad(d_fake, v_fake, C: float = 1.0, saturating: bool = True):
    _check_c(C)
    v = np.asarray(v_fake, dtype=np.float64)
    gap = 1.0 - v
    g_v = np.where(gap > LOG_FLOOR, -C / (np.maximum(gap, LOG_FLOOR) * v.size), 0.0)
    return generator_adversarial_loss_grad(d_fake, saturating), g_v


# -- input plumbing ----------------------------------------------------------


def pack(batch: np.ndarray, m: int) -> np.ndarray:
    """Concatenate consecutive groups of ``m`` rows feature-wise."""
    batch = np.asarray(batch)
    if m < 1 or batch.shape[0] % m:
        raise ValueError(f"packing degree {m} must divide the batch size {batch.shape[0]}")
    return batch.reshape(batch.shape[0] // m, m * batch.shape[1])


def unpack(packed: np.ndarray, m: int) -> np.ndarray:
    packed = np.asarray(packed)
    return packed.reshape(packed.shape[0] * m, packed.shape[1] // m)


def minibatch_features(penultimate: np.ndarray) -> np.ndarray:
    """``(B, 1)`` mean exp(-L1 distance) from each row to the other rows."""
    if penultimate.shape[0] < 2:
        raise ValueError("minibatch features need at least 2 rows")
    return kernels.minibatch_forward(penultimate)[0][:, None]


def one_hot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def condition_concat(x: np.ndarray, labels, classes: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    if len(labels) != len(x):
        raise ShapeError(f"{len(labels)} labels for {len(x)} rows")
    return np.concatenate([x, one_hot(labels, classes)], axis=1)


# -- model bundle ------------------------------------------------------------


def _scaled(widths, multiplier):
    return [max(1, int(round(w * multiplier))) for w in widths]


@dataclass
class GanBundle:
    generator: Net
    discriminator: Net  # for ``minibatch`` this is the body up to the penultimate layer
    variant: str
    data_dim: int
    latent_dim: int
    batch_size: int
    packing: int = 1
    condition_classes: int | None = None
    varnet: Net | None = None
    discriminator_head: Net | None = None  # only for ``minibatch``
    optimizers: dict[str, AdamState] = field(default_factory=dict)

    def nets(self) -> dict[str, Net]:
        out = {"generator": self.generator, "discriminator": self.discriminator}
        if self.discriminator_head is not None:
            out["discriminator_head"] = self.discriminator_head
        if self.varnet is not None:
            out["varnet"] = self.varnet
        return out

    @property
    def has_varnet(self) -> bool:
        return self.varnet is not None

    @property
    def label_width(self) -> int:
        return self.condition_classes or 0


def build_bundle(
    variant: str,
    data_dim: int,
    latent_dim: int = 64,
    batch_size: int = 120,
    width: float = 1.0,
    packing: int | None = None,
    condition_classes: int | None = None,
    seed: int = 0,
    lr: float = 2e-4,
    betas: tuple[float, float] = (0.9, 0.999),
) -> GanBundle:
    """Feed-forward G, D (and V for VARGAN variants) with widths scaled by ``width``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if packing is None:
        packing = 4 if variant in ("pacgan", "pacvargan") else 1
    if variant not in ("pacgan", "pacvargan") and packing != 1:
        raise ValueError(f"variant {variant} does not pack its discriminator")
    if batch_size % packing:
        raise ValueError(f"packing {packing} must divide batch size {batch_size}")
    c = condition_classes or 0
    seeds = np.random.SeedSequence(seed).generate_state(4)

    g_sizes = [latent_dim + c] + _scaled(GENERATOR_WIDTHS, width) + [data_dim]
    generator = init_net(g_sizes, ["leaky_relu"] * 4 + ["sigmoid"], seed=int(seeds[0]))

    d_hidden = _scaled(DISCRIMINATOR_WIDTHS, width)
    d_in = packing * (data_dim + c)
    head = None
    if variant == "minibatch":
        discriminator = init_net([d_in] + d_hidden, ["leaky_relu"] * 3,
                                 list(DISCRIMINATOR_DROPOUT), seed=int(seeds[1]))
        head = init_net([d_hidden[-1] + 1, 1], ["sigmoid"], seed=int(seeds[2]))
    else:
        discriminator = init_net([d_in] + d_hidden + [1], ["leaky_relu"] * 3 + ["sigmoid"],
                                 list(DISCRIMINATOR_DROPOUT) + [0.0], seed=int(seeds[1]))

    varnet = None
    if variant in ("vargan", "pacvargan"):
        varnet = init_net([batch_size * data_dim] + d_hidden + [1],
                          ["leaky_relu"] * 3 + ["sigmoid"],
                          list(DISCRIMINATOR_DROPOUT) + [0.0], seed=int(seeds[3]))

    bundle = GanBundle(generator, discriminator, variant, data_dim, latent_dim, batch_size,
                       packing, condition_classes, varnet, head)
    for name, net in bundle.nets().items():
        bundle.optimizers[name] = AdamState.for_net(net, lr, *betas)
    return bundle


# -- composite forward/backward ----------------------------------------------


@dataclass
class _DCache:
    body: object
    head: object = None
    pen: np.ndarray | None = None
    kernel: np.ndarray | None = None
    rows: int = 0


def discriminator_forward(bundle: GanBundle, x: np.ndarray, labels=None, rng=None):
    """Per-packed-row probabilities ``(B/m,)`` and a cache for backprop."""
    inp = x
    if bundle.condition_classes:
        inp = condition_concat(x, labels, bundle.condition_classes)
    inp = pack(inp, bundle.packing)
    if bundle.discriminator_head is None:
        out, cache = forward(bundle.discriminator, inp, rng)
        return out[:, 0], _DCache(cache, rows=len(x))
    pen, body_cache = forward(bundle.discriminator, inp, rng)
    feats, kernel = kernels.minibatch_forward(pen)
    out, head_cache = forward(bundle.discriminator_head, np.concatenate([pen, feats[:, None]], axis=1), rng)
    return out[:, 0], _DCache(body_cache, head_cache, pen, kernel, len(x))


def discriminator_backward(bundle: GanBundle, cache: _DCache, grad: np.ndarray):
    """Returns ``({net_name: grads}, d_x)`` with ``d_x`` for the raw, unpacked,
    unconditioned input rows."""
    grad = np.asarray(grad, dtype=np.float64).reshape(-1, 1)
    grads = {}
    if cache.head is None:
        grads["discriminator"], d_in = backward(bundle.discriminator, cache.body, grad)
    else:
        grads["discriminator_head"], d_head_in = backward(bundle.discriminator_head, cache.head, grad)
        d_pen = d_head_in[:, :-1] + kernels.minibatch_backward(cache.pen, cache.kernel, d_head_in[:, -1])
        grads["discriminator"], d_in = backward(bundle.discriminator, cache.body, d_pen)
    d_in = unpack(d_in, bundle.packing)
    return grads, d_in[:, : bundle.data_dim]


def varnet_forward(bundle: GanBundle, batch: np.ndarray, rng=None):
    """Score a whole batch (``B`` rows packed into one) or a stack of them."""
    if bundle.varnet is None:
        raise ValueError(f"variant {bundle.variant} has no diversity net")
    batch = np.asarray(batch, dtype=np.float64)
    out, cache = forward(bundle.varnet, pack(batch, bundle.batch_size), rng)
    return out[:, 0], cache


def varnet_backward(bundle: GanBundle, cache, grad: np.ndarray):
    grads, d_in = backward(bundle.varnet, cache, np.asarray(grad, dtype=np.float64).reshape(-1, 1))
    return {"varnet": grads}, unpack(d_in, bundle.batch_size)


def generator_forward(bundle: GanBundle, z: np.ndarray, labels=None, rng=None):
    inp = z
    if bundle.condition_classes:
        inp = condition_concat(z, labels, bundle.condition_classes)
    return forward(bundle.generator, inp, rng)


def generator_backward(bundle: GanBundle, cache, grad: np.ndarray):
    grads, _ = backward(bundle.generator, cache, grad)
    return {"generator": grads}
