"""Alternating D -> V -> G optimization, periodic evaluation and checkpoints."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as datamod
from . import metrics as M
from . import zoo
from .data import Dataset, McrParams
from .nn import adam_from_dict, adam_step, adam_to_dict, net_from_dict, net_to_dict

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class TrainingAborted(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    dataset: str = "grid25"
    variant: str = "vargan"
    epochs: int = 50
    batch_size: int = 120
    latent_dim: int = 64
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    C: float = 1.0
    mcr_variant: str = "sigmoid"
    mcr_L: float = 1.0
    mcr_S1: float = 10.0
    mcr_S2: float = 5.0
    packing: int | None = None
    width: float = 1.0
    saturating: bool = True
    stable_varnet_loss: bool = False
    conditional: int | None = None
    seed: int = 0
    eval_every: int | None = None  # steps; None means once per epoch
    train_size: int = 100_000
    eval_size: int = 26_000
    d_steps: int = 1
    target_modes: int | None = None
    limited_pool: str = "dataset"  # or "batch"
    witness_modes: bool = True
    connectivity: int = 8
    balanced: bool = False  # equal class shares in conditional batches

    @property
    def mcr_params(self) -> McrParams:
        return McrParams(self.mcr_variant, self.mcr_L, self.mcr_S1, self.mcr_S2)

    @property
    def effective_packing(self) -> int:
        if self.packing is not None:
            return self.packing
        return 4 if self.variant in ("pacgan", "pacvargan") else 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        types = {f.name: f.type for f in dataclasses.fields(self)}
        for name, typ in types.items():
            val = getattr(self, name)
            if val is None and "None" in str(typ):
                continue
            if "bool" in str(typ):
                if not isinstance(val, bool):
                    bad(name, "expected true/false")
            elif "int" in str(typ) and "float" not in str(typ):
                if isinstance(val, bool) or not isinstance(val, int):
                    bad(name, "expected an integer")
            elif "float" in str(typ):
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    bad(name, "expected a number")
            elif "str" in str(typ) and not isinstance(val, str):
                bad(name, "expected a string")
        if self.variant not in zoo.VARIANTS:
            bad("variant", f"must be one of {zoo.VARIANTS}")
        if not (self.dataset.startswith(("ring", "grid", "binary"))):
            bad("dataset", "must be ringN, gridN or binaryS")
        if self.epochs < 1:
            bad("epochs", "must be >= 1")
        if self.batch_size < 2:
            bad("batch_size", "must be >= 2")
        if self.batch_size % self.effective_packing:
            bad("packing", f"must divide batch_size {self.batch_size}")
        if self.packing not in (None, 1) and self.variant not in ("pacgan", "pacvargan"):
            bad("packing", f"variant {self.variant} does not pack")
        if not 0 < self.C <= 1:
            bad("C", "must lie in (0, 1]")
        try:
            self.mcr_params
        except ValueError as exc:
            raise ConfigError(f"mcr: {exc}") from None
        if self.width <= 0:
            bad("width", "must be positive")
        if self.lr <= 0:
            bad("lr", "must be positive")
        if self.conditional is not None and self.conditional not in (2, 8):
            bad("conditional", "class count must be 2 or 8")
        if self.conditional and not self.dataset.startswith("binary"):
            bad("conditional", "conditioning needs a binary pattern dataset")
        if self.balanced and not self.conditional:
            bad("balanced", "class balancing needs a conditional run")
        if self.balanced and self.batch_size % self.conditional:
            bad("balanced", f"batch_size must split evenly over {self.conditional} classes")
        if self.train_size < self.batch_size:
            bad("train_size", f"must be at least batch_size {self.batch_size}")
        if self.eval_size < 1:
            bad("eval_size", "must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            bad("eval_every", "must be >= 1")
        if self.d_steps < 1:
            bad("d_steps", "must be >= 1")
        if self.limited_pool not in ("dataset", "batch"):
            bad("limited_pool", "must be 'dataset' or 'batch'")
        if self.connectivity not in (4, 8):
            bad("connectivity", "must be 4 or 8")
        if self.target_modes is not None and self.target_modes < 2:
            bad("target_modes", "must be >= 2")
        if self.variant in ("vargan", "pacvargan"):
            n_target = self.target_modes
            if n_target is None and not self.dataset.startswith("binary"):
                n_target = _mixture_modes(self.dataset)
            if n_target is not None and not datamod.mode_schedule(self.batch_size, n_target):
                bad("batch_size", "has no divisor below the target mode count")


def _mixture_modes(name: str) -> int:
    digits = name.lstrip("abcdefghijklmnopqrstuvwxyz")
    return int(digits) if digits else (8 if name.startswith("ring") else 25)


HISTORY_FIELDS = ("step", "epoch", "modes_covered", "kl", "high_quality_fraction",
                  "hp_unique", "lp_unique", "accuracy", "accuracy_hp", "accuracy_lp")


@dataclass
class RunHistory:
    records: list[dict] = field(default_factory=list)
    wall_seconds: float = 0.0
    generator_updates: int = 0
    checkpoint: str | None = None

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("history steps must increase")
        self.records.append(record)

    @property
    def final(self) -> dict:
        return self.records[-1] if self.records else {}

    def to_csv(self, path) -> None:
        """One row per evaluation; wall-clock times are left to the manifest."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_FIELDS)
            for rec in self.records:
                w.writerow([_fmt(rec.get(k)) for k in HISTORY_FIELDS])

    @classmethod
    def from_csv(cls, path) -> "RunHistory":
        hist = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rec = {}
                for k, v in row.items():
                    if v == "":
                        continue
                    rec[k] = int(v) if k in ("step", "epoch", "modes_covered", "hp_unique", "lp_unique") else float(v)
                hist.records.append(rec)
        return hist


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- the training loop -------------------------------------------------------


class Trainer:
    """Holds one run's data, bundle and random streams."""

    def __init__(self, config: TrainConfig, dataset: Dataset | None = None):
        config.validate()
        self.cfg = config
        self.ds = dataset or datamod.make_dataset(config.dataset, config.train_size,
                                                  seed=config.seed, batch_size=config.batch_size)
        if self.ds.pattern is not None and self.ds.pattern.connectivity != config.connectivity:
            self.ds.pattern = datamod.BinaryPatternSpec(self.ds.pattern.side,
                                                        connectivity=config.connectivity)
            hp = datamod.classify_images(self.ds.train.reshape(-1, self.ds.pattern.side,
                                                               self.ds.pattern.side),
                                         config.connectivity)
            self.ds.labels = np.where(hp, 0, 1)
        self.B = config.batch_size
        self.N = config.target_modes or self.ds.target_modes
        self.schedule = datamod.mode_schedule(self.B, self.N)
        self.class_labels = None
        if config.conditional:
            self.class_labels = _class_labels(self.ds, config.conditional)
        self.bundle = zoo.build_bundle(
            config.variant, self.ds.dim, config.latent_dim, self.B, config.width,
            config.packing, config.conditional, seed=config.seed, lr=config.lr,
            betas=(config.beta1, config.beta2),
        )
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        self.steps_per_epoch = len(self.ds.train) // self.B
        if self.steps_per_epoch < 1:
            raise ConfigError(f"train_size: fewer rows ({len(self.ds.train)}) than one batch")
        if self.ds.kind == "binary":
            self.reference_freq = np.bincount(self.ds.labels, minlength=2) / len(self.ds.labels)
        self.step = 0
        self.last_losses: dict[str, float] = {}

    # -- pieces of a step --

    def _labels_for(self, idx):
        return None if self.class_labels is None else self.class_labels[idx]

    def _fake_labels(self, count):
        if self.class_labels is None:
            return None
        if self.cfg.balanced:
            return self.rng.integers(0, self.cfg.conditional, size=count)
        return self.class_labels[self.rng.integers(0, len(self.class_labels), size=count)]

    def epoch_order(self) -> np.ndarray:
        """Row indices for one epoch, ``steps_per_epoch * B`` long."""
        n_rows = len(self.ds.train)
        if not self.cfg.balanced:
            return self.rng.permutation(n_rows)
        k = self.cfg.conditional
        per = self.B // k
        need = self.steps_per_epoch * per
        cols = []
        for c in range(k):
            members = np.flatnonzero(self.class_labels == c)
            if len(members) == 0:
                raise ConfigError(f"balanced: class {c} has no training rows")
            # cycle through shuffled copies so minority classes are oversampled
            reps = -(-need // len(members))
            cols.append(np.concatenate([self.rng.permutation(members) for _ in range(reps)])[:need])
        batches = np.stack(cols, axis=1).reshape(self.steps_per_epoch, self.B)
        for row in batches:
            self.rng.shuffle(row)
        return batches.reshape(-1)

    def _sample_z(self, count):
        return self.rng.standard_normal((count, self.cfg.latent_dim))

    def _apply(self, grads: dict) -> None:
        b = self.bundle
        for name, g in grads.items():
            adam_step(b.nets()[name], g, b.optimizers[name])

    def _check(self, name, value):
        if not math.isfinite(value):
            raise TrainingAborted(f"non-finite {name} at step {self.step}: {value}")
        self.last_losses[name] = value

    def d_step(self, real_idx) -> None:
        b, B = self.bundle, self.B
        real = self.ds.train[real_idx]
        fake_labels = self._fake_labels(B)
        fake, _ = zoo.generator_forward(b, self._sample_z(B), fake_labels, self.rng)
        d_real, c_real = zoo.discriminator_forward(b, real, self._labels_for(real_idx), self.rng)
        d_fake, c_fake = zoo.discriminator_forward(b, fake, fake_labels, self.rng)
        self._check("d_loss", zoo.discriminator_loss(d_real, d_fake))
        g_real, g_fake = zoo.discriminator_loss_grad(d_real, d_fake)
        grads_r, _ = zoo.discriminator_backward(b, c_real, g_real)
        grads_f, _ = zoo.discriminator_backward(b, c_fake, g_fake)
        self._apply(_sum_grads(grads_r, grads_f))

    def limited_batch(self, real_idx=None) -> datamod.LimitedModalityBatch:
        n = int(self.rng.choice(self.schedule))
        pool = self.ds.train if real_idx is None else self.ds.train[real_idx]
        return datamod.build_limited_batch(pool, n, self.B, self.N, self.cfg.mcr_params, self.rng)

    def v_step(self, real_idx) -> None:
        b = self.bundle
        lim = self.limited_batch(real_idx if self.cfg.limited_pool == "batch" else None)
        v_real, c_real = zoo.varnet_forward(b, self.ds.train[real_idx], self.rng)
        v_lim, c_lim = zoo.varnet_forward(b, lim.samples, self.rng)
        stable = self.cfg.stable_varnet_loss
        self._check("v_loss", zoo.varnet_loss(v_real, v_lim, lim.mcr_label, stable))
        g_real, g_lim = zoo.varnet_loss_grad(v_real, v_lim, lim.mcr_label, stable)
        grads_r, _ = zoo.varnet_backward(b, c_real, g_real)
        grads_l, _ = zoo.varnet_backward(b, c_lim, g_lim)
        self._apply(_sum_grads(grads_r, grads_l))

    def g_step(self) -> None:
        b, B, cfg = self.bundle, self.B, self.cfg
        labels = self._fake_labels(B)
        fake, g_cache = zoo.generator_forward(b, self._sample_z(B), labels, self.rng)
        d_fake, d_cache = zoo.discriminator_forward(b, fake, labels, self.rng)
        if b.has_varnet:
            v_fake, v_cache = zoo.varnet_forward(b, fake, self.rng)
            self._check("g_loss", zoo.vargan_generator_loss(d_fake, v_fake, cfg.C, cfg.saturating))
            self.last_losses["v_penalty"] = float(np.mean(zoo.log_clamped(1.0 - v_fake)))
            g_d, g_v = zoo.vargan_generator_loss_grad(d_fake, v_fake, cfg.C, cfg.saturating)
            _, dx = zoo.discriminator_backward(b, d_cache, g_d)
            _, dx_v = zoo.varnet_backward(b, v_cache, g_v)
            dx = dx + dx_v
        else:
            self._check("g_loss", zoo.generator_adversarial_loss(d_fake, cfg.saturating))
            g_d = zoo.generator_adversarial_loss_grad(d_fake, cfg.saturating)
            _, dx = zoo.discriminator_backward(b, d_cache, g_d)
        self._apply(zoo.generator_backward(b, g_cache, dx))

    def train_step(self, real_idx) -> None:
        self.d_step(real_idx)
        for _ in range(self.cfg.d_steps - 1):
            self.d_step(self.rng.choice(len(self.ds.train), size=self.B, replace=False))
        if self.bundle.has_varnet:
            self.v_step(real_idx)
        self.g_step()
        self.step += 1

    # -- evaluation --

    def generate(self, count: int, labels=None, seed=None) -> np.ndarray:
        """Eval-mode samples in the network's (0, 1) space."""
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((count, self.cfg.latent_dim))
        g = self.bundle.generator
        was = g.training
        g.training = False
        try:
            out, _ = zoo.generator_forward(self.bundle, z, labels)
        finally:
            g.training = was
        return out

    def evaluate(self, seed=None) -> dict:
        cfg = self.cfg
        seed = [cfg.seed, 2, self.step] if seed is None else seed
        if self.ds.kind == "mixture":
            x = self.ds.to_data_space(self.generate(cfg.eval_size, seed=seed))
            return M.mixture_metrics(x, self.ds.mixture, cfg.witness_modes).as_dict()
        if cfg.conditional:
            # equal share of requests per class
            requested = np.arange(cfg.eval_size) % cfg.conditional
            x = self.generate(cfg.eval_size, requested, seed=seed)
            coarse = _coarse(requested, cfg.conditional, self.ds)
            rec = M.binary_metrics(x, self.ds.pattern, np.bincount(coarse, minlength=2), coarse)
            if cfg.conditional > 2:
                fine = _class_labels_of(x, self.ds, cfg.conditional)
                rec.accuracy = float(np.mean(fine == requested))
            return rec.as_dict()
        x = self.generate(cfg.eval_size, seed=seed)
        return M.binary_metrics(x, self.ds.pattern, self.reference_freq).as_dict()


def _sum_grads(a: dict, b: dict) -> dict:
    out = {}
    for name in a:
        out[name] = [(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(a[name], b[name])]
    return out


# 8-way labels: HP split into 5 and LP into 3 bins of active-cell count
FINE_BINS = {"HP": 5, "LP": 3}


def _fine_edges(ds: Dataset) -> dict:
    if "fine_edges" not in ds.meta:
        active = ds.train.sum(axis=1)
        edges = {}
        for coarse, name in enumerate(("HP", "LP")):
            vals = active[ds.labels == coarse]
            qs = np.linspace(0, 1, FINE_BINS[name] + 1)[1:-1]
            edges[name] = np.quantile(vals, qs) if len(vals) else np.zeros(len(qs))
        ds.meta["fine_edges"] = edges
    return ds.meta["fine_edges"]


def _fine_labels(flat: np.ndarray, coarse: np.ndarray, ds: Dataset) -> np.ndarray:
    edges = _fine_edges(ds)
    active = (flat >= 0.5).sum(axis=1)
    hp_bin = np.searchsorted(edges["HP"], active, side="right")
    lp_bin = np.searchsorted(edges["LP"], active, side="right")
    return np.where(coarse == 0, hp_bin, FINE_BINS["HP"] + lp_bin)


def _class_labels(ds: Dataset, classes: int) -> np.ndarray:
    if classes == 2:
        return ds.labels
    return _fine_labels(ds.train, ds.labels, ds)


def _class_labels_of(x: np.ndarray, ds: Dataset, classes: int) -> np.ndarray:
    coarse = M.category_indices(x, ds.pattern)
    return coarse if classes == 2 else _fine_labels(x, coarse, ds)


def _coarse(labels: np.ndarray, classes: int, ds: Dataset) -> np.ndarray:
    if classes == 2:
        return labels
    return (labels >= FINE_BINS["HP"]).astype(np.int64)


def train(config: TrainConfig, dataset: Dataset | None = None, progress=None):
    """Run a full training job. Returns ``(RunHistory, GanBundle)``."""
    trainer = Trainer(config, dataset)
    cfg = trainer.cfg
    eval_every = cfg.eval_every or trainer.steps_per_epoch
    history = RunHistory()
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = trainer.epoch_order()
        for k in range(trainer.steps_per_epoch):
            trainer.train_step(order[k * trainer.B:(k + 1) * trainer.B])
            history.generator_updates += 1
            if trainer.step % eval_every == 0:
                rec = {"step": trainer.step, "epoch": epoch, **trainer.evaluate()}
                rec["wall_seconds"] = time.perf_counter() - start
                history.append(rec)
                if progress is not None:
                    progress(rec)
                log.info("step %d epoch %d %s", trainer.step, epoch, rec)
    history.wall_seconds = time.perf_counter() - start
    return history, trainer.bundle


# -- checkpoints -------------------------------------------------------------


def bundle_to_dict(bundle: zoo.GanBundle) -> dict:
    nets = {}
    for name, net in bundle.nets().items():
        d = net_to_dict(net)
        d["adam"] = adam_to_dict(bundle.optimizers[name])
        nets[name] = d
    return {
        "format_version": CHECKPOINT_FORMAT,
        "variant": bundle.variant,
        "data_dim": bundle.data_dim,
        "latent_dim": bundle.latent_dim,
        "batch_size": bundle.batch_size,
        "packing": bundle.packing,
        "condition_classes": bundle.condition_classes,
        "nets": nets,
    }


def bundle_from_dict(d: dict) -> zoo.GanBundle:
    if d.get("format_version") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {d.get('format_version')!r}")
    try:
        nets = {name: net_from_dict(nd) for name, nd in d["nets"].items()}
        bundle = zoo.GanBundle(
            nets["generator"], nets["discriminator"], d["variant"], d["data_dim"], d["latent_dim"],
            d["batch_size"], d["packing"], d["condition_classes"], nets.get("varnet"),
            nets.get("discriminator_head"),
        )
        for name, net in nets.items():
            bundle.optimizers[name] = adam_from_dict(d["nets"][name]["adam"], net)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if (bundle.varnet is not None) != (bundle.variant in ("vargan", "pacvargan")):
        raise CheckpointError("varnet section does not match the variant")
    c = bundle.condition_classes or 0
    if bundle.generator.fan_in != bundle.latent_dim + c or bundle.generator.fan_out != bundle.data_dim:
        raise CheckpointError("generator shape does not match the recorded dimensions")
    if bundle.discriminator.fan_in != bundle.packing * (bundle.data_dim + c):
        raise CheckpointError("discriminator shape does not match the recorded dimensions")
    if bundle.varnet is not None and bundle.varnet.fan_in != bundle.batch_size * bundle.data_dim:
        raise CheckpointError("varnet shape does not match the recorded dimensions")
    return bundle


def checkpoint(bundle: zoo.GanBundle, path) -> None:
    Path(path).write_text(json.dumps(bundle_to_dict(bundle)))


def restore(path) -> zoo.GanBundle:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    return bundle_from_dict(d)
