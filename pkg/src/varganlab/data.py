"""Synthetic datasets: 2D Gaussian mixtures, 8-fold-symmetric binary patterns,
limited-modality batches and their mode coverage ratio (MCR) labels."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

MIXTURE_BOUNDS = (-1.5, 1.5)


@dataclass
class MixtureSpec:
    centers: np.ndarray  # (N, 2)
    std: float
    name: str = "mixture"

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.std <= 0:
            raise ValueError("std must be positive")
        if len(np.unique(self.centers, axis=0)) != len(self.centers):
            raise ValueError("centers must be pairwise distinct")

    @property
    def N(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def ring_spec(modes: int = 8) -> MixtureSpec:
    if modes < 2:
        raise ValueError("a ring needs at least 2 modes")
    i = np.arange(1, modes + 1)
    angle = 2 * np.pi * i / modes
    return MixtureSpec(np.stack([np.cos(angle), np.sin(angle)], axis=1), 0.01, f"ring{modes}")


def grid_spec(side: int = 5) -> MixtureSpec:
    if side < 2:
        raise ValueError("grid side must be at least 2")
    ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    centers = np.stack([-1 + 0.4 * ii.ravel(), -1 + 0.4 * jj.ravel()], axis=1)
    return MixtureSpec(centers, 0.05, f"grid{side * side}")


def sample_mixture(spec: MixtureSpec, count: int, seed=0, return_modes: bool = False):
    """Uniform mode choice followed by isotropic Gaussian noise."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    modes = rng.integers(0, spec.N, size=count)
    x = spec.centers[modes] + spec.std * rng.standard_normal((count, spec.dim))
    return (x, modes) if return_modes else x


def normalize(batch: np.ndarray, bounds=MIXTURE_BOUNDS) -> np.ndarray:
    lo, hi = bounds
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size and (batch.min() < lo or batch.max() > hi):
        raise ValueError(f"data outside declared bounds [{lo}, {hi}]")
    return (batch - lo) / (hi - lo)


def denormalize(batch: np.ndarray, bounds=MIXTURE_BOUNDS) -> np.ndarray:
    lo, hi = bounds
    return lo + np.asarray(batch, dtype=np.float64) * (hi - lo)


# -- mode coverage ratio -----------------------------------------------------

MCR_VARIANTS = ("linear", "sigmoid", "shifted_sigmoid")


@dataclass(frozen=True)
class McrParams:
    variant: str = "sigmoid"
    L: float = 1.0
    S1: float = 10.0
    S2: float = 5.0

    def __post_init__(self):
        if self.variant not in MCR_VARIANTS:
            raise ValueError(f"unknown MCR variant {self.variant!r}")
        if not 0 < self.L <= 1 or self.S1 <= 0 or self.S2 <= 0:
            raise ValueError("need L in (0, 1], S1 > 0, S2 > 0")


def mcr(n: int, N: int, params: McrParams = McrParams()) -> float:
    """Diversity label of a batch holding ``n`` of ``N`` target modes."""
    if n < 1 or n > N:
        raise ValueError(f"need 1 <= n <= N, got n={n}, N={N}")
    if n == 1:
        return 0.0
    if params.variant == "linear":
        return n / N
    if params.variant == "sigmoid":
        return params.L / (1.0 + params.S1 * math.exp(-(n / N) * params.S2))
    return params.L / (1.0 + params.S1 * math.exp(-((n - N) / N) * params.S2))


def divisors(B: int) -> list[int]:
    return [k for k in range(1, B + 1) if B % k == 0]


def mode_schedule(B: int, N: int) -> list[int]:
    """Admissible distinct-mode counts for limited batches: n | B and n < N."""
    return [k for k in divisors(B) if k < N]


@dataclass
class LimitedModalityBatch:
    samples: np.ndarray
    n: int
    mcr_label: float


def build_limited_batch(pool: np.ndarray, n: int, B: int, N: int,
                        params: McrParams = McrParams(), seed=0) -> LimitedModalityBatch:
    """Pick ``n`` pool rows, repeat each ``B/n`` times and shuffle."""
    if n < 1 or B % n:
        raise ValueError(f"n={n} must divide the batch size B={B}")
    if n >= N:
        raise ValueError(f"n={n} must be below the target mode count N={N}")
    if len(pool) < n:
        raise ValueError(f"pool has {len(pool)} rows, need at least {n}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=n, replace=False)
    rows = np.repeat(picks, B // n)
    rng.shuffle(rows)
    return LimitedModalityBatch(np.asarray(pool)[rows], n, mcr(n, N, params))


# -- 8-fold-symmetric binary patterns ----------------------------------------


@dataclass(frozen=True)
class BinaryPatternSpec:
    side: int = 9
    categories: tuple = ("HP", "LP")
    # 8-connectivity reproduces the 22,717 HP / 10,051 LP split of the 9x9 space
    connectivity: int = 8

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise ValueError("pattern side must be odd")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")

    @property
    def half(self) -> int:
        return self.side // 2

    @property
    def octant_bits(self) -> int:
        h = self.half + 1
        return h * (h + 1) // 2

    @property
    def dim(self) -> int:
        return self.side * self.side


def octant_cells(side: int) -> list[tuple[int, int]]:
    """Cells ``(i, j)`` with ``0 <= j <= i <= side // 2``, row-major."""
    half = side // 2
    return [(i, j) for i in range(half + 1) for j in range(i + 1)]


def _fold_index(side: int) -> np.ndarray:
    """For every image cell, the index of the octant bit that sets it."""
    cells = octant_cells(side)
    lookup = {c: k for k, c in enumerate(cells)}
    fold = np.minimum(np.arange(side), side - 1 - np.arange(side))
    idx = np.empty((side, side), dtype=np.int64)
    for r in range(side):
        for c in range(side):
            a, b = fold[r], fold[c]
            idx[r, c] = lookup[(max(a, b), min(a, b))]
    return idx


def octant_to_image(bits, side: int = 9) -> np.ndarray:
    """Reflect an octant bit vector into a ``side x side`` image with full
    dihedral symmetry. ``bits`` may also be a 2D array of bit vectors."""
    if side % 2 == 0:
        raise ValueError("pattern side must be odd")
    bits = np.asarray(bits, dtype=np.uint8)
    need = BinaryPatternSpec(side).octant_bits
    if bits.shape[-1] != need:
        raise ValueError(f"side {side} needs {need} octant bits, got {bits.shape[-1]}")
    return bits[..., _fold_index(side)]


def codes_to_bits(codes, n_bits: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n_bits)) & 1).astype(np.uint8)


def enumerate_designs(side: int = 9) -> np.ndarray:
    """Every symmetric design of the given side, ``(2**bits, side, side)``."""
    n_bits = BinaryPatternSpec(side).octant_bits
    if n_bits > 24:
        raise ValueError(f"side {side} has 2^{n_bits} designs; too many to enumerate")
    return octant_to_image(codes_to_bits(np.arange(2**n_bits), n_bits), side)


def sample_patterns(spec: BinaryPatternSpec, count: int, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(count, spec.octant_bits), dtype=np.uint8)
    return octant_to_image(bits, spec.side)


def dihedral_transforms(image: np.ndarray) -> list[np.ndarray]:
    """The 8 images obtained by rotations and reflections."""
    out = []
    for k in range(4):
        r = np.rot90(image, k)
        out.append(r)
        out.append(r.T)
    return out


def is_symmetric(image: np.ndarray) -> bool:
    return all(np.array_equal(t, image) for t in dihedral_transforms(image))


def classify_images(images: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Boolean HP flag per image (edge-to-edge connection of active cells)."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim == 2:
        images = images[None]
    return kernels.classify_images(images, connectivity == 8).astype(bool)


def classify_pattern(image: np.ndarray, connectivity: int = 8) -> str:
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError("expected a square binary image")
    return "HP" if classify_images(image, connectivity)[0] else "LP"


# -- dataset descriptors -----------------------------------------------------


@dataclass
class Dataset:
    """Training data in the network's (0, 1) space plus what the metrics need."""

    name: str
    train: np.ndarray
    kind: str  # "mixture" | "binary"
    mixture: MixtureSpec | None = None
    pattern: BinaryPatternSpec | None = None
    labels: np.ndarray | None = None  # category index per training row
    target_modes: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.train.shape[1]

    def to_data_space(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "mixture":
            return denormalize(x)
        return x


def make_dataset(name: str, train_size: int, seed: int = 0, batch_size: int = 120) -> Dataset:
    """``ring8``, ``grid25``, ``grid36``, or ``binary<side>`` (e.g. ``binary9``).

    Binary datasets of enumerable size use the whole design space and ignore
    ``train_size``; larger sides draw ``train_size`` random designs.
    """
    if name.startswith("ring"):
        spec = ring_spec(int(name[4:] or 8))
    elif name.startswith("grid"):
        modes = int(name[4:] or 25)
        side = math.isqrt(modes)
        if side * side != modes:
            raise ValueError(f"grid mode count must be a square: {modes}")
        spec = grid_spec(side)
    elif name.startswith("binary"):
        pattern = BinaryPatternSpec(int(name[6:] or 9))
        if pattern.octant_bits <= 20:
            images = enumerate_designs(pattern.side)
        else:
            images = sample_patterns(pattern, train_size, seed)
        hp = classify_images(images, pattern.connectivity)
        flat = images.reshape(len(images), -1).astype(np.float64)
        # full diversity is one distinct design per batch row
        return Dataset(name, flat, "binary", pattern=pattern,
                       labels=np.where(hp, 0, 1), target_modes=batch_size)
    else:
        raise ValueError(f"unknown dataset {name!r}")
    x = sample_mixture(spec, train_size, seed)
    return Dataset(name, normalize(np.clip(x, *MIXTURE_BOUNDS)), "mixture",
                   mixture=spec, target_modes=spec.N)


def dump_dataset(path, samples: np.ndarray, spec: dict, seed: int) -> None:
    """CSV with header, one sample per row, plus a ``.json`` sidecar."""
    path = Path(path)
    samples = np.asarray(samples)
    if samples.ndim == 3:
        samples = samples.reshape(len(samples), -1)
    if samples.shape[1] == 2:
        header = ["x", "y"]
    else:
        header = [f"p{k}" for k in range(samples.shape[1])]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        integral = np.issubdtype(samples.dtype, np.integer)
        for row in samples:
            writer.writerow([int(v) for v in row] if integral else [repr(float(v)) for v in row])
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"spec": spec, "seed": seed, "rows": len(samples)}, indent=2))
