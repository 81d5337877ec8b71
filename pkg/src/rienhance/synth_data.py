"""Seeded toy world: identity clusters on a sphere plus an unrecognizable cloud.

Easy instances scatter around their class direction. Hard instances start
from a point interpolated toward a shared UI direction and scatter more,
so they sit between their class and the UI cloud before any training.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, InfeasibleSeparation
from .recognizability import UNLABELED

SPLITS = ("train", "gallery", "probe")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 8
    dim: int = 32
    instances_per_class: int = 50
    hard_fraction: float = 0.8
    hard_class_ids: Tuple[int, ...] = (1, 4, 6)
    ui_count: int = 200
    noise_easy: float = 0.25
    noise_hard: float = 0.45
    noise_ui: float = 0.3
    ui_pull: float = 0.6
    min_angle_deg: float = 60.0
    split_fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    max_retries: int = 10000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hard_class_ids", tuple(int(c) for c in self.hard_class_ids))
        object.__setattr__(self, "split_fractions", tuple(float(x) for x in self.split_fractions))
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if self.instances_per_class < 3:
            raise ConfigError("need at least 3 instances per class to fill three splits")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ConfigError("hard_fraction must lie in [0, 1]")
        if any(not 0 <= c < self.num_classes for c in self.hard_class_ids):
            raise ConfigError("hard_class_ids must lie in [0, num_classes)")
        if not 0.0 <= self.ui_pull <= 1.0:
            raise ConfigError("ui_pull must lie in [0, 1]")
        if self.ui_count < 1:
            raise ConfigError("ui_count must be positive")
        if min(self.noise_easy, self.noise_hard, self.noise_ui) < 0:
            raise ConfigError("noise scales must be non-negative")
        if len(self.split_fractions) != 3 or min(self.split_fractions) <= 0:
            raise ConfigError("split_fractions needs three positive entries")

    def to_dict(self):
        d = asdict(self)
        d["hard_class_ids"] = list(self.hard_class_ids)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SynthDataset:
    ids: np.ndarray          # (n,) str
    inputs: np.ndarray       # (n, dim)
    labels: np.ndarray       # (n,) int
    is_hard: np.ndarray      # (n,) bool
    split: np.ndarray        # (n,) str, one of SPLITS
    ui_ids: np.ndarray
    ui_inputs: np.ndarray
    class_directions: Optional[np.ndarray] = field(default=None, repr=False)
    ui_direction: Optional[np.ndarray] = field(default=None, repr=False)

    def subset(self, split):
        m = self.split == split
        return self.ids[m], self.inputs[m], self.labels[m], self.is_hard[m]

    def summary(self):
        counts = {s: int(np.sum(self.split == s)) for s in SPLITS}
        return {
            "labeled": int(self.labels.size),
            "ui": int(self.ui_inputs.shape[0]),
            "classes": int(np.unique(self.labels).size),
            "hard": int(self.is_hard.sum()),
            "hard_fraction": float(self.is_hard.mean()),
            **counts,
        }


def _tangent_perturb(rng, base, scale, n):
    """``n`` unit vectors scattered around unit ``base``; tangent noise of norm ~``scale``."""
    d = base.size
    z = rng.normal(0.0, scale / np.sqrt(max(d - 1, 1)), (n, d))
    z -= np.outer(z @ base, base)
    x = base + z
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _separated_directions(rng, count, dim, min_angle_deg, max_retries):
    max_cos = np.cos(np.deg2rad(min_angle_deg))
    chosen = []
    tries = 0
    while len(chosen) < count:
        if tries >= max_retries:
            raise InfeasibleSeparation(
                f"placed {len(chosen)} of {count} directions at >= {min_angle_deg} deg in {dim} dims")
        tries += 1
        u = rng.normal(size=dim)
        u /= np.linalg.norm(u)
        if all(np.dot(u, c) <= max_cos for c in chosen):
            chosen.append(u)
    return np.array(chosen)


def generate(cfg: SynthConfig) -> SynthDataset:
    rng = np.random.default_rng(cfg.seed)
    # last direction is the UI direction
    dirs = _separated_directions(rng, cfg.num_classes + 1, cfg.dim, cfg.min_angle_deg, cfg.max_retries)
    class_dirs, ui_dir = dirs[:-1], dirs[-1]

    n = cfg.instances_per_class
    fr = np.asarray(cfg.split_fractions) / np.sum(cfg.split_fractions)
    n_train = max(1, int(round(fr[0] * n)))
    n_gallery = max(1, int(round(fr[1] * n)))
    if n_train + n_gallery >= n:
        raise ConfigError("split fractions leave no probe instances")
    split_pattern = np.array(["train"] * n_train + ["gallery"] * n_gallery
                             + ["probe"] * (n - n_train - n_gallery))
    n_hard = int(round(cfg.hard_fraction * n))
    hard_set = set(cfg.hard_class_ids)

    ids, inputs, labels, hard, split = [], [], [], [], []
    for c in range(cfg.num_classes):
        is_hard = np.zeros(n, dtype=bool)
        if c in hard_set:
            is_hard[rng.permutation(n)[:n_hard]] = True
        easy_x = _tangent_perturb(rng, class_dirs[c], cfg.noise_easy, n)
        base = (1.0 - cfg.ui_pull) * class_dirs[c] + cfg.ui_pull * ui_dir
        base /= np.linalg.norm(base)
        hard_x = _tangent_perturb(rng, base, cfg.noise_hard, n)
        x = np.where(is_hard[:, None], hard_x, easy_x)
        order = rng.permutation(n)
        ids.extend(f"c{c}_{k:03d}" for k in range(n))
        inputs.append(x)
        labels.append(np.full(n, c))
        hard.append(is_hard)
        split.append(split_pattern[order])

    ui_x = _tangent_perturb(rng, ui_dir, cfg.noise_ui, cfg.ui_count)
    return SynthDataset(
        ids=np.array(ids),
        inputs=np.vstack(inputs),
        labels=np.concatenate(labels).astype(np.int64),
        is_hard=np.concatenate(hard),
        split=np.concatenate(split),
        ui_ids=np.array([f"ui_{k:04d}" for k in range(cfg.ui_count)]),
        ui_inputs=ui_x,
        class_directions=class_dirs,
        ui_direction=ui_dir,
    )


def ui_labels(ds: SynthDataset):
    return np.full(ds.ui_inputs.shape[0], UNLABELED, dtype=np.int64)
