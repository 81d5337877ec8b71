"""Proximity triples, the recognizability index and the UI-cluster model."""

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import (
    DegenerateCenter,
    DimensionMismatch,
    EmptyUISet,
    IndexOutOfRange,
    InsufficientData,
    InsufficientVariance,
    InvalidEpsilon,
    ZeroVariance,
)
from .tensor_core import NORM_FLOOR, as_matrix, as_vector, l2_normalize, normalize_rows

DEFAULT_EPSILON = 1e-7
DEFAULT_UI_SAMPLES = 5000
UNLABELED = -1


class UIMode(str, Enum):
    STANDARD_NORMAL = "StandardNormal"
    EMPIRICAL = "Empirical"


class PrototypeSet:
    """One unit prototype per class, stored as the rows of a (C, d) array."""

    def __init__(self, prototypes, normalize=False):
        w = as_matrix(prototypes, "prototypes")
        if w.shape[0] < 2:
            raise DimensionMismatch("a prototype set needs at least 2 classes")
        if normalize:
            w = normalize_rows(w)
        elif np.max(np.abs(np.linalg.norm(w, axis=1) - 1.0)) > 1e-9:
            raise ValueError("prototypes must have unit norm (pass normalize=True)")
        self.vectors = w

    @property
    def num_classes(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class ProximityTriple:
    d_pos: float
    d_neg: float
    d_ui: float

    def as_tuple(self):
        return (self.d_pos, self.d_neg, self.d_ui)


@dataclass(frozen=True)
class UIClusterModel:
    center: np.ndarray
    mu_ui: float = 0.0
    sigma_ui: float = 1.0
    mode: UIMode = UIMode.STANDARD_NORMAL
    sample_count: int = DEFAULT_UI_SAMPLES
    seed: Optional[int] = None

    def __post_init__(self):
        c = as_vector(self.center, "center")
        if abs(np.linalg.norm(c) - 1.0) > 1e-9:
            raise ValueError("UI center must have unit norm")
        if not self.sigma_ui > 0:
            raise InsufficientVariance(f"sigma_ui must be positive, got {self.sigma_ui}")
        mode = UIMode(self.mode)
        if mode is UIMode.STANDARD_NORMAL and (self.mu_ui != 0.0 or self.sigma_ui != 1.0):
            raise ValueError("StandardNormal mode requires mu_ui=0 and sigma_ui=1")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "mode", mode)

    @property
    def dim(self):
        return self.center.size

    def to_dict(self):
        return {
            "dim": int(self.dim),
            "center": [float(x) for x in self.center],
            "mu_ui": float(self.mu_ui),
            "sigma_ui": float(self.sigma_ui),
            "mode": self.mode.value,
            "K": int(self.sample_count),
        }

    @classmethod
    def from_dict(cls, d):
        center = np.asarray(d["center"], dtype=np.float64)
        if center.size != d["dim"]:
            raise DimensionMismatch(f"center has {center.size} entries, dim says {d['dim']}")
        return cls(center=center, mu_ui=float(d["mu_ui"]), sigma_ui=float(d["sigma_ui"]),
                   mode=UIMode(d["mode"]), sample_count=int(d["K"]))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class RecognizabilityRecord:
    instance_id: str
    xi_hat: float
    label: int = UNLABELED
    triple: Optional[ProximityTriple] = None
    xi: Optional[float] = None


def proximity_triple(v, prototypes: PrototypeSet, target: int, ui: UIClusterModel) -> ProximityTriple:
    v = as_vector(v, "v")
    if v.size != prototypes.dim or v.size != ui.dim:
        raise DimensionMismatch(f"embedding dim {v.size}, prototypes {prototypes.dim}, UI {ui.dim}")
    if not 0 <= target < prototypes.num_classes:
        raise IndexOutOfRange(f"target {target} outside [0, {prototypes.num_classes})")
    vhat = l2_normalize(v)
    t, _ = kernels.proximity_batch(vhat[None, :], prototypes.vectors,
                                   np.array([target], dtype=np.int64), ui.center)
    return ProximityTriple(float(t[0, 0]), float(t[0, 1]), float(t[0, 2]))


def proximity_triples(vhat, prototypes, targets, center):
    """Batched triples for row-normalized embeddings; returns an (n, 3) array."""
    targets = np.asarray(targets, dtype=np.int64)
    if np.any((targets < 0) | (targets >= prototypes.shape[0])):
        raise IndexOutOfRange("target outside prototype range")
    triples, _ = kernels.proximity_batch(vhat, prototypes, targets, center)
    return triples


def recognizability_index(t, epsilon: float = DEFAULT_EPSILON) -> float:
    if not epsilon > 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon}")
    d_pos, d_neg, d_ui = t.as_tuple() if isinstance(t, ProximityTriple) else t
    return d_ui * d_neg / (d_pos + epsilon)


def recognizability_indices(triples, epsilon=DEFAULT_EPSILON):
    if not epsilon > 0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon}")
    triples = np.asarray(triples, dtype=np.float64)
    return triples[:, 2] * triples[:, 1] / (triples[:, 0] + epsilon)


def ui_center(ui_embeddings) -> np.ndarray:
    """Normalized mean of the normalized UI embeddings."""
    if len(ui_embeddings) == 0:
        raise EmptyUISet("no UI embeddings supplied")
    e = normalize_rows(as_matrix(ui_embeddings, "ui_embeddings"))
    mean = e.mean(axis=0)
    n = np.linalg.norm(mean)
    if n <= NORM_FLOOR:
        raise DegenerateCenter(f"mean UI embedding has norm {n:.3e}")
    return mean / n


def fit_ui_cluster(
    ui_embeddings: Sequence,
    mode=UIMode.STANDARD_NORMAL,
    K: int = DEFAULT_UI_SAMPLES,
    ri_source: Optional[Callable[[np.ndarray], float]] = None,
    seed: int = 0,
    ri_values=None,
) -> UIClusterModel:
    """Fit the UI center and, in empirical mode, the Gaussian over UI RI values.

    Empirical mode draws ``K`` UI embeddings uniformly (with replacement only
    when ``K`` exceeds the set size), scores each with ``ri_source`` and uses
    the sample mean and the unbiased standard deviation. ``ri_values`` may
    replace ``ri_source`` when the per-UI RI is already known (one value per
    row of ``ui_embeddings``).
    """
    mode = UIMode(mode)
    if K < 1:
        raise ValueError("K must be positive")
    center = ui_center(ui_embeddings)
    if mode is UIMode.STANDARD_NORMAL:
        return UIClusterModel(center=center, sample_count=K, seed=seed)

    if ri_source is None and ri_values is None:
        raise ValueError("empirical mode needs ri_source or ri_values")
    if K < 2:
        raise InsufficientVariance("empirical mode needs K >= 2")
    e = np.asarray(ui_embeddings, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(e), size=K, replace=K > len(e))
    if ri_values is not None:
        s = np.asarray(ri_values, dtype=np.float64)[idx]
    else:
        s = np.array([float(ri_source(e[i])) for i in idx])
    mu = float(s.mean())
    sigma = float(math.sqrt(np.sum((s - mu) ** 2) / (K - 1)))
    if sigma <= 1e-12:
        raise InsufficientVariance(f"UI RI spread {sigma:.3e} too small")
    return UIClusterModel(center=center, mu_ui=mu, sigma_ui=sigma, mode=mode,
                          sample_count=K, seed=seed)


def skewness(values) -> float:
    """Adjusted Fisher-Pearson sample skewness (G1)."""
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    if n < 3:
        raise InsufficientData(f"skewness needs at least 3 values, got {n}")
    if np.std(x, ddof=1) <= 0:
        raise ZeroVariance("all values are equal")
    dev = x - x.mean()
    m2 = np.mean(dev ** 2)
    m3 = np.mean(dev ** 3)
    g1 = m3 / m2 ** 1.5
    return float(g1 * math.sqrt(n * (n - 1)) / (n - 2))


def minmax_normalize(values) -> np.ndarray:
    """Rescale to [0, 1] for display only; never used in training."""
    x = np.asarray(values, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)
