"""Dense float64 vector helpers and a central-difference gradient checker.

Vectors and matrices are plain ``numpy.ndarray`` objects with dtype float64.
The ``as_vector`` / ``as_matrix`` helpers validate shape and finiteness at
module boundaries; internal code works on arrays directly.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateVector, DimensionMismatch, NonFiniteEvaluation

NORM_FLOOR = 1e-12


def as_vector(values, name="vector") -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteEvaluation(f"{name} contains NaN or Inf")
    return v


def as_matrix(values, name="matrix") -> np.ndarray:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteEvaluation(f"{name} contains NaN or Inf")
    return m


def l2_normalize(v) -> np.ndarray:
    v = as_vector(v)
    n = np.linalg.norm(v)
    if n <= NORM_FLOOR:
        raise DegenerateVector(f"cannot normalize vector with norm {n:.3e}")
    return v / n


def normalize_rows(m) -> np.ndarray:
    """Row-wise L2 normalization of a 2-D array."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= NORM_FLOOR):
        bad = int(np.argmax(norms <= NORM_FLOOR))
        raise DegenerateVector(f"row {bad} has norm {norms[bad]:.3e}")
    return m / norms[:, None]


def cosine(a, b) -> float:
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise DimensionMismatch(f"dims differ: {a.size} vs {b.size}")
    c = float(np.dot(l2_normalize(a), l2_normalize(b)))
    return min(1.0, max(-1.0, c))


def cosine_matrix(a, b) -> np.ndarray:
    """All-pairs cosine similarity between the rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"dims differ: {a.shape[1]} vs {b.shape[1]}")
    return np.clip(normalize_rows(a) @ normalize_rows(b).T, -1.0, 1.0)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    passed: bool


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    analytic_grad,
    x,
    h: float = 1e-5,
    tol: float = 1e-4,
    abs_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare ``analytic_grad`` against central differences of ``f`` at ``x``.

    The per-coordinate error is ``|a - n| / max(|a|, |n|)``, except that
    discrepancies with ``|a - n| <= abs_floor`` count as zero. This keeps
    coordinates whose true gradient is 0 from failing on rounding noise.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64).ravel()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if g.shape != x.shape:
        raise DimensionMismatch(f"gradient has {g.size} entries, x has {x.size}")

    numeric = np.empty_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"f is not finite near coordinate {k}")
        numeric[k] = (fp - fm) / (2.0 * h)

    diff = np.abs(g - numeric)
    scale = np.maximum(np.abs(g), np.abs(numeric))
    rel = np.where(diff <= abs_floor, 0.0, diff / np.where(scale > 0, scale, 1.0))
    worst = int(np.argmax(rel))
    max_rel = float(rel[worst])
    return GradCheckReport(max_rel_error=max_rel, worst_index=worst, passed=max_rel < tol)
