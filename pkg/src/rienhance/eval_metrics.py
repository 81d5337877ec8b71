"""Identification, verification and error-versus-reject metrics.

Threshold convention used throughout: a pair or probe is accepted when its
score is ``>= t``, and for a target false-accept rate ``f`` the threshold is
the smallest candidate ``t`` (observed scores plus ``+inf``) whose empirical
false-accept rate does not exceed ``f``. This is the most permissive
operating point that still honours the target.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyAfterRejection,
    InsufficientPairs,
    NoUnmatedProbes,
    UnmatedProbePresent,
)
from .recognizability import UNLABELED, skewness
from .tensor_core import cosine_matrix

FAR_TARGETS = (0.3, 0.1, 0.01, 0.001)
FPIR_TARGETS = (0.3, 0.2, 0.1)
DEFAULT_RANK = 20
DEFAULT_FMR = 1e-4
DEFAULT_REJECT_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class MatchSet:
    gallery: np.ndarray
    gallery_labels: np.ndarray
    probes: np.ndarray
    probe_labels: np.ndarray

    def __post_init__(self):
        self.gallery = np.atleast_2d(np.asarray(self.gallery, dtype=np.float64))
        self.probes = np.atleast_2d(np.asarray(self.probes, dtype=np.float64))
        self.gallery_labels = np.asarray(self.gallery_labels, dtype=np.int64)
        self.probe_labels = np.asarray(self.probe_labels, dtype=np.int64)
        if self.gallery.shape[0] == 0 or self.probes.shape[0] == 0:
            raise InsufficientPairs("gallery and probe sets must be non-empty")
        if self.gallery.shape[1] != self.probes.shape[1]:
            raise DimensionMismatch("gallery and probe dims differ")
        if self.gallery_labels.size != self.gallery.shape[0] or self.probe_labels.size != self.probes.shape[0]:
            raise DimensionMismatch("label count does not match vector count")

    def with_distractors(self, vectors, labels=None):
        vectors = np.atleast_2d(vectors)
        if labels is None:
            top = max(int(self.gallery_labels.max()), int(self.probe_labels.max()))
            labels = np.arange(top + 1, top + 1 + vectors.shape[0])
        return MatchSet(np.vstack([self.gallery, vectors]),
                        np.concatenate([self.gallery_labels, labels]),
                        self.probes, self.probe_labels)

    def scores(self):
        return cosine_matrix(self.probes, self.gallery)

    def mated_mask(self):
        return (self.probe_labels != UNLABELED) & np.isin(self.probe_labels, self.gallery_labels)


@dataclass
class EvalReport:
    rank1_ir: Optional[float] = None
    tpr_at_far: Dict[float, float] = field(default_factory=dict)
    tpir_at_fpir: Dict[float, float] = field(default_factory=dict)
    tpir_rank: int = DEFAULT_RANK
    erc: List[Tuple[float, float]] = field(default_factory=list)
    fmr_target: Optional[float] = None
    ri_stats: Optional[dict] = None

    def to_dict(self):
        return {
            "rank1_ir": self.rank1_ir,
            "tpr_at_far": [{"far": k, "tpr": v} for k, v in self.tpr_at_far.items()],
            "tpir_at_fpir": [{"fpir": k, "tpir": v} for k, v in self.tpir_at_fpir.items()],
            "tpir_rank": self.tpir_rank,
            "fmr_target": self.fmr_target,
            "erc": [{"reject_fraction": r, "fnmr": f} for r, f in self.erc],
            "ri_stats": self.ri_stats,
        }


def _threshold_at(neg_scores, candidates, target):
    """Smallest candidate threshold whose false-accept rate is <= target."""
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    cand = np.unique(np.append(np.asarray(candidates, dtype=np.float64), np.inf))
    # false accepts at t: count of neg >= t
    fa = neg.size - np.searchsorted(neg, cand, side="left")
    ok = fa / neg.size <= target
    return float(cand[np.argmax(ok)])


def rank1_ir(ms: MatchSet) -> float:
    mated = ms.mated_mask()
    if not mated.all():
        raise UnmatedProbePresent(f"{int((~mated).sum())} probes have no mated gallery identity")
    best = np.argmax(ms.scores(), axis=1)  # first index wins ties
    return float(np.mean(ms.gallery_labels[best] == ms.probe_labels))


def verification_sweep(pairs: Sequence, far_targets=FAR_TARGETS) -> Dict[float, float]:
    """TPR at each FAR target from ``(score, is_mated)`` pairs."""
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    s, mated = arr[:, 0], arr[:, 1].astype(bool)
    if mated.sum() == 0 or (~mated).sum() == 0:
        raise InsufficientPairs("need at least one mated and one non-mated pair")
    pos = s[mated]
    out = {}
    for f in far_targets:
        t = _threshold_at(s[~mated], s, f)
        out[float(f)] = float(np.mean(pos >= t))
    return out


def _identity_scores(scores, gallery_labels):
    """Per-identity max score and tie-break key (gallery index of that max)."""
    ids = np.unique(gallery_labels)
    n_p = scores.shape[0]
    best = np.full((n_p, ids.size), -np.inf)
    key = np.zeros((n_p, ids.size), dtype=np.int64)
    for k, lab in enumerate(ids):
        cols = np.flatnonzero(gallery_labels == lab)
        sub = scores[:, cols]
        j = np.argmax(sub, axis=1)
        best[:, k] = sub[np.arange(n_p), j]
        key[:, k] = cols[j]
    return ids, best, key


def true_identity_rank(scores, gallery_labels, probe_labels):
    """Rank (1-based) and score of each probe's true identity; rank 0 if absent."""
    ids, best, key = _identity_scores(scores, gallery_labels)
    n_p = scores.shape[0]
    ranks = np.zeros(n_p, dtype=np.int64)
    true_score = np.full(n_p, -np.inf)
    for i in range(n_p):
        hit = np.flatnonzero(ids == probe_labels[i])
        if hit.size == 0:
            continue
        k = hit[0]
        ts, tk = best[i, k], key[i, k]
        ahead = (best[i] > ts) | ((best[i] == ts) & (key[i] < tk))
        ranks[i] = 1 + int(ahead.sum())
        true_score[i] = ts
    return ranks, true_score


def open_set_identification(ms: MatchSet, rank=DEFAULT_RANK, fpir_targets=FPIR_TARGETS) -> Dict[float, float]:
    """TPIR at each FPIR target; mated probes must hit within ``rank`` and pass threshold."""
    mated = ms.mated_mask()
    if mated.all():
        raise NoUnmatedProbes("open-set identification needs unmated probes")
    scores = ms.scores()
    top = scores.max(axis=1)
    ranks, true_score = true_identity_rank(scores[mated], ms.gallery_labels, ms.probe_labels[mated])
    neg = top[~mated]
    cand = np.concatenate([neg, true_score])
    out = {}
    for f in fpir_targets:
        t = _threshold_at(neg, cand, f)
        if mated.any():
            out[float(f)] = float(np.mean((ranks >= 1) & (ranks <= rank) & (true_score >= t)))
        else:
            out[float(f)] = 0.0
    return out


def erc(pairs: Sequence, fmr_target=DEFAULT_FMR, reject_grid=DEFAULT_REJECT_GRID) -> List[Tuple[float, float]]:
    """FNMR after rejecting the lowest-quality fraction of pairs.

    ``pairs`` rows are ``(score, is_mated, quality_probe, quality_gallery)``.
    The decision threshold is set once from all pairs at ``fmr_target``. For
    a reject fraction ``r`` the cut-off quality is that of the pair at sorted
    position ``floor(r * n)``; pairs strictly below it are dropped, so tied
    qualities are kept or dropped together.
    """
    if not 0.0 < fmr_target < 1.0:
        raise ValueError("fmr_target must lie in (0, 1)")
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 4)
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores and qualities must be finite")
    s, mated = arr[:, 0], arr[:, 1].astype(bool)
    if mated.sum() == 0 or (~mated).sum() == 0:
        raise InsufficientPairs("need at least one mated and one non-mated pair")
    grid = [float(r) for r in reject_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 0 or grid[-1] >= 1:
        raise ValueError("reject grid must be strictly increasing within [0, 1)")
    q = np.minimum(arr[:, 2], arr[:, 3])
    t = _threshold_at(s[~mated], s, fmr_target)
    q_sorted = np.sort(q)
    n = q.size
    out = []
    for r in grid:
        k = int(math.floor(r * n + 1e-9))
        keep = np.ones(n, dtype=bool) if k == 0 else q >= q_sorted[min(k, n - 1)]
        m = mated & keep
        if not m.any():
            raise EmptyAfterRejection(f"no mated pairs left at reject fraction {r}")
        out.append((r, float(np.mean(s[m] < t))))
    return out


def all_pairs(scores, probe_labels, gallery_labels):
    """Flatten a probe x gallery score matrix into ``(score, is_mated)`` rows."""
    mated = probe_labels[:, None] == gallery_labels[None, :]
    mated &= probe_labels[:, None] != UNLABELED
    return np.column_stack([scores.ravel(), mated.ravel().astype(np.float64)])


def ri_statistics(values, bins=20):
    v = np.asarray(values, dtype=np.float64)
    counts, edges = np.histogram(v, bins=bins)
    try:
        skew = skewness(v)
    except (ValueError, ArithmeticError):
        skew = None
    return {"mean": float(v.mean()), "skewness": skew,
            "histogram": {"counts": counts.tolist(), "edges": edges.tolist()}}
