"""Training losses with analytic gradients.

Batch functions take row-stacked inputs and return the batch mean together
with gradients of that mean. Single-instance wrappers keep the per-example
call shape used in tests and in the gradient checker.
"""

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, NamedTuple

import numpy as np

from .errors import ConfigError, DimensionMismatch, IndexOutOfRange, NonFiniteEvaluation
from .recognizability import DEFAULT_EPSILON, PrototypeSet, UIClusterModel


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = DEFAULT_EPSILON
    beta_smooth: float = 0.75
    tau: float = 3.0
    weight_l1: float = 5.0
    weight_id: float = 2.0
    weight_mse: float = 1.0
    arc_scale: float = 64.0
    arc_margin: float = 0.45

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not self.beta_smooth > 0:
            raise ConfigError("beta_smooth must be positive")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if min(self.weight_l1, self.weight_id, self.weight_mse) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not self.arc_scale > 0:
            raise ConfigError("arc_scale must be positive")
        if not 0 <= self.arc_margin < math.pi / 2:
            raise ConfigError("arc_margin must lie in [0, pi/2)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def baseline(self):
        """Same config with every auxiliary weight zeroed (ArcFace only)."""
        return LossConfig(**{**asdict(self), "weight_l1": 0.0, "weight_id": 0.0, "weight_mse": 0.0})


@dataclass
class LossBundle:
    l_cls: float
    l_l1: float
    l_id: float
    l_mse: float
    l_total: float
    gradients: Dict[str, np.ndarray] = field(default_factory=dict)

    def values(self):
        return (self.l_cls, self.l_l1, self.l_id, self.l_mse, self.l_total)


class ArcFaceResult(NamedTuple):
    loss: float
    grad_v: np.ndarray
    grad_prototypes: np.ndarray
    margin_fallback: int


def _target_margin(ct, m):
    """cos(theta + m) and its derivative in cos(theta), with easy-margin fallback."""
    sin_t = np.sqrt(np.clip(1.0 - ct * ct, 0.0, None))
    fallback = ct < math.cos(math.pi - m)
    phi = ct * math.cos(m) - sin_t * math.sin(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        dphi = math.cos(m) + np.where(sin_t > 0, ct * math.sin(m) / sin_t, 0.0)
    phi = np.where(fallback, ct - m * math.sin(m), phi)
    dphi = np.where(fallback, 1.0, dphi)
    return phi, dphi, fallback


def arcface_logits(vhat, prototypes, targets, s, m):
    vhat = np.atleast_2d(vhat)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    rows = np.arange(vhat.shape[0])
    cos = np.clip(vhat @ prototypes.T, -1.0, 1.0)
    phi, _, _ = _target_margin(cos[rows, targets], m)
    z = s * cos
    z[rows, targets] = s * phi
    return z


def arcface_batch(vhat, prototypes, targets, s, m):
    """Mean ArcFace cross-entropy over a batch.

    ``vhat`` is (B, d), ``prototypes`` (C, d). Cosines are taken as plain dot
    products, so gradients are with respect to the unit vectors themselves.
    Returns ``(loss, grad_vhat, grad_prototypes, n_fallback)``.
    """
    vhat = np.atleast_2d(np.asarray(vhat, dtype=np.float64))
    w = np.asarray(prototypes, dtype=np.float64)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    b, d = vhat.shape
    if w.shape[1] != d:
        raise DimensionMismatch(f"embedding dim {d} vs prototype dim {w.shape[1]}")
    if np.any((targets < 0) | (targets >= w.shape[0])):
        raise IndexOutOfRange("target outside prototype range")
    rows = np.arange(b)

    cos = np.clip(vhat @ w.T, -1.0, 1.0)
    phi, dphi, fallback = _target_margin(cos[rows, targets], m)
    z = s * cos
    z[rows, targets] = s * phi
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    total = ez.sum(axis=1, keepdims=True)
    p = ez / total
    losses = (np.log(total[:, 0]) + zmax[:, 0]) - z[rows, targets]

    g = s * p
    g[rows, targets] = s * (p[rows, targets] - 1.0) * dphi
    g /= b
    return float(losses.mean()), g @ w, g.T @ vhat, int(np.sum(fallback))


def arcface_loss(vhat, prototypes, target, s=64.0, m=0.45) -> ArcFaceResult:
    w = prototypes.vectors if isinstance(prototypes, PrototypeSet) else prototypes
    loss, gv, gw, fb = arcface_batch(np.asarray(vhat)[None, :], w, [target], s, m)
    return ArcFaceResult(loss, gv[0], gw, fb)


def smooth_l1(xi, xi_hat, beta_smooth=0.75):
    """Smooth-L1 regression loss and its derivative in ``xi_hat`` (elementwise)."""
    if not beta_smooth > 0:
        raise ConfigError("beta_smooth must be positive")
    err = np.asarray(xi_hat, dtype=np.float64) - np.asarray(xi, dtype=np.float64)
    a = np.abs(err)
    quad = a < beta_smooth
    loss = np.where(quad, 0.5 * err * err / beta_smooth, a - 0.5 * beta_smooth)
    grad = np.where(quad, err / beta_smooth, np.sign(err))
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def index_diversion_loss(xi_hat, ui, tau=3.0):
    """Hinge ``max(0, tau - (xi_hat - mu)/sigma)`` and its derivative.

    ``ui`` is a UIClusterModel or a ``(mu, sigma)`` pair. The subgradient at
    the hinge boundary is taken as 0.
    """
    mu, sigma = (ui.mu_ui, ui.sigma_ui) if isinstance(ui, UIClusterModel) else ui
    div = (np.asarray(xi_hat, dtype=np.float64) - mu) / sigma
    active = div < tau
    loss = np.where(active, tau - div, 0.0)
    grad = np.where(active, -1.0 / sigma, 0.0)
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def ri_surrogate_grad(vhat, prototypes, targets, neg_index, center, epsilon=DEFAULT_EPSILON):
    """RI of unit embeddings and its gradients in the embedding and prototypes.

    With ``d_* = 1 - <vhat, .>`` and RI ``= d_ui * d_neg / (d_pos + eps)``,
    returns ``(xi, d_xi/d_vhat, d_xi/d_w_target, d_xi/d_w_neg)`` row-wise.
    ``neg_index`` is held fixed (the max over negatives is piecewise smooth);
    the UI center is a constant.
    """
    vhat = np.atleast_2d(vhat)
    w_t = prototypes[np.asarray(targets)]
    w_n = prototypes[np.asarray(neg_index)]
    d_pos = 1.0 - np.sum(vhat * w_t, axis=1)
    d_neg = 1.0 - np.sum(vhat * w_n, axis=1)
    d_ui = 1.0 - vhat @ center
    inv = 1.0 / (d_pos + epsilon)
    xi = d_ui * d_neg * inv
    # partials of xi in (d_pos, d_neg, d_ui); each d_* has gradient -<other vector>
    p_pos = -xi * inv
    p_neg = d_ui * inv
    p_ui = d_neg * inv
    g_v = -(p_pos[:, None] * w_t + p_neg[:, None] * w_n + p_ui[:, None] * center[None, :])
    g_wt = -p_pos[:, None] * vhat
    g_wn = -p_neg[:, None] * vhat
    return xi, g_v, g_wt, g_wn


def ui_projection(v, ui_center):
    """Remove the UI-center component from ``v`` (rows of ``v`` if 2-D)."""
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(ui_center, dtype=np.float64)
    if v.shape[-1] != c.shape[-1]:
        raise DimensionMismatch(f"embedding dim {v.shape[-1]} vs center dim {c.shape[-1]}")
    return v - (v @ c)[..., None] * c


def projection_mse(v_prime, v_attn):
    """Mean over batch and components of ``(v_prime - v_attn)**2``.

    ``v_prime`` is a constant target; only the gradient in ``v_attn`` is returned.
    """
    vp = np.asarray(v_prime, dtype=np.float64)
    va = np.asarray(v_attn, dtype=np.float64)
    if vp.shape != va.shape:
        raise DimensionMismatch(f"shapes differ: {vp.shape} vs {va.shape}")
    diff = va - vp
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def total_loss(l_cls, l_l1, l_id, l_mse, cfg: LossConfig) -> float:
    parts = (l_cls, l_l1, l_id, l_mse)
    if not all(math.isfinite(x) for x in parts):
        raise NonFiniteEvaluation(f"non-finite loss component in {parts}")
    return l_cls + cfg.weight_l1 * l_l1 + cfg.weight_id * l_id + cfg.weight_mse * l_mse
