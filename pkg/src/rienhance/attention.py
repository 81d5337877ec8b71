"""Channel-then-spatial attention over small feature maps, plus a linear head.

Feature maps are arrays of shape (c, h, w) or batches (B, c, h, w). Every
forward function has a matching backward that consumes the cache it
returned; the trainer chains them by hand.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeMismatch


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class AttentionParams:
    mlp_in: np.ndarray       # (c // r, c)
    mlp_out: np.ndarray      # (c, c // r)
    kernel: np.ndarray       # (2, k, k) over [channel-mean, channel-max]
    kernel_bias: np.ndarray  # (1,)
    head_w: np.ndarray       # (d, c * h * w)
    head_b: np.ndarray       # (d,)

    NAMES = ("mlp_in", "mlp_out", "kernel", "kernel_bias", "head_w", "head_b")

    @classmethod
    def init(cls, rng, channels=16, height=4, width=4, dim=32, reduction=4, kernel_size=3):
        if channels % reduction:
            raise ShapeMismatch(f"reduction {reduction} must divide channels {channels}")
        if kernel_size % 2 == 0:
            raise ShapeMismatch("kernel size must be odd for same padding")
        hidden = channels // reduction
        flat = channels * height * width
        return cls(
            mlp_in=rng.normal(0.0, 1.0 / np.sqrt(channels), (hidden, channels)),
            mlp_out=rng.normal(0.0, 1.0 / np.sqrt(hidden), (channels, hidden)),
            kernel=rng.normal(0.0, 1.0 / np.sqrt(2 * kernel_size ** 2), (2, kernel_size, kernel_size)),
            kernel_bias=np.zeros(1),
            head_w=rng.normal(0.0, 1.0 / np.sqrt(flat), (dim, flat)),
            head_b=np.zeros(dim),
        )

    @classmethod
    def zeros_like(cls, other):
        return cls(**{n: np.zeros_like(getattr(other, n)) for n in cls.NAMES})

    def arrays(self):
        return {n: getattr(self, n) for n in self.NAMES}

    @property
    def channels(self):
        return self.mlp_in.shape[1]

    @property
    def dim(self):
        return self.head_w.shape[0]

    def to_dict(self):
        return {n: getattr(self, n).tolist() for n in self.NAMES}

    @classmethod
    def from_dict(cls, d):
        return cls(**{n: np.asarray(d[n], dtype=np.float64) for n in cls.NAMES})


def _batched(f):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 3:
        return f[None], True
    if f.ndim != 4:
        raise ShapeMismatch(f"feature map must be (c,h,w) or (B,c,h,w), got {f.shape}")
    return f, False


def _check_channels(f, params):
    if f.shape[1] != params.channels:
        raise ShapeMismatch(f"feature map has {f.shape[1]} channels, params expect {params.channels}")


def channel_forward(f, params):
    b, c, h, w = f.shape
    flat = f.reshape(b, c, h * w)
    avg = flat.mean(axis=2)
    arg = flat.argmax(axis=2)
    mx = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]
    ha = avg @ params.mlp_in.T
    hm = mx @ params.mlp_in.T
    ra = np.maximum(ha, 0.0)
    rm = np.maximum(hm, 0.0)
    gate = sigmoid((ra + rm) @ params.mlp_out.T)
    out = f * gate[:, :, None, None]
    return out, (f, avg, mx, arg, ha, hm, ra, rm, gate)


def channel_backward(d_out, cache, params):
    f, avg, mx, arg, ha, hm, ra, rm, gate = cache
    b, c, h, w = f.shape
    d_f = d_out * gate[:, :, None, None]
    d_gate = np.sum(d_out * f, axis=(2, 3))
    d_a = d_gate * gate * (1.0 - gate)
    g_out = d_a.T @ (ra + rm)
    d_r = d_a @ params.mlp_out
    d_ha = d_r * (ha > 0)
    d_hm = d_r * (hm > 0)
    g_in = d_ha.T @ avg + d_hm.T @ mx
    d_avg = d_ha @ params.mlp_in
    d_mx = d_hm @ params.mlp_in
    d_flat = d_f.reshape(b, c, h * w) + d_avg[:, :, None] / (h * w)
    np.put_along_axis(d_flat, arg[:, :, None],
                      np.take_along_axis(d_flat, arg[:, :, None], axis=2) + d_mx[:, :, None], axis=2)
    return d_flat.reshape(b, c, h, w), {"mlp_in": g_in, "mlp_out": g_out}


def spatial_forward(f, params):
    b, c, h, w = f.shape
    arg = f.argmax(axis=1)
    pooled = np.stack([f.mean(axis=1), np.take_along_axis(f, arg[:, None], axis=1)[:, 0]], axis=1)
    pre = kernels.spatial_conv_forward(pooled, params.kernel, float(params.kernel_bias[0]))
    gate = sigmoid(pre)
    out = f * gate[:, None]
    return out, (f, arg, pooled, gate)


def spatial_backward(d_out, cache, params):
    f, arg, pooled, gate = cache
    c = f.shape[1]
    d_f = d_out * gate[:, None]
    d_gate = np.sum(d_out * f, axis=1)
    d_pre = d_gate * gate * (1.0 - gate)
    d_pooled, g_kernel, g_bias = kernels.spatial_conv_backward(pooled, params.kernel, d_pre)
    d_f += d_pooled[:, 0][:, None] / c
    np.put_along_axis(d_f, arg[:, None],
                      np.take_along_axis(d_f, arg[:, None], axis=1) + d_pooled[:, 1][:, None], axis=1)
    return d_f, {"kernel": g_kernel, "kernel_bias": np.array([g_bias])}


def attention_forward(f, params):
    """Batched forward: returns ``(v_attn, cache)`` for (B, c, h, w) input."""
    _check_channels(f, params)
    f1, c1 = channel_forward(f, params)
    f2, c2 = spatial_forward(f1, params)
    flat = f2.reshape(f2.shape[0], -1)
    if flat.shape[1] != params.head_w.shape[1]:
        raise ShapeMismatch(f"flattened map has {flat.shape[1]} entries, head expects {params.head_w.shape[1]}")
    v_attn = flat @ params.head_w.T + params.head_b
    return v_attn, (c1, c2, flat, f2.shape)


def attention_backward(d_v, cache, params):
    """Gradients of a loss with upstream ``d_v`` (B, d); returns ``(d_f, grads)``."""
    c1, c2, flat, shape = cache
    grads = {"head_w": d_v.T @ flat, "head_b": d_v.sum(axis=0)}
    d_f2 = (d_v @ params.head_w).reshape(shape)
    d_f1, g_sp = spatial_backward(d_f2, c2, params)
    d_f, g_ch = channel_backward(d_f1, c1, params)
    grads.update(g_sp)
    grads.update(g_ch)
    return d_f, grads


def channel_attention(f, params):
    fb, single = _batched(f)
    _check_channels(fb, params)
    out, _ = channel_forward(fb, params)
    return out[0] if single else out


def spatial_attention(f, params):
    fb, single = _batched(f)
    out, _ = spatial_forward(fb, params)
    return out[0] if single else out


def attended_embedding(f, params):
    fb, single = _batched(f)
    v, _ = attention_forward(fb, params)
    return v[0] if single else v
