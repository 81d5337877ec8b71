"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled versions are tested against.
"""

import numpy as np


def proximity_batch(vhat, prototypes, targets, center):
    """Proximity triples for a batch of unit embeddings.

    Returns ``(triples, neg_index)`` where ``triples[i] = (d_pos, d_neg, d_ui)``
    and ``neg_index[i]`` is the nearest non-target prototype.
    """
    vhat = np.ascontiguousarray(vhat, dtype=np.float64)
    cos = np.clip(vhat @ prototypes.T, -1.0, 1.0)
    n = vhat.shape[0]
    rows = np.arange(n)
    cos_pos = cos[rows, targets]
    masked = cos.copy()
    masked[rows, targets] = -np.inf
    neg_index = np.argmax(masked, axis=1)
    cos_neg = masked[rows, neg_index]
    cos_ui = np.clip(vhat @ center, -1.0, 1.0)
    triples = np.stack([1.0 - cos_pos, 1.0 - cos_neg, 1.0 - cos_ui], axis=1)
    return triples, neg_index.astype(np.int64)


def spatial_conv_forward(pooled, kernel, bias):
    """Same-padded 2-D correlation of ``pooled`` (B, P, H, W) with ``kernel`` (P, k, k)."""
    b, p, h, w = pooled.shape
    k = kernel.shape[-1]
    r = k // 2
    padded = np.pad(pooled, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.full((b, h, w), float(bias))
    for di in range(k):
        for dj in range(k):
            window = padded[:, :, di:di + h, dj:dj + w]
            out += np.einsum("bphw,p->bhw", window, kernel[:, di, dj])
    return out


def spatial_conv_backward(pooled, kernel, grad_out):
    b, p, h, w = pooled.shape
    k = kernel.shape[-1]
    r = k // 2
    padded = np.pad(pooled, ((0, 0), (0, 0), (r, r), (r, r)))
    grad_padded = np.zeros_like(padded)
    grad_kernel = np.zeros_like(kernel)
    for di in range(k):
        for dj in range(k):
            window = padded[:, :, di:di + h, dj:dj + w]
            grad_kernel[:, di, dj] = np.einsum("bphw,bhw->p", window, grad_out)
            grad_padded[:, :, di:di + h, dj:dj + w] += (
                grad_out[:, None, :, :] * kernel[None, :, di, dj, None, None]
            )
    grad_pooled = grad_padded[:, :, r:r + h, r:r + w].copy()
    return grad_pooled, grad_kernel, float(grad_out.sum())
