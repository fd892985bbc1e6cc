"""Divergences and distances between embeddings.

Both functions work on a leading batch axis: an input of shape ``[B, ...]``
is flattened per sample and the result has shape ``[B]``. Pass
``batched=False`` to treat the whole tensor as one sample.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, constant, exp, l2_norm, log_softmax, reshape, tsum


def _flatten(x: Tensor, batched: bool) -> Tensor:
    if batched:
        return reshape(x, (x.shape[0], -1))
    return reshape(x, (1, -1))


def kl_embedding_loss(
    e_perturbed, e_reference, mask: np.ndarray | None = None, batched: bool = False
) -> Tensor:
    """KL(softmax(e_perturbed) || softmax(e_reference)) over flattened entries.

    ``mask`` (broadcastable to the inputs, 1 = keep) drops entries from both
    distributions, e.g. padding rows of a text embedding.
    """
    p_in, q_in = constant(e_perturbed), constant(e_reference)
    if p_in.shape != q_in.shape:
        raise ValueError(f"shape mismatch {p_in.shape} vs {q_in.shape}")
    if mask is not None:
        offset = np.where(np.broadcast_to(mask, p_in.shape) > 0, 0.0, -1e9)
        p_in = p_in + offset
        q_in = q_in + offset
    logp = log_softmax(_flatten(p_in, batched), axis=-1)
    logq = log_softmax(_flatten(q_in, batched), axis=-1)
    kl = tsum(exp(logp) * (logp - logq), axis=-1)
    return kl if batched else reshape(kl, ())


def embedding_distance(e1, e2, mask: np.ndarray | None = None, batched: bool = False) -> Tensor:
    """Euclidean norm of the flattened difference."""
    a, b = constant(e1), constant(e2)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    if mask is not None:
        diff = diff * np.broadcast_to(mask, a.shape).astype(float)
    dist = l2_norm(_flatten(diff, batched), axis=-1)
    return dist if batched else reshape(dist, ())
