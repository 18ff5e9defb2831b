"""Training losses: cross-entropy, circle loss, cosine loss.

Circle loss follows the unified pair-based form

    L = log(1 + sum_j exp(g * a_n_j * (s_n_j - D_n))
              * sum_i exp(-g * a_p_i * (s_p_i - D_p)))

with a_p = max(0, O_p - s_p), a_n = max(0, s_n - O_n), O_p = 1 + m,
O_n = -m, D_p = 1 - m, D_n = m, over all within-batch pairs (self-pairs
excluded) of cosine similarities between L2-normalized embeddings.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor
from .autodiff import ops


@dataclass(frozen=True)
class CircleParams:
    gamma: float = 80.0
    margin: float = 0.4

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not (0.0 < self.margin < 1.0):
            raise ValueError("margin must be in (0, 1)")

    @property
    def o_p(self):
        return 1.0 + self.margin

    @property
    def o_n(self):
        return -self.margin

    @property
    def delta_p(self):
        return 1.0 - self.margin

    @property
    def delta_n(self):
        return self.margin


def cross_entropy(logits, labels):
    """Mean -log softmax(logits)[label]; stabilized by max subtraction.

    ``logits`` is (N,) or (B, N); ``labels`` an index or (B,) indices.
    """
    logits = as_tensor(logits)
    squeeze = logits.data.ndim == 1
    x = logits.data.reshape(1, -1) if squeeze else logits.data
    if x.ndim != 2:
        raise ValueError(f"cross_entropy: logits must be 1-D or 2-D, got {logits.data.shape}")
    B, N = x.shape
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (B,):
        raise ValueError(f"cross_entropy: expected {B} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= N:
        raise ValueError(f"cross_entropy: label out of range [0, {N})")
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(B), labels]
    data = np.asarray((lse - picked).mean(), dtype=x.dtype)
    out = ops._out(data, (logits,), "cross_entropy")
    if out.requires_grad:
        def bw(g):
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(B), labels] -= 1.0
            p *= g / B
            logits.accum_grad(p.reshape(logits.data.shape))
        out._backward = bw
    return out


def circle_loss_pairs(s_pos, s_neg, params: CircleParams = CircleParams()) -> Tensor:
    """Circle loss from 1-D tensors of positive/negative pair similarities."""
    s_pos, s_neg = as_tensor(s_pos), as_tensor(s_neg)
    a_n = ops.relu(ops.add(s_neg, params.margin))            # s_n - O_n
    term_n = ops.mul(ops.scale(a_n, params.gamma), ops.sub(s_neg, params.delta_n))
    a_p = ops.relu(ops.sub(params.o_p, s_pos))               # O_p - s_p
    term_p = ops.mul(ops.scale(a_p, params.gamma), ops.sub(params.delta_p, s_pos))
    full_n = np.ones(s_neg.data.shape, dtype=bool)
    full_p = np.ones(s_pos.data.shape, dtype=bool)
    lse = ops.add(ops.masked_logsumexp(term_n, full_n), ops.masked_logsumexp(term_p, full_p))
    return ops.softplus(lse)


def circle_loss(embeddings, labels, params: CircleParams = CircleParams()) -> Tensor:
    """Circle loss over all within-batch pairs of a (B, D) embedding batch.

    Batches without a positive pair or without a negative pair carry no
    learning signal and yield a constant 0 with a warning.
    """
    embeddings = as_tensor(embeddings)
    labels = np.asarray(labels)
    B = embeddings.data.shape[0]
    if labels.shape != (B,):
        raise ValueError(f"circle_loss: expected {B} labels, got shape {labels.shape}")
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(B, dtype=bool)
    pos_mask = same & off_diag
    neg_mask = ~same
    if not pos_mask.any() or not neg_mask.any():
        kind = "positive" if not pos_mask.any() else "negative"
        warnings.warn(f"circle_loss: batch has no {kind} pairs, loss is 0", stacklevel=2)
        return Tensor(np.asarray(0.0, dtype=embeddings.data.dtype))
    normed = ops.l2_normalize(embeddings, axis=1)
    sims = ops.matmul(normed, ops.transpose(normed))
    s_pos = ops.masked_select(sims, pos_mask)
    s_neg = ops.masked_select(sims, neg_mask)
    return circle_loss_pairs(s_pos, s_neg, params)


def cosine_loss(pred, target) -> Tensor:
    """1 - cos(pred, target), averaged over rows for 2-D inputs."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(f"cosine_loss: shapes {pred.data.shape} != {target.data.shape}")
    squeeze = pred.data.ndim == 1
    if squeeze:
        pred = ops.reshape(pred, (1, -1))
        target = ops.reshape(target, (1, -1))
    if not np.all(np.linalg.norm(pred.data, axis=1) > 0):
        raise ValueError("cosine_loss: zero prediction vector")
    if not np.all(np.linalg.norm(target.data, axis=1) > 0):
        raise ValueError("cosine_loss: zero target vector")
    cos = ops.sum_axis(ops.mul(ops.l2_normalize(pred, axis=1), ops.l2_normalize(target, axis=1)), axis=1)
    return ops.sub(1.0, ops.mean_axis(cos))
