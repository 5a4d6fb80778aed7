"""Contrastive objectives on unit vectors.

``asm_loss`` is the supervised NCE loss with a duplication factor ``lam`` on
the positive term. ``rsm_loss`` replaces the positive logit by its maximum
``1/tau`` and therefore needs no aligned partner. ``joint_loss`` sums the
batch-mean RSM of both KGs, each anchor contrasted against negatives drawn
from its own KG's queue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams, GraphInputs, backward, forward
from .errors import EmptyNegatives, NormViolation
from .queue import NegativeQueue

UNIT_TOL = 1e-4


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.08
    lam: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if int(self.lam) != self.lam or self.lam < 1:
            raise ValueError(f"lam must be an integer >= 1, got {self.lam}")


def _unit(name: str, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    norms = np.linalg.norm(a, axis=-1)
    if a.size and np.abs(norms - 1.0).max() > UNIT_TOL:
        raise NormViolation(f"{name} is not unit-norm (max deviation {np.abs(norms - 1.0).max():.2e})")
    return a


def _logsumexp(x: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def asm_loss(fx, fy, negs, cfg: LossConfig = LossConfig()) -> float:
    fx, fy = _unit("fx", fx), _unit("fy", fy)
    negs = _unit("negatives", np.atleast_2d(negs))
    if len(negs) == 0:
        raise EmptyNegatives("asm_loss needs at least one negative")
    pos = fx @ fy / cfg.tau
    logits = np.concatenate([[np.log(cfg.lam) + pos], negs @ fx / cfg.tau])
    return float(_logsumexp(logits) - pos)


def rsm_loss(fx, negs, cfg: LossConfig = LossConfig()) -> float:
    fx = _unit("fx", fx)
    negs = _unit("negatives", np.atleast_2d(negs))
    if len(negs) == 0:
        raise EmptyNegatives("rsm_loss needs at least one negative")
    top = 1.0 / cfg.tau
    logits = np.concatenate([[np.log(cfg.lam) + top], negs @ fx / cfg.tau])
    return float(_logsumexp(logits) - top)


def rsm_batch(anchors, anchor_ids, negs, neg_ids, cfg: LossConfig, exclude: bool = True):
    """Batch-mean RSM and its gradient with respect to the anchors.

    With ``exclude`` on, negatives sharing the anchor's entity id are masked
    out. Returns ``(loss, grad (B, d), negative counts (B,))``.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    negs = np.asarray(negs, dtype=np.float64)
    top = 1.0 / cfg.tau
    logits = anchors @ negs.T / cfg.tau  # (B, M)
    if exclude:
        keep = np.asarray(neg_ids)[None, :] != np.asarray(anchor_ids)[:, None]
    else:
        keep = np.ones(logits.shape, dtype=bool)
    counts = keep.sum(axis=1)
    if len(counts) and counts.min() == 0:
        raise EmptyNegatives("an anchor has no negatives left after excluding itself")
    masked = np.where(keep, logits, -np.inf)
    m = np.maximum(masked.max(axis=1), np.log(cfg.lam) + top)
    w = np.where(keep, np.exp(masked - m[:, None]), 0.0)
    head = np.exp(np.log(cfg.lam) + top - m)
    denom = head + w.sum(axis=1)
    per_anchor = m + np.log(denom) - top
    B = len(anchors)
    p = w / denom[:, None]
    grad = (p @ negs) / (cfg.tau * B)
    return float(per_anchor.mean()), grad, counts


def joint_loss_and_grad(
    batch_x,
    batch_y,
    queue_x: NegativeQueue,
    queue_y: NegativeQueue,
    cfg: LossConfig,
    ids_x,
    ids_y,
    current_x=None,
    current_y=None,
    self_negatives: bool = True,
):
    """Joint loss over both KGs and its gradients w.r.t. the two anchor batches.

    ``current_*`` are the (target-encoded) current batches that join the queue
    contents as negatives; they default to the anchors themselves, treated as
    constants. With ``self_negatives`` off each KG's anchors draw negatives
    from the other KG's queue without any exclusion.
    """
    batch_x = _unit("batch_x", batch_x)
    batch_y = _unit("batch_y", batch_y)
    current_x = batch_x if current_x is None else _unit("current_x", current_x)
    current_y = batch_y if current_y is None else _unit("current_y", current_y)
    ids_x = np.asarray(ids_x, dtype=np.int64)
    ids_y = np.asarray(ids_y, dtype=np.int64)
    neg_x, nid_x = queue_x.pooled(current_x, ids_x)
    neg_y, nid_y = queue_y.pooled(current_y, ids_y)
    if self_negatives:
        lx, gx, _ = rsm_batch(batch_x, ids_x, neg_x, nid_x, cfg, exclude=True)
        ly, gy, _ = rsm_batch(batch_y, ids_y, neg_y, nid_y, cfg, exclude=True)
    else:
        lx, gx, _ = rsm_batch(batch_x, ids_x, neg_y, nid_y, cfg, exclude=False)
        ly, gy, _ = rsm_batch(batch_y, ids_y, neg_x, nid_x, cfg, exclude=False)
    return lx + ly, gx, gy


def joint_loss(batch_x, batch_y, queue_x, queue_y, cfg: LossConfig, ids_x, ids_y, **kw) -> float:
    return joint_loss_and_grad(batch_x, batch_y, queue_x, queue_y, cfg, ids_x, ids_y, **kw)[0]


def grad_joint_loss(
    online: EncoderParams,
    inputs_x: GraphInputs,
    inputs_y: GraphInputs,
    ids_x,
    ids_y,
    queue_x: NegativeQueue,
    queue_y: NegativeQueue,
    cfg: LossConfig,
    current_x,
    current_y,
    self_negatives: bool = True,
):
    """Loss and its gradient w.r.t. every online-encoder parameter.

    Queue contents and the current target encodings are constants, so no
    gradient reaches them.
    """
    cache_x = forward(online, *inputs_x.gather(ids_x))
    cache_y = forward(online, *inputs_y.gather(ids_y))
    loss, gx, gy = joint_loss_and_grad(
        cache_x.out, cache_y.out, queue_x, queue_y, cfg, ids_x, ids_y,
        current_x=current_x, current_y=current_y, self_negatives=self_negatives,
    )
    grads_x = backward(online, cache_x, gx)
    grads_y = backward(online, cache_y, gy)
    return loss, {name: grads_x[name] + grads_y[name] for name in grads_x}
