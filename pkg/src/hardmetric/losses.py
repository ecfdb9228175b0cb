"""Triplet and N-pair losses over tuple batches, with gradients into embeddings.

Both losses see only pairwise Euclidean distances, so they are invariant
under rigid motions of the embedding batch. `batch_metric_loss` chains the
scalar loss gradients through the distance computations and scatter-adds
them back onto the embedding rows, which may appear in several tuples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .nn import as_matrix

TUPLE_KINDS = ("triplet", "npair")


@dataclass
class LossConfig:
    margin: float = 1.0
    npair_n: int = 5

    def __post_init__(self):
        if self.margin < 0:
            raise InputError(f"margin must be nonnegative, got {self.margin}")
        if self.npair_n < 2:
            raise InputError(f"npair_n must be at least 2, got {self.npair_n}")


@dataclass
class TupleBatch:
    """Training tuples as row indices into an embedding batch.

    triplet: indices is (T, 3) columns (anchor, positive, negative).
    npair:   indices is (N, 2) columns (anchor, positive), one pair per
             class; each anchor's negatives default to the other pairs'
             positives. `negative_indices` (N, N-1) overrides that default,
             which synthetic tuples use because their hardened negatives are
             distinct rows per (anchor, negative) combination.

    labels mirrors the indices shape and holds the member class labels.
    """

    kind: str
    indices: np.ndarray
    labels: np.ndarray
    negative_indices: np.ndarray | None = None
    flavor: str = "original"

    def __post_init__(self):
        if self.kind not in TUPLE_KINDS:
            raise InputError(f"unknown tuple kind {self.kind!r}")
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != self.indices.shape:
            raise DimensionError(f"labels shape {self.labels.shape} != indices shape {self.indices.shape}")
        if self.kind == "triplet":
            if self.indices.ndim != 2 or self.indices.shape[1] != 3:
                raise DimensionError(f"triplet indices must be (T, 3), got {self.indices.shape}")
            if self.size and not (self.labels[:, 0] == self.labels[:, 1]).all():
                raise InputError("triplet anchor and positive must share a label")
            if self.size and (self.labels[:, 0] == self.labels[:, 2]).any():
                raise InputError("triplet negative must have a different label than the anchor")
        else:
            if self.indices.ndim != 2 or self.indices.shape[1] != 2:
                raise DimensionError(f"npair indices must be (N, 2), got {self.indices.shape}")
            n = self.indices.shape[0]
            if n < 2:
                raise InputError(f"an N-pair tuple needs at least 2 classes, got {n}")
            if not (self.labels[:, 0] == self.labels[:, 1]).all():
                raise InputError("each N-pair (anchor, positive) must share a label")
            if len(set(self.labels[:, 0].tolist())) != n:
                raise InputError("N-pair classes must be distinct")
            if self.negative_indices is not None:
                self.negative_indices = np.asarray(self.negative_indices, dtype=np.int64)
                if self.negative_indices.shape != (n, n - 1):
                    raise DimensionError(
                        f"negative_indices must be ({n}, {n - 1}), got {self.negative_indices.shape}"
                    )

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def triplet_loss(d_pos, d_neg, margin: float):
    """Hinge loss max(d_pos - d_neg + margin, 0) with distance gradients.

    Vectorizes over arrays of distances; the subgradient at the hinge
    boundary is zero, matching the ReLU convention elsewhere.
    """
    d_pos = np.asarray(d_pos, dtype=np.float64)
    d_neg = np.asarray(d_neg, dtype=np.float64)
    raw = d_pos - d_neg + margin
    loss = np.maximum(raw, 0.0)
    grad_pos = (raw > 0.0).astype(np.float64)
    grad_neg = -grad_pos
    if loss.ndim == 0:
        return float(loss), float(grad_pos), float(grad_neg)
    return loss, grad_pos, grad_neg


def npair_loss(d_pos, d_neg):
    """Distance-based N-pair loss with log-sum-exp stabilization.

    loss = (1/N) * sum_i log(1 + sum_{j != i} exp(d_pos[i] - d_neg[i, j]))
    where row i of d_neg holds the distances from anchor i to the other
    pairs' positives. Returns (loss, grad_d_pos, grad_d_neg).
    """
    d_pos = np.asarray(d_pos, dtype=np.float64)
    d_neg = np.asarray(d_neg, dtype=np.float64)
    if d_pos.ndim != 1:
        raise DimensionError(f"d_pos must be 1-D, got shape {d_pos.shape}")
    n = d_pos.shape[0]
    if n < 2:
        raise InputError(f"N-pair loss needs N >= 2, got N = {n}")
    if d_neg.shape != (n, n - 1):
        raise DimensionError(f"d_neg must be ({n}, {n - 1}), got {d_neg.shape}")
    a = d_pos[:, None] - d_neg
    # the implicit +1 term is exp(0), so the stabilizing max includes 0
    m = np.maximum(a.max(axis=1), 0.0)
    expa = np.exp(a - m[:, None])
    denom = np.exp(-m) + expa.sum(axis=1)
    loss = float((m + np.log(denom)).mean())
    p = expa / denom[:, None]
    grad_pos = p.sum(axis=1) / n
    grad_neg = -p / n
    return loss, grad_pos, grad_neg


def _unit_diffs(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances |a-b| row-wise plus d|a-b|/da, with zero at coincident points."""
    diff = a - b
    d = np.sqrt((diff * diff).sum(axis=-1))
    unit = diff / np.where(d > 0.0, d, 1.0)[..., None]
    return d, unit


def batch_metric_loss(embeddings, tuples: TupleBatch, config: LossConfig) -> tuple[float, np.ndarray]:
    """Mean tuple loss plus its gradient with respect to every embedding row."""
    z = embeddings.embeddings if hasattr(embeddings, "embeddings") else as_matrix(embeddings, "embeddings")
    n_rows = z.shape[0]
    if tuples.size and (tuples.indices.min() < 0 or tuples.indices.max() >= n_rows):
        raise InputError(
            f"tuple indices must lie in [0, {n_rows}), got range "
            f"[{tuples.indices.min()}, {tuples.indices.max()}]"
        )
    grad = np.zeros_like(z)
    if tuples.size == 0:
        return 0.0, grad

    if tuples.kind == "triplet":
        idx = tuples.indices
        za, zp, zn = z[idx[:, 0]], z[idx[:, 1]], z[idx[:, 2]]
        d_pos, unit_ap = _unit_diffs(za, zp)
        d_neg, unit_an = _unit_diffs(za, zn)
        losses, g_pos, g_neg = triplet_loss(d_pos, d_neg, config.margin)
        t = idx.shape[0]
        loss = float(losses.mean())
        wp = (g_pos / t)[:, None] * unit_ap
        wn = (g_neg / t)[:, None] * unit_an
        np.add.at(grad, idx[:, 0], wp + wn)
        np.add.at(grad, idx[:, 1], -wp)
        np.add.at(grad, idx[:, 2], -wn)
        return loss, grad

    # npair: one tuple spanning the whole index table
    idx = tuples.indices
    n = idx.shape[0]
    if tuples.negative_indices is not None:
        neg_idx = tuples.negative_indices
        if neg_idx.min() < 0 or neg_idx.max() >= n_rows:
            raise InputError("npair negative indices out of range")
    else:
        # anchor i is pushed away from every other pair's positive
        pos_col = idx[:, 1]
        neg_idx = np.empty((n, n - 1), dtype=np.int64)
        for i in range(n):
            neg_idx[i] = np.concatenate([pos_col[:i], pos_col[i + 1 :]])
    za, zp = z[idx[:, 0]], z[idx[:, 1]]
    zneg = z[neg_idx]
    d_pos, unit_ap = _unit_diffs(za, zp)
    d_neg, unit_an = _unit_diffs(za[:, None, :], zneg)
    loss, g_pos, g_neg = npair_loss(d_pos, d_neg)
    wp = g_pos[:, None] * unit_ap
    wn = g_neg[..., None] * unit_an
    np.add.at(grad, idx[:, 0], wp + wn.sum(axis=1))
    np.add.at(grad, idx[:, 1], -wp)
    np.add.at(grad, neg_idx.reshape(-1), -wn.reshape(-1, z.shape[1]))
    return loss, grad
