"""Hardness-aware negative construction by linear interpolation in embedding space.

A negative embedding is pulled along the segment toward its anchor, but
never inside the reference distance set by the anchor's positive pair, so
the manipulated pair stays a plausible negative. How far it is pulled is
driven by a schedule on the previous epoch's average metric loss: as the
model improves (loss falls), the interpolation coefficient shrinks and the
synthesized tuples get harder. Anchors and positives pass through untouched,
and nothing here participates in backpropagation; outputs are constants to
every downstream objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .losses import TupleBatch

# Lower bound for the interpolation coefficient: keeps the hardened negative
# strictly off the reference sphere even when the average loss collapses.
LAMBDA_FLOOR = 1e-6


@dataclass
class AugmentorState:
    """Pulling strength plus the previous epoch's average metric loss.

    j_avg is None until a full epoch has been observed; alpha = 0 disables
    hardening entirely (the schedule stays at 1).
    """

    alpha: float
    j_avg: float | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise InputError(f"alpha must be nonnegative, got {self.alpha}")
        if self.j_avg is not None and not (self.j_avg >= 0):
            raise InputError(f"j_avg must be nonnegative when set, got {self.j_avg}")


def pulling_lambda(state: AugmentorState) -> float:
    """Interpolation coefficient exp(-alpha / j_avg), clamped to (0, 1].

    Returns 1 while no epoch average exists (warm-up: synthetics start as
    plain reconstructions) and 1 for an infinite average. A vanishing
    average would drive the coefficient to 0; it is floored at LAMBDA_FLOOR
    instead. Strictly increasing in j_avg, strictly decreasing in alpha.
    """
    if state.alpha == 0.0 or state.j_avg is None or math.isinf(state.j_avg):
        return 1.0
    if state.j_avg <= 0.0:
        return LAMBDA_FLOOR
    return max(math.exp(-state.alpha / state.j_avg), LAMBDA_FLOOR)


def augment_negative(z, z_neg, d_plus: float, lambda_interp: float) -> np.ndarray:
    """Pull one negative toward the anchor along their connecting segment.

    If the negative already sits within the reference distance d_plus it is
    returned unchanged; otherwise the result lies at distance
    lambda_interp * d(z, z_neg) + (1 - lambda_interp) * d_plus from the
    anchor, on the segment [z, z_neg]. lambda_interp = 1 short-circuits to
    an exact copy of z_neg so the warm-up schedule is a bitwise identity.
    """
    z = np.asarray(z, dtype=np.float64)
    z_neg = np.asarray(z_neg, dtype=np.float64)
    if z.shape != z_neg.shape or z.ndim != 1:
        raise DimensionError(f"expected two 1-D vectors of equal length, got {z.shape} and {z_neg.shape}")
    if d_plus <= 0:
        raise InputError(f"reference distance must be positive, got {d_plus}")
    if not (0.0 < lambda_interp <= 1.0):
        raise InputError(f"lambda_interp must lie in (0, 1], got {lambda_interp}")
    d = float(np.sqrt(((z - z_neg) ** 2).sum()))
    if d <= d_plus or lambda_interp == 1.0:
        return z_neg.copy()
    target = lambda_interp * d + (1.0 - lambda_interp) * d_plus
    return z + (target / d) * (z_neg - z)


@dataclass
class AugmentedTuple:
    """A tuple batch after negative hardening.

    Anchors and positives are copies of their originals. For triplets the
    per-negative arrays are (T, D); for N-pair tuples they are (N, N-1, D)
    because every anchor gets its own hardened copy of each other pair's
    positive. `degenerate` lists tuple rows (triplet) or anchor rows
    (npair) whose reference distance was zero: triplet rows are dropped,
    npair anchors keep their negatives unhardened so the tuple structure
    survives.
    """

    kind: str
    lambda_interp: float
    anchor_idx: np.ndarray
    positive_idx: np.ndarray
    negative_idx: np.ndarray
    anchors: np.ndarray
    positives: np.ndarray
    original_negatives: np.ndarray
    hardened_negatives: np.ndarray
    reference_distances: np.ndarray
    anchor_labels: np.ndarray
    negative_labels: np.ndarray
    degenerate: np.ndarray

    @property
    def size(self) -> int:
        return self.anchor_idx.shape[0]


def augment_tuples(
    embeddings,
    tuples: TupleBatch,
    state: AugmentorState,
    fixed_reference: float | None = None,
) -> AugmentedTuple:
    """Harden every negative in a tuple batch per the current schedule.

    The reference distance defaults to each anchor's positive-pair distance;
    `fixed_reference` substitutes a constant instead. Works on embeddings
    only; gradients never flow through the returned arrays.
    """
    z = embeddings.embeddings if hasattr(embeddings, "embeddings") else np.asarray(embeddings, dtype=np.float64)
    if fixed_reference is not None and fixed_reference <= 0:
        raise InputError(f"fixed reference distance must be positive, got {fixed_reference}")
    lam = pulling_lambda(state)
    idx = tuples.indices
    labels = tuples.labels

    if tuples.kind == "triplet":
        kept_rows = []
        degenerate = []
        hardened = []
        refs = []
        for t in range(idx.shape[0]):
            a, p, n = idx[t]
            d_plus = (
                fixed_reference
                if fixed_reference is not None
                else float(np.sqrt(((z[a] - z[p]) ** 2).sum()))
            )
            if d_plus <= 0.0:
                degenerate.append(t)
                continue
            kept_rows.append(t)
            refs.append(d_plus)
            hardened.append(augment_negative(z[a], z[n], d_plus, lam))
        kept = np.asarray(kept_rows, dtype=np.int64)
        dim = z.shape[1]
        return AugmentedTuple(
            kind="triplet",
            lambda_interp=lam,
            anchor_idx=idx[kept, 0],
            positive_idx=idx[kept, 1],
            negative_idx=idx[kept, 2],
            anchors=z[idx[kept, 0]].copy(),
            positives=z[idx[kept, 1]].copy(),
            original_negatives=z[idx[kept, 2]].copy(),
            hardened_negatives=(
                np.asarray(hardened) if hardened else np.empty((0, dim))
            ),
            reference_distances=np.asarray(refs, dtype=np.float64),
            anchor_labels=labels[kept, 0],
            negative_labels=labels[kept, 2],
            degenerate=np.asarray(degenerate, dtype=np.int64),
        )

    # npair: anchor i hardens every other pair's positive against its own
    # reference distance
    n = idx.shape[0]
    dim = z.shape[1]
    anchor_rows = idx[:, 0]
    pos_rows = idx[:, 1]
    neg_idx = np.empty((n, n - 1), dtype=np.int64)
    neg_labels = np.empty((n, n - 1), dtype=np.int64)
    hardened = np.empty((n, n - 1, dim))
    refs = np.empty((n, n - 1))
    degenerate = []
    for i in range(n):
        others = np.concatenate([pos_rows[:i], pos_rows[i + 1 :]])
        neg_idx[i] = others
        neg_labels[i] = np.concatenate([labels[:i, 1], labels[i + 1 :, 1]])
        d_plus = (
            fixed_reference
            if fixed_reference is not None
            else float(np.sqrt(((z[anchor_rows[i]] - z[pos_rows[i]]) ** 2).sum()))
        )
        if d_plus <= 0.0:
            degenerate.append(i)
            hardened[i] = z[others]
            refs[i] = 0.0
            continue
        refs[i] = d_plus
        for jj, row in enumerate(others):
            hardened[i, jj] = augment_negative(z[anchor_rows[i]], z[row], d_plus, lam)
    return AugmentedTuple(
        kind="npair",
        lambda_interp=lam,
        anchor_idx=anchor_rows.copy(),
        positive_idx=pos_rows.copy(),
        negative_idx=neg_idx,
        anchors=z[anchor_rows].copy(),
        positives=z[pos_rows].copy(),
        original_negatives=z[neg_idx].copy(),
        hardened_negatives=hardened,
        reference_distances=refs,
        anchor_labels=labels[:, 0].copy(),
        negative_labels=neg_labels,
        degenerate=np.asarray(degenerate, dtype=np.int64),
    )
