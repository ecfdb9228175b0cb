"""Embedding model: a dense feature extractor followed by a linear projector.

The model factors into two stages so training can reuse the intermediate
features: `extract` maps raw input vectors to feature space, `project` maps
features to the embedding space where plain Euclidean distance carries the
semantics. An optional L2 normalization of embeddings exists for ablation
and is off by default; the interpolation geometry used for hardness
augmentation assumes the unconstrained space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .nn import DenseLayer, GradTape, as_matrix, dense_backward, dense_forward, init_dense


@dataclass
class FeatureBatch:
    """Feature-space vectors with their sample ids and labels."""

    features: np.ndarray
    sample_ids: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)


@dataclass
class EmbeddingBatch:
    """Embedding-space vectors with their sample ids and labels."""

    embeddings: np.ndarray
    sample_ids: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.embeddings = as_matrix(self.embeddings, "embeddings")
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)


@dataclass
class EmbedderParams:
    """Extractor layer stack plus the single linear embedding projector.

    The extractor and projector are separate parameter partitions: the
    training loop routes some gradients to one but not the other.
    """

    extractor: list[DenseLayer]
    projector: DenseLayer
    normalize: bool = False

    def __post_init__(self):
        if self.extractor:
            for prev, nxt in zip(self.extractor, self.extractor[1:]):
                if nxt.in_dim != prev.out_dim:
                    raise DimensionError(
                        f"extractor layers disagree: {prev.out_dim} outputs feed {nxt.in_dim} inputs"
                    )
            if self.projector.in_dim != self.extractor[-1].out_dim:
                raise DimensionError(
                    f"projector expects {self.projector.in_dim} inputs, extractor emits {self.extractor[-1].out_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.extractor[0].in_dim if self.extractor else self.projector.in_dim

    @property
    def feature_dim(self) -> int:
        return self.extractor[-1].out_dim if self.extractor else self.projector.in_dim

    @property
    def embed_dim(self) -> int:
        return self.projector.out_dim

    def extractor_param_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.extractor:
            out.extend((layer.weight, layer.bias))
        return out

    def projector_param_arrays(self) -> list[np.ndarray]:
        return [self.projector.weight, self.projector.bias]

    def copy(self) -> "EmbedderParams":
        return EmbedderParams([l.copy() for l in self.extractor], self.projector.copy(), self.normalize)


def init_embedder(
    input_dim: int,
    hidden_dims: tuple[int, ...] = (256, 256),
    embed_dim: int = 64,
    rng: np.random.Generator | None = None,
    normalize: bool = False,
) -> EmbedderParams:
    """ReLU extractor stack (input -> hidden dims) plus a linear projector."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    prev = input_dim
    for dim in hidden_dims:
        layers.append(init_dense(prev, dim, "relu", rng))
        prev = dim
    projector = init_dense(prev, embed_dim, "identity", rng)
    return EmbedderParams(layers, projector, normalize)


@dataclass
class ProjectTape:
    dense: GradTape
    norms: np.ndarray | None = None
    unit: np.ndarray | None = None


@dataclass
class EmbedTape:
    extractor: list[GradTape]
    project: ProjectTape


@dataclass
class EmbedderGrads:
    """Gradients per extractor layer, for the projector, and for the input."""

    extractor: list[tuple[np.ndarray, np.ndarray]]
    projector: tuple[np.ndarray, np.ndarray]
    input_grad: np.ndarray


def extract(params: EmbedderParams, x, sample_ids=None, labels=None) -> tuple[FeatureBatch, list[GradTape]]:
    """Run the feature extractor stack; tapes are kept for the backward pass."""
    h = as_matrix(x)
    if h.shape[1] != params.input_dim:
        raise DimensionError(f"input shape {h.shape} incompatible with extractor input dim {params.input_dim}")
    if sample_ids is None:
        sample_ids = np.arange(h.shape[0])
    tapes = []
    for layer in params.extractor:
        h, tape = dense_forward(layer, h)
        tapes.append(tape)
    return FeatureBatch(h, sample_ids, labels), tapes


def project(params: EmbedderParams, features: FeatureBatch) -> tuple[EmbeddingBatch, ProjectTape]:
    """Map features to embeddings through the single linear projector."""
    z, tape = dense_forward(params.projector, features.features)
    if not params.normalize:
        return EmbeddingBatch(z, features.sample_ids, features.labels), ProjectTape(tape)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = z / safe
    return (
        EmbeddingBatch(unit, features.sample_ids, features.labels),
        ProjectTape(tape, norms=safe, unit=unit),
    )


def project_backward(
    params: EmbedderParams, tape: ProjectTape, grad_embeddings: np.ndarray
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Backward through the projector: (feature_grad, (weight_grad, bias_grad))."""
    g = np.asarray(grad_embeddings, dtype=np.float64)
    if params.normalize:
        # d(z/|z|) pushes the gradient onto the tangent of the unit sphere
        radial = (tape.unit * g).sum(axis=1, keepdims=True)
        g = (g - tape.unit * radial) / tape.norms
    feature_grad, w_grad, b_grad = dense_backward(params.projector, tape.dense, g)
    return feature_grad, (w_grad, b_grad)


def embed(params: EmbedderParams, x, sample_ids=None, labels=None) -> tuple[EmbeddingBatch, EmbedTape]:
    """extract followed by project, returning one combined tape."""
    feats, ext_tapes = extract(params, x, sample_ids, labels)
    emb, ptape = project(params, feats)
    return emb, EmbedTape(ext_tapes, ptape)


def embed_backward(params: EmbedderParams, tape: EmbedTape, grad_embeddings: np.ndarray) -> EmbedderGrads:
    """Backward through projector and extractor stack."""
    g, proj_grads = project_backward(params, tape.project, grad_embeddings)
    layer_grads: list[tuple[np.ndarray, np.ndarray]] = []
    for layer, ltape in zip(reversed(params.extractor), reversed(tape.extractor)):
        g, w_grad, b_grad = dense_backward(layer, ltape, g)
        layer_grads.append((w_grad, b_grad))
    layer_grads.reverse()
    return EmbedderGrads(layer_grads, proj_grads, g)


def distance(z_i, z_j) -> float:
    """Euclidean distance between two embedding vectors."""
    a = np.asarray(z_i, dtype=np.float64)
    b = np.asarray(z_j, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"expected two 1-D vectors of equal length, got {a.shape} and {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def pairwise_distances(batch) -> np.ndarray:
    """Full symmetric distance matrix with an exactly-zero diagonal.

    Computed from explicit coordinate differences rather than the Gram
    expansion, so duplicates come out exactly zero and the matrix is bitwise
    symmetric. Work is blocked to bound temporary memory.
    """
    z = batch.embeddings if isinstance(batch, EmbeddingBatch) else as_matrix(batch, "points")
    n, dim = z.shape
    if n == 0:
        raise InputError("pairwise_distances needs a nonempty batch")
    out = np.empty((n, n))
    block = max(1, (1 << 22) // max(1, n * dim))
    for start in range(0, n, block):
        d = z[start : start + block, None, :] - z[None, :, :]
        out[start : start + block] = np.sqrt((d * d).sum(axis=-1))
    return out
