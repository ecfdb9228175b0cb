"""End-to-end training loop: tuple mining, hardness augmentation, feature
synthesis, the adaptively weighted metric objective, and bookkeeping.

Each step runs, on one batch: embed the originals and compute the plain
metric loss; harden the negatives at the current schedule; decode the
hardened tuple back to feature space; re-project those synthetic features
and compute the synthetic metric loss; then blend the two losses with a
weight derived from how well the generator is doing and update the
parameter partitions. Gradient routing is strict: the blended metric loss
updates the extractor (original path only) and the projector (both paths);
the generator objective updates the generator only; the classifier head
trains on real features only. The epoch-mean metric loss feeds the
hardness schedule of the following epoch.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .augmentor import AugmentorState, AugmentedTuple, augment_tuples, pulling_lambda
from .data import Dataset, ZeroShotSplit, split_zero_shot, take_classes
from .embedder import (
    EmbedderParams,
    EmbedTape,
    FeatureBatch,
    embed,
    embed_backward,
    extract,
    init_embedder,
    project,
    project_backward,
)
from .errors import InputError, NumericalError
from .evaluation import EvalReport, evaluate_embeddings
from .generator import ClassifierParams, GeneratorParams, classifier_step, generator_loss, init_classifier, init_generator
from .losses import LossConfig, TupleBatch, batch_metric_loss
from .nn import Adam

log = logging.getLogger(__name__)

CURVE_HEADER = "step,epoch,j_m,j_syn,j_gen,j_recon,j_soft,weight_w,lambda_interp"


@dataclass
class TrainConfig:
    """Every knob of a training run; the config file mirrors these fields.

    alpha/beta defaults are sized for the bundled synthetic benchmark, where
    epoch-average metric losses converge to O(0.01..0.1) and generator losses
    to O(100); both knobs scale with the loss magnitudes of whatever data
    they are applied to, so expect to retune them off this benchmark.
    """

    loss_kind: str = "triplet"
    alpha: float = 0.04
    beta: float = 80.0
    lambda_balance: float = 0.5
    margin: float = 1.0
    npair_n: int = 5
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 1e-4
    fc_lr_multiplier: float = 10.0
    seed: int = 0
    embed_dim: int = 64
    eval_every: int = 0
    hidden_dims: tuple[int, ...] = (256, 256)
    generator_hidden_dim: int | None = None
    train_fraction: float = 0.5
    split_seed: int = 0
    normalize_embeddings: bool = False
    synthetics: bool = True
    fixed_reference_distance: float | None = None
    recall_ks: tuple[int, ...] = (1, 2, 4, 8)

    def __post_init__(self):
        if self.loss_kind not in ("triplet", "npair"):
            raise InputError(f"loss_kind must be 'triplet' or 'npair', got {self.loss_kind!r}")
        if self.learning_rate <= 0 or self.fc_lr_multiplier <= 0:
            raise InputError("learning rates must be positive")
        if self.alpha < 0:
            raise InputError(f"alpha must be nonnegative, got {self.alpha}")
        if self.beta <= 0:
            raise InputError(f"beta must be positive, got {self.beta}")
        if self.lambda_balance < 0:
            raise InputError(f"lambda_balance must be nonnegative, got {self.lambda_balance}")
        if self.batch_size < 2:
            raise InputError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.epochs < 0:
            raise InputError(f"epochs must be nonnegative, got {self.epochs}")
        if self.embed_dim <= 0 or any(d <= 0 for d in self.hidden_dims):
            raise InputError("layer dimensions must be positive")

    def loss_config(self) -> LossConfig:
        return LossConfig(margin=self.margin, npair_n=self.npair_n)


@dataclass
class Models:
    """The four parameter partitions; generator/classifier absent for baselines."""

    embedder: EmbedderParams
    generator: GeneratorParams | None = None
    classifier: ClassifierParams | None = None


def init_models(input_dim: int, num_train_classes: int, config: TrainConfig) -> Models:
    rng = np.random.default_rng(config.seed)
    embedder = init_embedder(
        input_dim,
        hidden_dims=tuple(config.hidden_dims),
        embed_dim=config.embed_dim,
        rng=rng,
        normalize=config.normalize_embeddings,
    )
    if not config.synthetics:
        return Models(embedder)
    generator = init_generator(
        config.embed_dim, embedder.feature_dim, hidden_dim=config.generator_hidden_dim, rng=rng
    )
    classifier = init_classifier(embedder.feature_dim, num_train_classes, rng=rng)
    return Models(embedder, generator, classifier)


@dataclass
class LogRow:
    step: int
    epoch: int
    j_m: float
    j_syn: float
    j_gen: float
    j_recon: float
    j_soft: float
    weight_w: float
    lambda_interp: float

    def as_csv(self) -> str:
        return ",".join(
            [str(self.step), str(self.epoch)]
            + [
                repr(v)
                for v in (
                    self.j_m,
                    self.j_syn,
                    self.j_gen,
                    self.j_recon,
                    self.j_soft,
                    self.weight_w,
                    self.lambda_interp,
                )
            ]
        )


@dataclass
class TrainState:
    """Mutable loop state: counters, schedule, optimizer slots, history."""

    augmentor: AugmentorState
    rng: np.random.Generator
    adam_extractor: Adam
    adam_projector: Adam
    adam_generator: Adam | None = None
    adam_classifier: Adam | None = None
    epoch: int = 0
    step: int = 0
    skipped_batches: int = 0
    history: list[LogRow] = field(default_factory=list)


def init_state(models: Models, config: TrainConfig) -> TrainState:
    fc_rate = config.learning_rate * config.fc_lr_multiplier
    return TrainState(
        augmentor=AugmentorState(alpha=config.alpha),
        rng=np.random.default_rng(config.seed),
        adam_extractor=Adam(models.embedder.extractor_param_arrays(), config.learning_rate),
        adam_projector=Adam(models.embedder.projector_param_arrays(), fc_rate),
        adam_generator=Adam(models.generator.param_arrays(), fc_rate) if models.generator else None,
        adam_classifier=Adam(models.classifier.param_arrays(), fc_rate) if models.classifier else None,
    )


def mine_tuples(labels, kind: str, config: TrainConfig, rng: np.random.Generator) -> TupleBatch | None:
    """Random tuples from one batch; None (with a warning) when infeasible.

    triplet: every sample whose class occurs twice in the batch anchors one
    triplet with a random positive and a random negative. npair: npair_n
    classes holding at least two samples are drawn, two samples each.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes, counts = np.unique(labels, return_counts=True)
    if kind == "triplet":
        if len(classes) < 2:
            log.warning("batch skipped: need at least 2 classes for triplets, got %d", len(classes))
            return None
        rich = set(classes[counts >= 2].tolist())
        rows = []
        for i, lab in enumerate(labels):
            if lab not in rich:
                continue
            same = np.flatnonzero((labels == lab) & (np.arange(len(labels)) != i))
            other = np.flatnonzero(labels != lab)
            rows.append((i, int(rng.choice(same)), int(rng.choice(other))))
        if not rows:
            log.warning("batch skipped: no class has two samples")
            return None
        idx = np.asarray(rows, dtype=np.int64)
        return TupleBatch("triplet", idx, labels[idx])
    # npair
    eligible = classes[counts >= 2]
    if len(eligible) < config.npair_n:
        log.warning(
            "batch skipped: need %d classes with >=2 samples for npair, got %d",
            config.npair_n,
            len(eligible),
        )
        return None
    chosen = rng.choice(eligible, size=config.npair_n, replace=False)
    rows = []
    for lab in chosen:
        members = np.flatnonzero(labels == lab)
        pick = rng.choice(members, size=2, replace=False)
        rows.append((int(pick[0]), int(pick[1])))
    idx = np.asarray(rows, dtype=np.int64)
    return TupleBatch("npair", idx, labels[idx])


def metric_weight(j_gen: float, beta: float) -> float:
    """Blend weight exp(-beta / j_gen) on the original-tuple loss.

    A struggling generator (large j_gen) pushes the weight toward 1 so the
    synthetic loss barely counts; j_gen = 0 maps to 0.
    """
    if beta <= 0:
        raise InputError(f"beta must be positive, got {beta}")
    if j_gen <= 0.0:
        return 0.0
    if math.isinf(j_gen):
        return 1.0
    return math.exp(-beta / j_gen)


def _check_finite(value: float, component: str) -> float:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite {component}: {value}")
    return value


def _synthetic_tuples(aug: AugmentedTuple, member_features: np.ndarray, hardened_features: np.ndarray):
    """Stack synthetic features into one matrix and index a tuple batch over it.

    Member features arrive in augment order (anchors, then positives, then,
    for triplets, the reconstructed original negatives, which take no part
    in the synthetic tuple). Hardened rows are appended at the end.
    """
    if aug.kind == "triplet":
        t = aug.size
        rows = np.vstack([member_features[: 2 * t], hardened_features])
        idx = np.column_stack([np.arange(t), t + np.arange(t), 2 * t + np.arange(t)])
        labels = np.column_stack([aug.anchor_labels, aug.anchor_labels, aug.negative_labels])
        return rows, TupleBatch("triplet", idx, labels, flavor="synthetic")
    n = aug.size
    hard_flat = hardened_features.reshape(n * (n - 1), -1) if hardened_features.size else hardened_features
    rows = np.vstack([member_features, hard_flat])
    idx = np.column_stack([np.arange(n), n + np.arange(n)])
    pair_labels = np.column_stack([aug.anchor_labels, aug.anchor_labels])
    neg_idx = 2 * n + np.arange(n * (n - 1)).reshape(n, n - 1)
    return rows, TupleBatch("npair", idx, pair_labels, negative_indices=neg_idx, flavor="synthetic")


def _member_rows(aug: AugmentedTuple) -> tuple[np.ndarray, np.ndarray]:
    """Batch row indices of the unaltered tuple members, plus the hardened
    embeddings flattened to a matrix."""
    if aug.kind == "triplet":
        member_idx = np.concatenate([aug.anchor_idx, aug.positive_idx, aug.negative_idx])
        hardened = aug.hardened_negatives
    else:
        member_idx = np.concatenate([aug.anchor_idx, aug.positive_idx])
        n = aug.size
        hardened = aug.hardened_negatives.reshape(n * (n - 1), -1)
    return member_idx, hardened


def train_step(
    models: Models,
    x,
    labels,
    state: TrainState,
    config: TrainConfig,
    update_metric: bool = True,
    update_generator: bool = True,
    update_classifier: bool = True,
) -> LogRow | None:
    """One simultaneous update of all parameter partitions on one batch.

    Returns the logged row, or None when no tuples could be mined. The
    update_* flags gate which partitions are touched; they exist for the
    gradient-routing tests and for ablations, and default to a full step.
    """
    loss_cfg = config.loss_config()
    tuples = mine_tuples(labels, config.loss_kind, config, state.rng)
    if tuples is None:
        state.skipped_batches += 1
        return None

    features, ext_tapes = extract(models.embedder, x, labels=labels)
    emb, proj_tape = project(models.embedder, features)
    j_m, grad_z_m = batch_metric_loss(emb.embeddings, tuples, loss_cfg)
    _check_finite(j_m, "metric loss over original tuples")
    lam = pulling_lambda(state.augmentor)

    if not config.synthetics:
        if update_metric:
            grads = embed_backward(models.embedder, EmbedTape(ext_tapes, proj_tape), grad_z_m)
            state.adam_extractor.step([g for pair in grads.extractor for g in pair])
            state.adam_projector.step(list(grads.projector))
        row = LogRow(state.step, state.epoch, j_m, 0.0, 0.0, 0.0, 0.0, 1.0, lam)
        state.step += 1
        state.history.append(row)
        return row

    aug = augment_tuples(emb, tuples, state.augmentor, fixed_reference=config.fixed_reference_distance)
    member_idx, hardened_emb = _member_rows(aug)
    hard_labels = aug.negative_labels.reshape(-1)
    gen_result = generator_loss(
        models.generator,
        models.classifier,
        features.features[member_idx],
        emb.embeddings[member_idx],
        hardened_emb,
        hard_labels,
        config.lambda_balance,
    )
    j_gen = gen_result.breakdown.j_gen
    w = metric_weight(j_gen, config.beta)

    syn_rows, syn_tuples = _synthetic_tuples(aug, gen_result.member_features, gen_result.hardened_features)
    syn_batch = FeatureBatch(syn_rows, np.arange(syn_rows.shape[0]))
    syn_emb, syn_tape = project(models.embedder, syn_batch)
    j_syn, grad_z_syn = batch_metric_loss(syn_emb.embeddings, syn_tuples, loss_cfg)
    _check_finite(j_syn, "metric loss over synthetic tuples")

    if update_metric:
        # original path reaches the extractor; both paths reach the projector
        grads = embed_backward(models.embedder, EmbedTape(ext_tapes, proj_tape), w * grad_z_m)
        _, syn_proj_grads = project_backward(models.embedder, syn_tape, (1.0 - w) * grad_z_syn)
        proj_w = grads.projector[0] + syn_proj_grads[0]
        proj_b = grads.projector[1] + syn_proj_grads[1]
        state.adam_extractor.step([g for pair in grads.extractor for g in pair])
        state.adam_projector.step([proj_w, proj_b])
    if update_generator:
        state.adam_generator.step([g for pair in gen_result.grads for g in pair])
    if update_classifier:
        classifier_step(
            models.classifier,
            features.features,
            labels,
            learning_rate=config.learning_rate * config.fc_lr_multiplier,
            optimizer=state.adam_classifier,
        )

    row = LogRow(
        state.step,
        state.epoch,
        j_m,
        j_syn,
        j_gen,
        gen_result.breakdown.j_recon,
        gen_result.breakdown.j_soft,
        w,
        lam,
    )
    state.step += 1
    state.history.append(row)
    return row


@dataclass
class EvalPoint:
    epoch: int
    report: EvalReport


@dataclass
class TrainResult:
    models: Models
    state: TrainState
    config: TrainConfig
    split: ZeroShotSplit
    label_map: dict[int, int]
    final_report: EvalReport
    eval_history: list[EvalPoint]
    elapsed_seconds: float


def _remap_labels(labels: np.ndarray) -> tuple[np.ndarray, dict[int, int]]:
    classes = np.unique(labels)
    mapping = {int(c): i for i, c in enumerate(classes)}
    return np.asarray([mapping[int(l)] for l in labels], dtype=np.int64), mapping


def run_training(dataset: Dataset, config: TrainConfig, out_dir=None) -> TrainResult:
    """Full run: split, train for the configured epochs, evaluate, persist.

    The class-disjoint guarantee of the split is asserted on every run. The
    epoch-mean original-tuple loss is published to the hardness schedule at
    each epoch boundary. With out_dir set, writes curves.csv, manifest.json,
    and checkpoint.npz there.
    """
    if dataset.num_samples == 0:
        raise InputError("dataset is empty")
    started = time.monotonic()
    split = split_zero_shot(dataset, config.train_fraction, config.split_seed)
    assert not np.intersect1d(split.train_classes, split.test_classes).size, "zero-shot guarantee violated"

    train_x, train_labels_orig = take_classes(dataset, split.train_classes)
    test_x, test_labels = take_classes(dataset, split.test_classes)
    train_labels, label_map = _remap_labels(train_labels_orig)

    models = init_models(dataset.input_dim, len(split.train_classes), config)
    state = init_state(models, config)
    eval_history: list[EvalPoint] = []

    n = train_x.shape[0]
    for epoch in range(config.epochs):
        epoch_start_rows = len(state.history)
        order = state.rng.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            if len(rows) < 2:
                continue
            train_step(models, train_x[rows], train_labels[rows], state, config)
        epoch_rows = state.history[epoch_start_rows:]
        if epoch_rows:
            # the schedule sees the epoch mean only at the boundary
            state.augmentor.j_avg = float(np.mean([r.j_m for r in epoch_rows]))
        log.info(
            "epoch %d: j_m=%.4f lambda=%.4f steps=%d",
            epoch,
            float(np.mean([r.j_m for r in epoch_rows])) if epoch_rows else float("nan"),
            pulling_lambda(state.augmentor),
            len(epoch_rows),
        )
        state.epoch += 1
        if config.eval_every and (epoch + 1) % config.eval_every == 0 and epoch + 1 < config.epochs:
            eval_history.append(EvalPoint(epoch, _evaluate(models, test_x, test_labels, config)))

    final_report = _evaluate(models, test_x, test_labels, config)
    eval_history.append(EvalPoint(config.epochs - 1 if config.epochs else -1, final_report))
    result = TrainResult(
        models,
        state,
        config,
        split,
        label_map,
        final_report,
        eval_history,
        time.monotonic() - started,
    )
    if out_dir is not None:
        write_artifacts(result, out_dir, dataset)
    return result


def _evaluate(models: Models, test_x, test_labels, config: TrainConfig) -> EvalReport:
    emb, _ = embed(models.embedder, test_x, labels=test_labels)
    return evaluate_embeddings(emb.embeddings, test_labels, ks=config.recall_ks, kmeans_seed=0)


def write_curves(history: list[LogRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CURVE_HEADER + "\n")
        for row in history:
            fh.write(row.as_csv() + "\n")


def config_to_dict(config: TrainConfig) -> dict:
    return {
        "loss_kind": config.loss_kind,
        "alpha": config.alpha,
        "beta": config.beta,
        "lambda_balance": config.lambda_balance,
        "margin": config.margin,
        "npair_n": config.npair_n,
        "batch_size": config.batch_size,
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "fc_lr_multiplier": config.fc_lr_multiplier,
        "seed": config.seed,
        "embed_dim": config.embed_dim,
        "eval_every": config.eval_every,
        "hidden_dims": list(config.hidden_dims),
        "generator_hidden_dim": config.generator_hidden_dim,
        "train_fraction": config.train_fraction,
        "split_seed": config.split_seed,
        "normalize_embeddings": config.normalize_embeddings,
        "synthetics": config.synthetics,
        "fixed_reference_distance": config.fixed_reference_distance,
        "recall_ks": list(config.recall_ks),
    }


def write_artifacts(result: TrainResult, out_dir, dataset: Dataset) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_curves(result.state.history, os.path.join(out_dir, "curves.csv"))
    manifest = {
        "config": config_to_dict(result.config),
        "seed": result.config.seed,
        "dataset": {
            "num_samples": dataset.num_samples,
            "num_classes": dataset.num_classes,
            "input_dim": dataset.input_dim,
        },
        "split": {
            "train_classes": result.split.train_classes.tolist(),
            "test_classes": result.split.test_classes.tolist(),
        },
        "label_map": {str(k): v for k, v in result.label_map.items()},
        "skipped_batches": result.state.skipped_batches,
        "final_metrics": result.final_report.to_dict(),
        "elapsed_seconds": result.elapsed_seconds,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    ckpt.save_checkpoint(
        os.path.join(out_dir, "checkpoint.npz"),
        result.models.embedder,
        result.models.generator,
        result.models.classifier,
        meta={"config": config_to_dict(result.config)},
    )
