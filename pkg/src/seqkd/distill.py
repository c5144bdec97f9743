"""Distillation losses, teacher/student sequence alignment, and curriculum gating.

Five losses supervise the student:

* embedding loss: MSE between teacher embeddings and projected student
  embeddings, over valid positions.
* hidden loss (per block): the teacher's hidden states are average-pooled 4x
  along the sequence (over valid source positions only) and compared, after a
  shared learned projection, with the student block's quarter-length states.
* attention loss (per block): teacher pre-softmax attention scores are 4x4
  max-pooled, with masked entries excluded from every window max, and compared
  per head with the student's quarter-length scores. Cells with no valid
  teacher member or an invalid student position contribute nothing, so the
  loss never chases the masking value.
* soft-target loss: temperature-softened cross-entropy between teacher and
  student start/end distributions, scaled by temperature^2.
* ground-truth loss: cross-entropy at the labeled span endpoints, skipped for
  augmented examples that carry no label.

Losses activate bottom-up: block j joins the objective once the global step
reaches (j + 1) * steps_per_block, and the soft-target + ground-truth pair
joins in the final phase after every block is active. MSE losses are averaged
over counted elements per example, then over the batch, so the loss weights
stay scale-free across sequence lengths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, ContractError, DataError, DimensionError, LengthError
from .model import truncated_normal


@dataclass
class LossSchedule:
    """Loss weights, per-block step budget, and softmax temperature."""

    steps_per_block: int
    embed_weight: float = 1.0
    hidden_weight: float = 1.2
    attention_weight: float = 1.4
    soft_weight: float = 1.0
    truth_weight: float = 1.0
    temperature: float = 5.0

    def __post_init__(self):
        if self.steps_per_block <= 0:
            raise ConfigError(f"steps_per_block must be positive, got {self.steps_per_block}")
        for name in ("embed_weight", "hidden_weight", "attention_weight", "soft_weight", "truth_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.temperature < 1.0:
            raise ConfigError(f"temperature must be >= 1, got {self.temperature}")


@dataclass
class LossParts:
    """Per-batch loss tensors; None marks a part that was not computed."""

    embed: Optional[T.Tensor] = None
    hidden: List[Optional[T.Tensor]] = field(default_factory=list)
    attention: List[Optional[T.Tensor]] = field(default_factory=list)
    soft: Optional[T.Tensor] = None
    truth: Optional[T.Tensor] = None


@dataclass
class LossReport:
    """Scalar view of one batch's losses, for logging and assertions."""

    embed: Optional[float]
    hidden: List[Optional[float]]
    attention: List[Optional[float]]
    soft: Optional[float]
    truth: Optional[float]
    total: float
    active_layer_count: int

    def json_payload(self):
        """Keys follow the metrics-line schema consumed downstream."""
        return {
            "L_e": self.embed,
            "L_h": self.hidden,
            "L_a": self.attention,
            "L_d": self.soft,
            "L_g": self.truth,
            "total": self.total,
            "active_layers": self.active_layer_count,
        }


@dataclass
class Gates:
    """Which loss terms are live at the current step."""

    embed: bool
    active_blocks: int
    soft: bool
    truth: bool


class ProjectionSet:
    """Learned student->teacher projections, trained alongside the student.

    One hidden projection is shared by every encoder block, and both matrices
    are dropped from inference checkpoints.
    """

    def __init__(self, embedding_size, teacher_embedding_size, hidden_size, teacher_hidden_size, seed):
        rng = np.random.default_rng(seed)
        self.embed_proj = T.parameter(
            truncated_normal(rng, (embedding_size, teacher_embedding_size)), name="proj.embed"
        )
        self.hidden_proj = T.parameter(
            truncated_normal(rng, (hidden_size, teacher_hidden_size)), name="proj.hidden"
        )

    @classmethod
    def for_pair(cls, student_cfg, teacher_cfg, seed: int) -> "ProjectionSet":
        return cls(
            student_cfg.embedding_size,
            teacher_cfg.hidden_size,
            student_cfg.hidden_size,
            teacher_cfg.hidden_size,
            seed,
        )

    def trainable(self):
        return [("proj.embed", self.embed_proj), ("proj.hidden", self.hidden_proj)]

    def zero_grad(self):
        self.embed_proj.zero_grad()
        self.hidden_proj.zero_grad()


def block_gate(block_index: int, step: int, steps_per_block: int) -> int:
    """1 once ``step`` reaches (block_index + 1) * steps_per_block, else 0.

    The boundary step itself activates the block (a step-function that is 1
    at zero), so with an N-block student the final phase starts at exactly
    (N + 1) * steps_per_block.
    """
    if block_index < 0:
        raise ContractError(f"block_index must be >= 0, got {block_index}")
    return 1 if step >= (block_index + 1) * steps_per_block else 0


def buildup_steps(n_blocks: int, steps_per_block: int) -> int:
    """Length of the layer-by-layer phase: blocks 0..N-1 plus the final gate."""
    return (n_blocks + 1) * steps_per_block


def gates_for(mode: str, step: int, schedule: LossSchedule, n_blocks: int) -> Gates:
    """Loss gating per training mode; the slow-build modes follow block_gate."""
    if mode == "baseline":
        return Gates(embed=False, active_blocks=0, soft=False, truth=True)
    if mode == "softmax_distil":
        return Gates(embed=False, active_blocks=0, soft=True, truth=True)
    if mode == "all_layer_distil":
        return Gates(embed=True, active_blocks=n_blocks, soft=True, truth=True)
    if mode in ("slow_build", "slow_build_augmented"):
        active = sum(block_gate(j, step, schedule.steps_per_block) for j in range(n_blocks))
        final = bool(block_gate(n_blocks, step, schedule.steps_per_block))
        return Gates(embed=True, active_blocks=active, soft=final, truth=final)
    raise ConfigError(f"unknown training mode {mode!r}")


# ---------------------------------------------------------------------------
# individual losses


def _per_example_weights(counted: np.ndarray, per_cell: int, batch: int) -> np.ndarray:
    """counted -> weight array w with sum(w * sq_err) == batch-mean of per-example MSE.

    counted: (B, ...) 0/1 array of counted cells; per_cell: elements per cell
    (channels), included in each example's denominator.
    """
    counts = counted.reshape(counted.shape[0], -1).sum(axis=1)
    denom = np.maximum(counts, 1) * per_cell * batch
    shape = (counted.shape[0],) + (1,) * (counted.ndim - 1)
    return counted / denom.reshape(shape)


def embedding_loss(
    teacher_embeddings: np.ndarray,
    student_embeddings: T.Tensor,
    embed_proj: T.Tensor,
    valid_mask: np.ndarray,
) -> T.Tensor:
    """Batch-mean MSE between teacher embeddings and projected student embeddings."""
    B, l, e = teacher_embeddings.shape
    if student_embeddings.shape[:2] != (B, l):
        raise DimensionError(
            f"embedding shapes differ: teacher {teacher_embeddings.shape}, "
            f"student {student_embeddings.shape}"
        )
    if embed_proj.shape != (student_embeddings.shape[2], e):
        raise DimensionError(
            f"embedding projection {embed_proj.shape} cannot map "
            f"{student_embeddings.shape} onto {teacher_embeddings.shape}"
        )
    proj = T.matmul(student_embeddings, embed_proj)
    sq = T.square(proj - T.constant(teacher_embeddings))
    w = _per_example_weights(valid_mask.astype(float), e, B)
    return (sq * T.constant(w[:, :, None])).sum()


def pooled_teacher_hidden(teacher_hidden: np.ndarray, valid_mask: np.ndarray, size: int = 4):
    """Window mean over valid source positions; returns (pooled, counted).

    Windows with no valid member come back zeroed with counted == 0.
    """
    B, l, d = teacher_hidden.shape
    if l % size:
        raise LengthError(f"teacher length {l} not divisible by pool size {size}")
    vm = valid_mask.astype(float)
    masked = teacher_hidden * vm[:, :, None]
    sums = masked.reshape(B, l // size, size, d).sum(axis=2)
    counts = vm.reshape(B, l // size, size).sum(axis=2)
    pooled = sums / np.maximum(counts, 1.0)[:, :, None]
    return pooled, (counts > 0).astype(float)


def hidden_loss_from_pooled(
    pooled: np.ndarray,
    counted: np.ndarray,
    student_hidden: T.Tensor,
    hidden_proj: T.Tensor,
) -> T.Tensor:
    """Weighted-MSE core shared by the live and cached teacher paths."""
    B, n, d = pooled.shape
    if student_hidden.shape[:2] != (B, n):
        raise DimensionError(
            f"student hidden {student_hidden.shape} does not align with pooled teacher {pooled.shape}"
        )
    if hidden_proj.shape != (student_hidden.shape[2], d):
        raise DimensionError(
            f"hidden projection {hidden_proj.shape} cannot map "
            f"{student_hidden.shape} onto pooled teacher {pooled.shape}"
        )
    proj = T.matmul(student_hidden, hidden_proj)
    sq = T.square(proj - T.constant(pooled))
    w = _per_example_weights(counted.astype(float), d, B)
    return (sq * T.constant(w[:, :, None])).sum()


def hidden_loss(
    teacher_hidden: np.ndarray,
    student_hidden: T.Tensor,
    hidden_proj: T.Tensor,
    valid_mask: np.ndarray,
) -> T.Tensor:
    """MSE between 4x-average-pooled teacher states and projected student states.

    ``valid_mask`` is the full-length mask; the pooled mean runs over valid
    source positions only, and windows with none drop out of the loss, so
    values stored at masked positions can never influence the result.
    """
    pooled, counted = pooled_teacher_hidden(teacher_hidden, valid_mask)
    return hidden_loss_from_pooled(pooled, counted, student_hidden, hidden_proj)


def pooled_teacher_scores(teacher_scores: np.ndarray, valid_mask: np.ndarray, size: int = 4):
    """Masked 4x4 window max of attention scores; returns (pooled, counted).

    Masked (query, key) cells are excluded from each window's max (not fed in
    at the masking value); windows with no valid member come back zeroed with
    counted == 0.
    """
    B, h, l, _ = teacher_scores.shape
    vm = valid_mask.astype(bool)
    pair_valid = vm[:, None, :, None] & vm[:, None, None, :]
    masked = np.where(pair_valid, teacher_scores, -np.inf)
    pooled, _arg = kernels.maxpool2d(np.ascontiguousarray(masked.reshape(B * h, l, l)), size)
    pooled = pooled.reshape(B, h, l // size, l // size)
    counted = np.isfinite(pooled)
    return np.where(counted, pooled, 0.0), counted.astype(float)


def attention_loss_from_pooled(
    pooled: np.ndarray,
    counted: np.ndarray,
    student_scores: T.Tensor,
) -> T.Tensor:
    """Weighted-MSE core shared by the live and cached teacher paths.

    ``counted`` must already combine teacher-window and student validity; it
    broadcasts across the head axis.
    """
    B = pooled.shape[0]
    if student_scores.shape != pooled.shape:
        raise DimensionError(
            f"student scores {student_scores.shape} do not align with pooled teacher {pooled.shape}"
        )
    counted = np.broadcast_to(counted.astype(float), pooled.shape)
    w = _per_example_weights(counted, 1, B)
    sq = T.square(student_scores - T.constant(pooled))
    return (sq * T.constant(w)).sum()


def attention_loss(
    teacher_scores: np.ndarray,
    student_scores: T.Tensor,
    teacher_mask: np.ndarray,
    compressed_mask: np.ndarray,
) -> T.Tensor:
    """Per-head MSE between max-pooled teacher scores and student scores.

    Counted cells need a valid teacher window member and a valid student
    (query, key) pair; everything else contributes exactly zero. Averaged over
    counted cells and heads per example, then over the batch.
    """
    B, h, l, _ = teacher_scores.shape
    if student_scores.shape[1] != h:
        raise ConfigError(
            f"attention loss is per head: teacher has {h}, student {student_scores.shape[1]}"
        )
    if student_scores.shape[2:] != (l // 4, l // 4):
        raise DimensionError(
            f"student scores {student_scores.shape} do not align with teacher {teacher_scores.shape}"
        )
    pooled, counted = pooled_teacher_scores(teacher_scores, teacher_mask)
    cm = compressed_mask.astype(float)
    student_valid = cm[:, None, :, None] * cm[:, None, None, :]
    return attention_loss_from_pooled(pooled, counted * student_valid, student_scores)


def softmax_distillation_loss(
    teacher_start: np.ndarray,
    teacher_end: np.ndarray,
    student_start: T.Tensor,
    student_end: T.Tensor,
    temperature: float,
    valid_mask: np.ndarray,
) -> T.Tensor:
    """Temperature-softened cross-entropy over the sequence positions.

    Start and end losses are averaged; the temperature^2 factor keeps the
    gradient scale comparable as the temperature grows.
    """
    if temperature < 1.0:
        raise ConfigError(f"temperature must be >= 1, got {temperature}")
    B, l = teacher_start.shape
    keep = valid_mask.astype(bool)

    def soft_targets(z):
        z = np.where(keep, z / temperature, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return p  # exactly zero at masked positions

    loss = None
    for t_logits, s_logits in ((teacher_start, student_start), (teacher_end, student_end)):
        p = soft_targets(t_logits)
        logq = T.log_softmax(T.masked_fill(T.scale(s_logits, 1.0 / temperature), keep, -1e9), axis=-1)
        term = (logq * T.constant(-p)).sum()
        loss = term if loss is None else loss + term
    return T.scale(loss, temperature * temperature / (2.0 * B))


def ground_truth_loss(
    student_start: T.Tensor,
    student_end: T.Tensor,
    start_targets: np.ndarray,
    end_targets: np.ndarray,
    has_label: np.ndarray,
    valid_mask: np.ndarray,
) -> T.Tensor:
    """Cross-entropy at the labeled span endpoints, averaged over labeled examples.

    Unlabeled (augmented) examples are skipped entirely; a batch with none
    yields a constant zero.
    """
    B, l = student_start.shape
    labeled = has_label.astype(bool)
    n = int(labeled.sum())
    if n == 0:
        return T.constant(np.zeros(()))
    for name, tgt in (("start", start_targets), ("end", end_targets)):
        bad = labeled & ((tgt < 0) | (tgt >= l) | (valid_mask[np.arange(B), np.clip(tgt, 0, l - 1)] == 0))
        if bad.any():
            raise DataError(f"{name} target outside the valid region for example(s) {np.where(bad)[0].tolist()}")
    keep = valid_mask.astype(bool)
    loss = None
    for s_logits, tgt in ((student_start, start_targets), (student_end, end_targets)):
        onehot = np.zeros((B, l))
        onehot[labeled, tgt[labeled]] = 1.0
        logq = T.log_softmax(T.masked_fill(s_logits, keep, -1e9), axis=-1)
        term = (logq * T.constant(-onehot)).sum()
        loss = term if loss is None else loss + term
    return T.scale(loss, 1.0 / (2.0 * n))


# ---------------------------------------------------------------------------
# pooled target bundle (what the trainer actually feeds the losses)


@dataclass
class DistillTargets:
    """Teacher-side constants for one batch, pooled to student geometry.

    ``hidden_counted`` is the compressed-position validity; ``scores_counted``
    is its (query, key) outer product with a broadcastable head axis. Both are
    recomputed from the attention mask (window validity is separable, so they
    equal what the masked pooling reports).
    """

    embeddings: np.ndarray  # (B, l, e)
    pooled_hidden: List[np.ndarray]  # per student block, (B, l/4, d)
    hidden_counted: np.ndarray  # (B, l/4)
    pooled_scores: List[np.ndarray]  # per student block, (B, h, l/4, l/4)
    scores_counted: np.ndarray  # (B, 1, l/4, l/4)
    start_logits: np.ndarray  # (B, l)
    end_logits: np.ndarray  # (B, l)


def counted_masks(attention_mask: np.ndarray):
    """(hidden_counted, scores_counted) implied by the full-length mask."""
    B, l = attention_mask.shape
    cm = attention_mask.reshape(B, l // 4, 4).max(axis=2).astype(float)
    return cm, (cm[:, None, :, None] * cm[:, None, None, :])


def targets_from_signals(signals, layer_map, attention_mask: np.ndarray) -> DistillTargets:
    """Pool a frozen teacher's raw signals for the mapped layers."""
    hidden_counted, scores_counted = counted_masks(attention_mask)
    pooled_hidden, pooled_scores = [], []
    for t_layer in layer_map:
        ph, _cnt = pooled_teacher_hidden(signals.hidden_states[t_layer], attention_mask)
        pooled_hidden.append(ph)
        ps, _cnt = pooled_teacher_scores(signals.attention_scores[t_layer], attention_mask)
        pooled_scores.append(ps)
    return DistillTargets(
        embeddings=signals.embeddings,
        pooled_hidden=pooled_hidden,
        hidden_counted=hidden_counted,
        pooled_scores=pooled_scores,
        scores_counted=scores_counted,
        start_logits=signals.start_logits,
        end_logits=signals.end_logits,
    )


# ---------------------------------------------------------------------------
# combination


def combine_gated(parts: LossParts, schedule: LossSchedule, gates: Gates):
    """Weighted sum of the active parts; returns (total tensor, LossReport)."""

    def need(tensor, label):
        if tensor is None:
            raise ContractError(f"{label} is active but was not computed")
        return tensor

    total = None

    def accumulate(term):
        nonlocal total
        total = term if total is None else total + term

    if gates.embed and schedule.embed_weight != 0.0:
        accumulate(T.scale(need(parts.embed, "embedding loss"), schedule.embed_weight))
    for j in range(gates.active_blocks):
        accumulate(T.scale(need(parts.hidden[j], f"hidden loss {j}"), schedule.hidden_weight))
        accumulate(T.scale(need(parts.attention[j], f"attention loss {j}"), schedule.attention_weight))
    if gates.soft and schedule.soft_weight != 0.0:
        accumulate(T.scale(need(parts.soft, "soft-target loss"), schedule.soft_weight))
    if gates.truth and schedule.truth_weight != 0.0:
        accumulate(T.scale(need(parts.truth, "ground-truth loss"), schedule.truth_weight))
    if total is None:
        total = T.constant(np.zeros(()))

    def maybe(t):
        return None if t is None else float(t.data)

    report = LossReport(
        embed=maybe(parts.embed),
        hidden=[maybe(t) for t in parts.hidden],
        attention=[maybe(t) for t in parts.attention],
        soft=maybe(parts.soft),
        truth=maybe(parts.truth),
        total=float(total.data),
        active_layer_count=gates.active_blocks,
    )
    return total, report


def total_loss(parts: LossParts, schedule: LossSchedule, step: int, n_blocks: int):
    """The curriculum objective: parts gated by block_gate at ``step``."""
    gates = gates_for("slow_build", step, schedule, n_blocks)
    return combine_gated(parts, schedule, gates)
