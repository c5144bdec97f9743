"""Curriculum training loop: Adam, lr/temperature schedules, checkpointing, ablations.

One ``train`` loop serves both the distillation run (student + frozen teacher)
and plain ground-truth training (the teacher itself, or the ablation
baseline): the mode decides which loss terms exist. Batch order is a pure
function of (seed, step), so a run can resume from a checkpoint bit-exactly.

The learning rate stays at its initial value through the layer build-up phase
and decays linearly to zero afterwards; the softmax temperature decays
linearly from its initial value to 1 over the same final phase.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .corpus import QAExample, batch_arrays, evaluate
from .distill import (
    DistillTargets,
    LossParts,
    LossSchedule,
    ProjectionSet,
    attention_loss_from_pooled,
    buildup_steps,
    combine_gated,
    embedding_loss,
    gates_for,
    ground_truth_loss,
    hidden_loss_from_pooled,
    softmax_distillation_loss,
    targets_from_signals,
)
from .errors import ConfigError, ContractError, TrainingError
from .model import predict_spans
from .teacher import check_pairing, skip_map, teacher_forward

MODES = ("baseline", "softmax_distil", "all_layer_distil", "slow_build", "slow_build_augmented")


@dataclass
class TrainConfig:
    """Optimization hyperparameters; the published run's values are the defaults."""

    mode: str = "slow_build"
    seed: int = 0
    init_lr: float = 2e-4
    batch_size: int = 24
    dropout: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-5
    init_temperature: float = 5.0
    final_temperature: float = 1.0
    steps_per_block: int = 57_500
    n_blocks: int = 8
    total_steps: int = 1_000_000
    epochs: int = 0  # when > 0 and total_steps == 0, sized from the corpus
    embed_weight: float = 1.0
    hidden_weight: float = 1.2
    attention_weight: float = 1.4
    soft_weight: float = 1.0
    truth_weight: float = 1.0
    weight_decay: float = 0.0  # off: not part of the published recipe
    warmup_steps: int = 0  # off: not part of the published recipe
    grad_clip: float = 0.0  # off: not part of the published recipe
    checkpoint_every: int = 0  # 0: only at phase boundaries and the end
    log_every: int = 1
    null_threshold: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("embed_weight", "hidden_weight", "attention_weight", "soft_weight", "truth_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.batch_size < 1 or self.total_steps < 0 or self.steps_per_block < 1:
            raise ConfigError("batch_size, total_steps, steps_per_block must be positive")
        if self.final_temperature < 1.0 or self.init_temperature < self.final_temperature:
            raise ConfigError("need init_temperature >= final_temperature >= 1")
        if self.dropout != 0.0:
            raise ConfigError("dropout is fixed at 0 (the published recipe); the knob exists for config echo only")

    @classmethod
    def small(cls, mode: str = "slow_build", seed: int = 0) -> "TrainConfig":
        """Workstation preset: the final phase holds >= 50% of all steps."""
        return cls(
            mode=mode,
            seed=seed,
            batch_size=8,
            steps_per_block=380,
            n_blocks=4,
            total_steps=4000,
        )

    def validate_steps(self):
        if self.mode in ("slow_build", "slow_build_augmented"):
            boundary = buildup_steps(self.n_blocks, self.steps_per_block)
            if self.total_steps <= boundary:
                raise ConfigError(
                    f"slow build needs total_steps > {boundary}, got {self.total_steps}"
                )

    def schedule(self) -> LossSchedule:
        return LossSchedule(
            steps_per_block=self.steps_per_block,
            embed_weight=self.embed_weight,
            hidden_weight=self.hidden_weight,
            attention_weight=self.attention_weight,
            soft_weight=self.soft_weight,
            truth_weight=self.truth_weight,
            temperature=self.init_temperature,
        )


def buildup_boundary(config: TrainConfig) -> int:
    return buildup_steps(config.n_blocks, config.steps_per_block)


def lr_at(config: TrainConfig, step: int) -> float:
    """Constant through the build-up phase, then linear to 0 at the last step."""
    if not 0 <= step <= config.total_steps:
        raise ContractError(f"step {step} outside 0..{config.total_steps}")
    if config.warmup_steps and step < config.warmup_steps:
        return config.init_lr * (step + 1) / config.warmup_steps
    boundary = buildup_boundary(config)
    if step <= boundary or config.total_steps <= boundary:
        return config.init_lr
    return config.init_lr * (config.total_steps - step) / (config.total_steps - boundary)


def temperature_at(config: TrainConfig, step: int) -> float:
    """Initial temperature through build-up, then linear to the final value."""
    boundary = buildup_boundary(config)
    if step <= boundary or config.total_steps <= boundary:
        return config.init_temperature
    frac = (step - boundary) / (config.total_steps - boundary)
    return config.init_temperature + (config.final_temperature - config.init_temperature) * frac


def batch_indices(n_examples: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Deterministic batch for a global step: per-epoch shuffles keyed by (seed, epoch)."""
    if n_examples < batch_size:
        raise ConfigError(f"corpus of {n_examples} examples smaller than batch {batch_size}")
    steps_per_epoch = n_examples // batch_size
    epoch, slot = divmod(step, steps_per_epoch)
    perm = np.random.default_rng([seed, 0xBA7C, epoch]).permutation(n_examples)
    return perm[slot * batch_size:(slot + 1) * batch_size]


class Adam:
    """Adam with bias correction and per-parameter step counts.

    Parameters that received no gradient this step are skipped outright, so
    weights sitting behind inactive loss gates stay bit-identical.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, epsilon=1e-5, weight_decay=0.0):
        self.params = list(params)
        names = [name for name, _p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in optimizer")
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.t = {name: 0 for name, _p in self.params}

    def step(self, lr: float, grad_clip: float = 0.0):
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if grad_clip > 0.0:
                norm = float(np.linalg.norm(g))
                if norm > grad_clip:
                    g = g * (grad_clip / norm)
            self.t[name] += 1
            t = self.t[name]
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            mhat = m / (1.0 - self.beta1 ** t)
            vhat = v / (1.0 - self.beta2 ** t)
            delta = mhat / (np.sqrt(vhat) + self.epsilon)
            if self.weight_decay:
                delta = delta + self.weight_decay * p.data
            p.data = p.data - lr * delta

    def zero_grad(self):
        for _name, p in self.params:
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state(self, path: str, t_counts: Dict[str, int]):
        for name, p in self.params:
            self.m[name] = checkpoint.load_array(path, f"m.{name}", p.data.shape)
            self.v[name] = checkpoint.load_array(path, f"v.{name}", p.data.shape)
            self.t[name] = int(t_counts[name])


@dataclass
class TrainResult:
    model: object
    history: List[dict] = field(default_factory=list)
    projections: Optional[ProjectionSet] = None


class TeacherSignalCache:
    """Pooled distillation targets per example, computed once and reused.

    The teacher is frozen, so its pooled hidden states, pooled attention
    scores, embeddings, and logits are constants of each example. Per-example
    forward results are batch-composition independent, so lazily filling the
    cache in whatever batch order training visits is bit-for-bit equivalent
    to recomputing every step.
    """

    def __init__(self, teacher, n_student_blocks: int):
        check_ratio = teacher.config.n_layers
        self.layer_map = [
            skip_map(j, n_student_blocks, check_ratio) for j in range(n_student_blocks)
        ]
        self.teacher = teacher
        self._store: Dict[str, DistillTargets] = {}

    def __len__(self):
        return len(self._store)

    def targets(self, examples, arrays) -> DistillTargets:
        missing = [i for i, ex in enumerate(examples) if ex.qas_id not in self._store]
        if missing:
            sub_ids = arrays["token_ids"][missing]
            sub_mask = arrays["attention_mask"][missing]
            sub_types = arrays["token_type_ids"][missing]
            signals = teacher_forward(self.teacher, sub_ids, sub_mask, sub_types)
            pooled = targets_from_signals(signals, self.layer_map, sub_mask)
            for row, i in enumerate(missing):
                self._store[examples[i].qas_id] = DistillTargets(
                    embeddings=pooled.embeddings[row],
                    pooled_hidden=[h[row] for h in pooled.pooled_hidden],
                    hidden_counted=pooled.hidden_counted[row],
                    pooled_scores=[s[row] for s in pooled.pooled_scores],
                    scores_counted=pooled.scores_counted[row],
                    start_logits=pooled.start_logits[row],
                    end_logits=pooled.end_logits[row],
                )
        rows = [self._store[ex.qas_id] for ex in examples]
        n_blocks = len(self.layer_map)
        return DistillTargets(
            embeddings=np.stack([r.embeddings for r in rows]),
            pooled_hidden=[np.stack([r.pooled_hidden[j] for r in rows]) for j in range(n_blocks)],
            hidden_counted=np.stack([r.hidden_counted for r in rows]),
            pooled_scores=[np.stack([r.pooled_scores[j] for r in rows]) for j in range(n_blocks)],
            scores_counted=np.stack([r.scores_counted for r in rows]),
            start_logits=np.stack([r.start_logits for r in rows]),
            end_logits=np.stack([r.end_logits for r in rows]),
        )


def _compute_parts(record, targets: Optional[DistillTargets], projections, gates, schedule, arrays):
    mask = arrays["attention_mask"]
    n_blocks = len(record.hidden_states)
    parts = LossParts(hidden=[None] * n_blocks, attention=[None] * n_blocks)
    if gates.embed:
        parts.embed = embedding_loss(
            targets.embeddings, record.embeddings, projections.embed_proj, mask
        )
    for j in range(gates.active_blocks):
        parts.hidden[j] = hidden_loss_from_pooled(
            targets.pooled_hidden[j], targets.hidden_counted,
            record.hidden_states[j], projections.hidden_proj,
        )
        parts.attention[j] = attention_loss_from_pooled(
            targets.pooled_scores[j], targets.scores_counted, record.attention_scores[j]
        )
    if gates.soft:
        parts.soft = softmax_distillation_loss(
            targets.start_logits, targets.end_logits,
            record.start_logits, record.end_logits,
            schedule.temperature, mask,
        )
    if gates.truth:
        parts.truth = ground_truth_loss(
            record.start_logits, record.end_logits,
            arrays["start_targets"], arrays["end_targets"], arrays["has_label"], mask,
        )
    return parts


def _phase_boundaries(config: TrainConfig) -> set:
    return {(j + 1) * config.steps_per_block for j in range(config.n_blocks + 1)}


def train(
    model,
    teacher,
    examples: Sequence[QAExample],
    config: TrainConfig,
    out_dir: Optional[str] = None,
    resume_from: Optional[str] = None,
    signal_cache: Optional[TeacherSignalCache] = None,
) -> TrainResult:
    """Run the training loop; returns the trained model plus per-step metrics.

    ``teacher`` may be None only for the ground-truth-only baseline mode (that
    is also how the teacher itself gets trained). With ``out_dir`` set, a
    metrics line per logged step goes to metrics.jsonl and checkpoints land in
    step-numbered subdirectories. ``resume_from`` restores a saved training
    state and continues to ``config.total_steps``. ``signal_cache`` lets
    several runs against the same frozen teacher share pooled targets.
    """
    config = _resolve_steps(config, len(examples))
    config.validate_steps()
    needs_teacher = config.mode != "baseline"
    if needs_teacher:
        if teacher is None:
            raise ConfigError(f"mode {config.mode} needs a teacher")
        check_pairing(teacher.config, model.config)
    if config.mode != "baseline" and getattr(model.config, "n_encoder_blocks", None) != config.n_blocks:
        raise ConfigError(
            f"config.n_blocks {config.n_blocks} != student blocks {model.config.n_encoder_blocks}"
        )
    if not any(ex.has_label for ex in examples) and config.mode in ("baseline", "softmax_distil"):
        raise ConfigError(f"mode {config.mode} needs labeled examples")

    schedule = config.schedule()
    projections = None
    if needs_teacher:
        projections = ProjectionSet.for_pair(model.config, teacher.config, config.seed + 1)

    trainable = list(model.trainable())
    if projections is not None:
        trainable += projections.trainable()
    optimizer = Adam(
        trainable,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
        weight_decay=config.weight_decay,
    )

    start_step = 0
    if resume_from:
        start_step = _load_train_state(resume_from, model, projections, optimizer)

    history: List[dict] = []
    metrics_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(
            os.path.join(out_dir, "metrics.jsonl"), "a" if resume_from else "w"
        )
    boundaries = _phase_boundaries(config)
    if needs_teacher and signal_cache is None:
        signal_cache = TeacherSignalCache(teacher, config.n_blocks)

    try:
        for step in range(start_step, config.total_steps):
            idx = batch_indices(len(examples), config.batch_size, config.seed, step)
            batch = [examples[i] for i in idx]
            arrays = batch_arrays(batch)
            gates = gates_for(config.mode, step, schedule, config.n_blocks)
            schedule.temperature = temperature_at(config, step)

            targets = None
            if gates.embed or gates.active_blocks or gates.soft:
                targets = signal_cache.targets(batch, arrays)

            with T.Tape() as tape:
                record = model.forward(
                    arrays["token_ids"], arrays["attention_mask"], arrays["token_type_ids"]
                )
                parts = _compute_parts(
                    record, targets, projections, gates, schedule, arrays
                )
                total, report = combine_gated(parts, schedule, gates)
                if not np.isfinite(report.total):
                    raise TrainingError(
                        f"non-finite loss at step {step}: {report.json_payload()}", step=step
                    )
                tape.backward(total)

            lr = lr_at(config, step)
            optimizer.step(lr, grad_clip=config.grad_clip)
            optimizer.zero_grad()

            if step % config.log_every == 0 or step + 1 == config.total_steps:
                line = {"step": step}
                line.update(report.json_payload())
                line["lr"] = lr
                line["T"] = schedule.temperature
                history.append(line)
                if metrics_fh:
                    metrics_fh.write(json.dumps(line) + "\n")

            done = step + 1
            want_ckpt = (
                done in boundaries
                or (config.checkpoint_every and done % config.checkpoint_every == 0)
                or done == config.total_steps
            )
            if out_dir and want_ckpt:
                save_train_state(
                    os.path.join(out_dir, f"step-{done:07d}"),
                    model, projections, optimizer, done, config,
                )
    finally:
        if metrics_fh:
            metrics_fh.close()

    return TrainResult(model=model, history=history, projections=projections)


def _resolve_steps(config: TrainConfig, n_examples: int) -> TrainConfig:
    if config.total_steps == 0:
        if config.epochs <= 0:
            raise ConfigError("need total_steps > 0 or epochs > 0")
        steps_per_epoch = max(1, n_examples // config.batch_size)
        kwargs = asdict(config)
        kwargs["total_steps"] = config.epochs * steps_per_epoch
        return TrainConfig(**kwargs)
    return config


# ---------------------------------------------------------------------------
# train-state persistence (model + projections + optimizer + counters)


def save_train_state(path, model, projections, optimizer, step, config):
    checkpoint.save_model(os.path.join(path, "model"), model, step=step)
    checkpoint.save_arrays(os.path.join(path, "optim"), optimizer.state_arrays())
    if projections is not None:
        checkpoint.save_arrays(
            os.path.join(path, "proj"),
            {name: p.data for name, p in projections.trainable()},
        )
    state = {"step": step, "adam_t": optimizer.t, "config": asdict(config)}
    with open(os.path.join(path, "train_state.json"), "w") as fh:
        json.dump(state, fh, indent=1)


def _load_train_state(path, model, projections, optimizer) -> int:
    with open(os.path.join(path, "train_state.json")) as fh:
        state = json.load(fh)
    restored, _step = checkpoint.load_model(os.path.join(path, "model"))
    for name, p in model.params.items():
        p.data = restored.params[name].data
    if projections is not None:
        for name, p in projections.trainable():
            p.data = checkpoint.load_array(os.path.join(path, "proj"), name, p.data.shape)
    optimizer.load_state(os.path.join(path, "optim"), state["adam_t"])
    return int(state["step"])


# ---------------------------------------------------------------------------
# evaluation and orchestration


def predict(model, examples: Sequence[QAExample], batch_size: int = 16,
            null_threshold: float = 0.0, max_answer_len: int = 30) -> Dict[str, Optional[str]]:
    """Greedy span predictions (None for null) keyed by qas id."""
    out: Dict[str, Optional[str]] = {}
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo:lo + batch_size]
        arrays = batch_arrays(chunk)
        with T.no_grad():
            rec = model.forward(
                arrays["token_ids"], arrays["attention_mask"], arrays["token_type_ids"]
            )
        spans = predict_spans(
            rec.start_logits.data, rec.end_logits.data, arrays["context_bounds"],
            null_threshold=null_threshold, max_answer_len=max_answer_len,
        )
        for ex, span in zip(chunk, spans):
            out[ex.qas_id] = ex.span_text(span)
    return out


def evaluate_model(model, examples: Sequence[QAExample], batch_size: int = 16,
                   null_threshold: float = 0.0):
    preds = predict(model, examples, batch_size=batch_size, null_threshold=null_threshold)
    em, f1 = evaluate([preds[ex.qas_id] for ex in examples], examples)
    return em, f1, preds


def majority_null_baseline(examples: Sequence[QAExample]) -> float:
    """EM of always answering null; the bar any trained model must clear."""
    preds = [None] * len(examples)
    em, _f1 = evaluate(preds, examples)
    return em


def train_teacher(teacher, train_examples, config: TrainConfig, dev_examples):
    """Ground-truth training for the teacher; returns (result, dev_em, dev_f1)."""
    cfg = TrainConfig(**{**asdict(config), "mode": "baseline"})
    result = train(teacher, None, train_examples, cfg)
    em, f1, _ = evaluate_model(teacher, dev_examples, null_threshold=cfg.null_threshold)
    return result, em, f1


def run_ablation(student_builder, teacher, train_examples, augment_examples, dev_examples,
                 base_config: TrainConfig, out_dir: Optional[str] = None):
    """Train one student per mode and report dev EM/F1 in ablation-table order.

    ``student_builder`` is a zero-argument callable returning a freshly
    initialized student (same seed each time, so modes differ only in the
    objective). The augmented mode appends the unlabeled examples to the
    labeled set.
    """
    rows = []
    cache = TeacherSignalCache(teacher, base_config.n_blocks)
    for mode in MODES:
        student = student_builder()
        cfg = TrainConfig(**{**asdict(base_config), "mode": mode})
        examples = list(train_examples)
        if mode == "slow_build_augmented":
            examples = examples + list(augment_examples)
        mode_dir = os.path.join(out_dir, mode) if out_dir else None
        train(student, teacher, examples, cfg, out_dir=mode_dir, signal_cache=cache)
        em, f1, _ = evaluate_model(student, dev_examples, null_threshold=cfg.null_threshold)
        rows.append({"mode": mode, "em": em, "f1": f1})
    return rows
