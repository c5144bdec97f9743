"""Full-resolution transformer teacher and the block-to-layer skip mapping.

The teacher is a plain BERT-style encoder with a span head. During
distillation it is frozen: ``teacher_forward`` runs outside any gradient tape
and hands back detached numpy signals (embeddings, every block's hidden
states and pre-softmax attention scores, start/end logits).

Distillation reads every third teacher layer: student block j aligns with
teacher layer 3j + 2, so a teacher must be exactly three times as deep as the
student it supervises.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .model import ForwardRecord, TransformerBase

SKIP_STRIDE = 3


@dataclass
class TeacherConfig:
    """Teacher architecture hyperparameters; embedding width equals hidden width."""

    vocab_size: int
    n_layers: int = 12
    hidden_size: int = 96
    n_heads: int = 4
    ff_size: int = 384
    max_seq_len: int = 96

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"{f.name} must be positive, got {getattr(self, f.name)}")
        if self.hidden_size % self.n_heads:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by n_heads {self.n_heads}"
            )
        if self.max_seq_len % 4:
            raise ConfigError(f"max_seq_len {self.max_seq_len} must be divisible by 4")

    @classmethod
    def small(cls, vocab_size: int = 512, max_seq_len: int = 96) -> "TeacherConfig":
        return cls(vocab_size=vocab_size, max_seq_len=max_seq_len)

    @classmethod
    def tiny(cls, vocab_size: int = 64) -> "TeacherConfig":
        return cls(
            vocab_size=vocab_size,
            n_layers=6,
            hidden_size=8,
            n_heads=2,
            ff_size=16,
            max_seq_len=16,
        )


@dataclass
class TeacherSignals:
    """Detached per-batch teacher outputs consumed by the distillation losses."""

    embeddings: np.ndarray  # (B, l, e)
    hidden_states: list  # n_layers arrays (B, l, d)
    attention_scores: list  # n_layers arrays (B, heads, l, l)
    start_logits: np.ndarray  # (B, l)
    end_logits: np.ndarray  # (B, l)
    attention_mask: np.ndarray  # (B, l)


class TeacherModel(TransformerBase):
    kind = "teacher"

    def __init__(self, config: TeacherConfig, seed: int):
        super().__init__()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._embed_params(rng, config.vocab_size, config.hidden_size, config.max_seq_len)
        self._encoder_params(rng, config.n_layers, config.hidden_size, config.ff_size)
        self._dense(rng, "head", config.hidden_size, 2)

    def forward(
        self,
        token_ids: np.ndarray,
        attention_mask: np.ndarray,
        token_type_ids: Optional[np.ndarray] = None,
    ) -> ForwardRecord:
        cfg = self.config
        token_ids = np.asarray(token_ids)
        attention_mask = np.asarray(attention_mask)
        self._check_inputs(token_ids, attention_mask, cfg.vocab_size, cfg.max_seq_len)
        if token_type_ids is None:
            token_type_ids = np.zeros_like(token_ids)

        x = self._embed(token_ids, token_type_ids)
        emb = x
        hidden_states, attention_scores = [], []
        for j in range(cfg.n_layers):
            x, scores = self._encoder_block(j, x, attention_mask, cfg.n_heads)
            hidden_states.append(x)
            attention_scores.append(scores)
        start_logits, end_logits = self._span_head(x, attention_mask)
        return ForwardRecord(
            embeddings=emb,
            hidden_states=hidden_states,
            attention_scores=attention_scores,
            start_logits=start_logits,
            end_logits=end_logits,
            attention_mask=attention_mask,
            compressed_mask=attention_mask,
        )


def teacher_forward(
    teacher: TeacherModel,
    token_ids: np.ndarray,
    attention_mask: np.ndarray,
    token_type_ids: Optional[np.ndarray] = None,
) -> TeacherSignals:
    """Frozen-teacher inference: detached signals for the distillation losses."""
    with T.no_grad():
        rec = teacher.forward(token_ids, attention_mask, token_type_ids)
    return TeacherSignals(
        embeddings=rec.embeddings.data,
        hidden_states=[h.data for h in rec.hidden_states],
        attention_scores=[s.data for s in rec.attention_scores],
        start_logits=rec.start_logits.data,
        end_logits=rec.end_logits.data,
        attention_mask=attention_mask,
    )


def skip_map(student_block: int, n_student_blocks: int, n_teacher_layers: int) -> int:
    """Teacher layer distilled into student block j: every third layer, 3j + 2."""
    if n_teacher_layers != SKIP_STRIDE * n_student_blocks:
        raise ConfigError(
            f"teacher depth {n_teacher_layers} must be {SKIP_STRIDE}x student depth "
            f"{n_student_blocks}"
        )
    if not 0 <= student_block < n_student_blocks:
        raise ConfigError(f"student block {student_block} out of range 0..{n_student_blocks - 1}")
    return SKIP_STRIDE * student_block + 2


def check_pairing(teacher_cfg: TeacherConfig, student_cfg) -> None:
    """Validate the invariants distillation relies on."""
    if teacher_cfg.n_layers != SKIP_STRIDE * student_cfg.n_encoder_blocks:
        raise ConfigError(
            f"teacher layers {teacher_cfg.n_layers} != "
            f"{SKIP_STRIDE} x student blocks {student_cfg.n_encoder_blocks}"
        )
    if teacher_cfg.vocab_size != student_cfg.vocab_size:
        raise ConfigError(
            f"teacher vocab {teacher_cfg.vocab_size} != student vocab {student_cfg.vocab_size}"
        )
    if teacher_cfg.n_heads != student_cfg.n_heads:
        raise ConfigError(
            f"attention distillation is per head: teacher has {teacher_cfg.n_heads} heads, "
            f"student {student_cfg.n_heads}"
        )
    if teacher_cfg.max_seq_len != student_cfg.max_seq_len:
        raise ConfigError(
            f"teacher max_seq_len {teacher_cfg.max_seq_len} != student {student_cfg.max_seq_len}"
        )
