"""The compressed-sequence student network and its forward record.

Pipeline: factorized embedding -> two conv+maxpool stages that shrink the
sequence 4x -> position-wise expansion to the encoder width -> N transformer
encoder blocks at quarter length -> two upsample+conv stages with skip
connections from the matching encoder-side resolutions -> two refinement
convolutions -> per-position start/end span logits at the original length.

``compressed=False`` builds the control variant used by the benchmark: the
conv/pool/upsample stages are dropped and the encoder blocks run at full
sequence length.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError

MASKING_VALUE = -1e9
LAYER_NORM_EPS = 1e-12
INIT_STD = 0.02


@dataclass
class ModelConfig:
    """Student architecture hyperparameters."""

    vocab_size: int
    n_encoder_blocks: int = 8
    embedding_size: int = 96
    hidden_size: int = 480
    ff_size: int = 1440
    n_heads: int = 16
    conv1_filters: int = 96
    conv2_filters: int = 192
    conv3to6_filters: int = 480
    max_seq_len: int = 384
    kernel_width: int = 3

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
        if self.kernel_width % 2 == 0:
            raise ConfigError(f"kernel_width must be odd, got {self.kernel_width}")

    @classmethod
    def full_size(cls, vocab_size: int = 30522) -> "ModelConfig":
        """The published full-size architecture."""
        return cls(vocab_size=vocab_size)

    @classmethod
    def small(cls, vocab_size: int = 512, max_seq_len: int = 96) -> "ModelConfig":
        """Workstation-scale preset used by the synthetic QA experiments."""
        return cls(
            vocab_size=vocab_size,
            n_encoder_blocks=4,
            embedding_size=32,
            hidden_size=64,
            ff_size=192,
            n_heads=4,
            conv1_filters=32,
            conv2_filters=48,
            conv3to6_filters=64,
            max_seq_len=max_seq_len,
        )

    @classmethod
    def tiny(cls, vocab_size: int = 64) -> "ModelConfig":
        """Minimal config for gradient checks; small enough for full finite differences."""
        return cls(
            vocab_size=vocab_size,
            n_encoder_blocks=2,
            embedding_size=6,
            hidden_size=8,
            ff_size=16,
            n_heads=2,
            conv1_filters=5,
            conv2_filters=7,
            conv3to6_filters=8,
            max_seq_len=16,
        )


@dataclass
class ForwardRecord:
    """Everything one forward pass exposes to the losses and the task head.

    For the student the hidden states and attention scores live at quarter
    length and ``compressed_mask`` is the pooled validity mask; for the
    teacher (and the uncompressed control) both masks coincide.
    """

    embeddings: T.Tensor  # (B, l, e)
    hidden_states: list  # per block, (B, n, d)
    attention_scores: list  # per block, (B, heads, n, n); pre-softmax, masked
    start_logits: T.Tensor  # (B, l)
    end_logits: T.Tensor  # (B, l)
    attention_mask: np.ndarray  # (B, l)
    compressed_mask: np.ndarray  # (B, n)


StudentForwardRecord = ForwardRecord


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) with draws beyond 2 std redrawn."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def compress_mask(attention_mask: np.ndarray, factor: int = 4) -> np.ndarray:
    """A compressed position is valid iff any of its source positions is valid."""
    B, L = attention_mask.shape
    return attention_mask.reshape(B, L // factor, factor).max(axis=2)


class TransformerBase:
    """Parameter registry plus the layers shared by student and teacher."""

    def __init__(self):
        self.params: "OrderedDict[str, T.Tensor]" = OrderedDict()

    # -- parameter construction ----------------------------------------------

    def _add(self, name: str, array: np.ndarray) -> T.Tensor:
        p = T.parameter(array, name=name)
        self.params[name] = p
        return p

    def _dense(self, rng, name: str, n_in: int, n_out: int):
        self._add(f"{name}.w", truncated_normal(rng, (n_in, n_out)))
        self._add(f"{name}.b", np.zeros(n_out))

    def _ln(self, name: str, width: int):
        self._add(f"{name}.g", np.ones(width))
        self._add(f"{name}.b", np.zeros(width))

    def _embed_params(self, rng, vocab_size, width, max_seq_len):
        self._add("embed.tok", truncated_normal(rng, (vocab_size, width)))
        self._add("embed.pos", truncated_normal(rng, (max_seq_len, width)))
        self._add("embed.seg", truncated_normal(rng, (2, width)))
        self._ln("embed.ln", width)

    def _encoder_params(self, rng, n_blocks, d, ff):
        for j in range(n_blocks):
            for proj in ("wq", "wk", "wv", "wo"):
                self._dense(rng, f"enc.{j}.attn.{proj}", d, d)
            self._ln(f"enc.{j}.ln1", d)
            self._dense(rng, f"enc.{j}.ffn.fc1", d, ff)
            self._dense(rng, f"enc.{j}.ffn.fc2", ff, d)
            self._ln(f"enc.{j}.ln2", d)

    # -- accessors -------------------------------------------------------------

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def trainable(self):
        return list(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def p(self, name: str) -> T.Tensor:
        return self.params[name]

    # -- layer application ------------------------------------------------------

    def _dense_apply(self, name, x):
        return T.matmul(x, self.p(f"{name}.w")) + self.p(f"{name}.b")

    def _conv_apply(self, name, x):
        return T.gelu(T.conv1d(x, self.p(f"{name}.w"), self.p(f"{name}.b")))

    def _ln_apply(self, name, x):
        return T.layer_norm(x, self.p(f"{name}.g"), self.p(f"{name}.b"), eps=LAYER_NORM_EPS)

    def _embed(self, token_ids, token_type_ids):
        pos = T.embedding_lookup(self.p("embed.pos"), np.arange(token_ids.shape[1]))
        tok = T.embedding_lookup(self.p("embed.tok"), token_ids)
        seg = T.embedding_lookup(self.p("embed.seg"), token_type_ids)
        return self._ln_apply("embed.ln", tok + seg + pos)

    def _encoder_block(self, j, x, valid, n_heads):
        """Post-norm transformer block; returns (output, masked pre-softmax scores)."""
        B, n, d = x.shape
        dh = d // n_heads

        def heads(t):
            return T.transpose(T.reshape(t, (B, n, n_heads, dh)), (0, 2, 1, 3))

        q = heads(self._dense_apply(f"enc.{j}.attn.wq", x))
        k = heads(self._dense_apply(f"enc.{j}.attn.wk", x))
        v = heads(self._dense_apply(f"enc.{j}.attn.wv", x))
        raw = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        pair_valid = (valid[:, None, :, None] * valid[:, None, None, :]).astype(bool)
        scores = T.masked_fill(raw, pair_valid, MASKING_VALUE)
        attn = T.softmax(scores, axis=-1)
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (B, n, d))
        x = self._ln_apply(f"enc.{j}.ln1", x + self._dense_apply(f"enc.{j}.attn.wo", ctx))
        ff = self._dense_apply(f"enc.{j}.ffn.fc2", T.gelu(self._dense_apply(f"enc.{j}.ffn.fc1", x)))
        x = self._ln_apply(f"enc.{j}.ln2", x + ff)
        return x, scores

    def _check_inputs(self, token_ids, attention_mask, vocab_size, max_seq_len):
        if token_ids.shape != attention_mask.shape:
            raise DimensionError(
                f"token_ids {token_ids.shape} and attention_mask {attention_mask.shape} differ"
            )
        B, L = token_ids.shape
        if L < 4 or L % 4 or L > max_seq_len:
            raise DimensionError(
                f"sequence length {L} invalid (need 4 <= L <= {max_seq_len}, L % 4 == 0)"
            )
        if token_ids.max() >= vocab_size or token_ids.min() < 0:
            raise DataError(f"token id out of range for vocab {vocab_size}")

    def _span_head(self, x, attention_mask):
        logits = self._dense_apply("head", x)  # (B, L, 2)
        keep = attention_mask.astype(bool)
        start = T.masked_fill(T.index_last(logits, 0), keep, MASKING_VALUE)
        end = T.masked_fill(T.index_last(logits, 1), keep, MASKING_VALUE)
        return start, end


class StudentModel(TransformerBase):
    """Span-extraction student; see the module docstring for the layout."""

    kind = "student"

    def __init__(self, config: ModelConfig, seed: int, compressed: bool = True):
        super().__init__()
        self.config = config
        self.seed = seed
        self.compressed = compressed
        self._build(np.random.default_rng(seed))

    def _conv(self, rng, name: str, c_in: int, c_out: int):
        k = self.config.kernel_width
        self._add(f"{name}.w", truncated_normal(rng, (k, c_in, c_out)))
        self._add(f"{name}.b", np.zeros(c_out))

    def _build(self, rng):
        cfg = self.config
        self._embed_params(rng, cfg.vocab_size, cfg.embedding_size, cfg.max_seq_len)

        if self.compressed:
            self._conv(rng, "conv1", cfg.embedding_size, cfg.conv1_filters)
            self._conv(rng, "conv2", cfg.conv1_filters, cfg.conv2_filters)
            self._dense(rng, "expand", cfg.conv2_filters, cfg.hidden_size)
        else:
            self._dense(rng, "expand", cfg.embedding_size, cfg.hidden_size)
        self._ln("expand.ln", cfg.hidden_size)

        d = cfg.hidden_size
        self._encoder_params(rng, cfg.n_encoder_blocks, d, cfg.ff_size)

        c = cfg.conv3to6_filters
        if self.compressed:
            self._conv(rng, "dec.conv3", d, c)
            self._dense(rng, "dec.skip2", cfg.conv2_filters, c)
            self._ln("dec.ln1", c)
            self._conv(rng, "dec.conv4", c, c)
            self._dense(rng, "dec.skip1", cfg.conv1_filters, c)
            self._ln("dec.ln2", c)
            self._conv(rng, "dec.conv5", c, c)
            self._conv(rng, "dec.conv6", c, c)
            self._dense(rng, "head", c, 2)
        else:
            self._dense(rng, "head", d, 2)

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

        emb = self._embed(token_ids, token_type_ids)

        if self.compressed:
            conv1_out = self._conv_apply("conv1", emb)  # (B, L, c1)
            pooled1 = T.maxpool1d(conv1_out, 2)
            conv2_out = self._conv_apply("conv2", pooled1)  # (B, L/2, c2)
            pooled2 = T.maxpool1d(conv2_out, 2)
            x = self._ln_apply("expand.ln", self._dense_apply("expand", pooled2))
            cmask = compress_mask(attention_mask)
        else:
            x = self._ln_apply("expand.ln", self._dense_apply("expand", emb))
            cmask = attention_mask

        hidden_states, attention_scores = [], []
        for j in range(cfg.n_encoder_blocks):
            x, scores = self._encoder_block(j, x, cmask, cfg.n_heads)
            hidden_states.append(x)
            attention_scores.append(scores)

        if self.compressed:
            up1 = T.upsample1d(x, 2)  # (B, L/2, d')
            s1 = self._ln_apply(
                "dec.ln1",
                self._conv_apply("dec.conv3", up1) + self._dense_apply("dec.skip2", conv2_out),
            )
            up2 = T.upsample1d(s1, 2)  # (B, L, c)
            s2 = self._ln_apply(
                "dec.ln2",
                self._conv_apply("dec.conv4", up2) + self._dense_apply("dec.skip1", conv1_out),
            )
            x = self._conv_apply("dec.conv6", self._conv_apply("dec.conv5", s2))

        start_logits, end_logits = self._span_head(x, attention_mask)
        return ForwardRecord(
            embeddings=emb,
            hidden_states=hidden_states,
            attention_scores=attention_scores,
            start_logits=start_logits,
            end_logits=end_logits,
            attention_mask=attention_mask,
            compressed_mask=cmask,
        )


def build_student(config: ModelConfig, seed: int, compressed: bool = True) -> StudentModel:
    return StudentModel(config, seed, compressed=compressed)


def predict_spans(
    start_logits: np.ndarray,
    end_logits: np.ndarray,
    context_bounds,
    null_threshold: float = 0.0,
    max_answer_len: int = 30,
):
    """Best valid (start, end) per example, or None for a null answer.

    context_bounds: per-example inclusive (lo, hi) token positions of the
    context region. A span is valid when lo <= start <= end <= hi and
    end - start <= max_answer_len. The null answer lives at position 0; it
    wins when its score exceeds the best span score plus null_threshold.
    """
    out = []
    L = start_logits.shape[1]
    idx = np.arange(L)
    for i, (lo, hi) in enumerate(context_bounds):
        s, e = start_logits[i], end_logits[i]
        pair = s[:, None] + e[None, :]
        valid = (
            (idx[:, None] >= lo)
            & (idx[:, None] <= hi)
            & (idx[None, :] >= idx[:, None])
            & (idx[None, :] <= hi)
            & (idx[None, :] - idx[:, None] <= max_answer_len)
        )
        if not valid.any():
            out.append(None)
            continue
        masked = np.where(valid, pair, -np.inf)
        flat = int(masked.argmax())
        best = (flat // L, flat % L)
        null_score = s[0] + e[0]
        if null_score > masked.max() + null_threshold:
            out.append(None)
        else:
            out.append(best)
    return out
