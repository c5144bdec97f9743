"""Inference-speed harness and the analytic FLOP model.

Timing is wall-clock over forward passes only (tokenization and IO excluded):
one discarded warmup pass, then ``trials`` timed passes over the whole
dataset, reported as mean and standard deviation.

The FLOP model counts multiply-accumulates as 2 FLOPs and covers the matmul
and convolution terms only; elementwise work (layer norm, GELU, softmax) is
excluded from the totals. ``attention_flops`` isolates the score and
weighted-sum matmuls, the part of a block that scales quadratically with
sequence length: 4 * l^2 * d exactly, so quartering the length divides it by
exactly 16.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ContractError
from .model import ModelConfig, StudentModel

MAC = 2  # FLOPs per multiply-accumulate


def attention_flops(seq_len: int, d: int, heads: int = 1) -> int:
    """Score matmul + weighted sum: heads * 2 * (l^2 * d/heads) * MAC = 4 l^2 d."""
    if seq_len < 1 or d < 1 or heads < 1:
        raise ContractError("attention_flops needs positive arguments")
    return MAC * 2 * seq_len * seq_len * d


def _linear_flops(n: int, n_in: int, n_out: int) -> int:
    return MAC * n * n_in * n_out + n * n_out


def _conv_flops(n: int, k: int, c_in: int, c_out: int) -> int:
    return MAC * n * k * c_in * c_out + n * c_out


@dataclass
class FlopModel:
    """Per-component forward FLOPs for one sequence."""

    embedding: int
    convs: int
    attention_projections: int
    attention_core: int
    feed_forward: int
    head: int

    def total(self) -> int:
        return (
            self.embedding
            + self.convs
            + self.attention_projections
            + self.attention_core
            + self.feed_forward
            + self.head
        )

    def as_dict(self) -> Dict[str, int]:
        out = {
            "embedding": self.embedding,
            "convs": self.convs,
            "attention_projections": self.attention_projections,
            "attention_core": self.attention_core,
            "feed_forward": self.feed_forward,
            "head": self.head,
        }
        out["total"] = self.total()
        return out


def student_flops(config: ModelConfig, compressed: bool = True,
                  seq_len: Optional[int] = None) -> FlopModel:
    """Analytic forward FLOPs for the student (or its uncompressed control)."""
    l = seq_len or config.max_seq_len
    k = config.kernel_width
    e, d, ff = config.embedding_size, config.hidden_size, config.ff_size
    c1, c2, c = config.conv1_filters, config.conv2_filters, config.conv3to6_filters
    n = l // 4 if compressed else l

    convs = 0
    if compressed:
        convs += _conv_flops(l, k, e, c1)  # conv1 at full length
        convs += _conv_flops(l // 2, k, c1, c2)  # conv2 after one pool
        expand = _linear_flops(n, c2, d)
        convs += _conv_flops(l // 2, k, d, c)  # conv3 after first upsample
        convs += _linear_flops(l // 2, c2, c)  # skip projection
        convs += _conv_flops(l, k, c, c)  # conv4 at full length
        convs += _linear_flops(l, c1, c)  # skip projection
        convs += 2 * _conv_flops(l, k, c, c)  # conv5, conv6
        head_width = c
    else:
        expand = _linear_flops(n, e, d)
        head_width = d

    blocks = config.n_encoder_blocks
    attention_proj = blocks * 4 * _linear_flops(n, d, d)
    attention_core = blocks * attention_flops(n, d, config.n_heads)
    feed_forward = blocks * (_linear_flops(n, d, ff) + _linear_flops(n, ff, d))
    head = _linear_flops(l, head_width, 2)
    return FlopModel(
        embedding=expand,
        convs=convs,
        attention_projections=attention_proj,
        attention_core=attention_core,
        feed_forward=feed_forward,
        head=head,
    )


# ---------------------------------------------------------------------------
# wall-clock harness


@dataclass
class BenchReport:
    name: str
    n_params: int
    avg_time: float
    std_time: float
    rel_speedup: float
    seq_len: int
    batch_size: int
    trials: int
    n_examples: int
    backend: str = field(default_factory=kernels.backend_name)

    def as_dict(self):
        return dict(self.__dict__)


def synthetic_batches(vocab_size: int, seq_len: int, batch_size: int, n_examples: int,
                      seed: int = 0) -> List[Dict[str, np.ndarray]]:
    """Deterministic random token batches for forward-only timing."""
    rng = np.random.default_rng(seed)
    batches = []
    for _ in range(max(1, n_examples // batch_size)):
        ids = rng.integers(5, vocab_size, size=(batch_size, seq_len))
        mask = np.ones((batch_size, seq_len), dtype=np.int64)
        types = np.zeros((batch_size, seq_len), dtype=np.int64)
        batches.append({"token_ids": ids, "attention_mask": mask, "token_type_ids": types})
    return batches


def time_forward(model, batches: Sequence[dict], trials: int = 3, warmup: int = 1):
    """(mean, std, samples) of one full dataset pass, forward only."""
    if not batches:
        raise ContractError("bench needs a non-empty dataset")
    if trials < 3:
        raise ContractError(f"need at least 3 trials, got {trials}")

    def one_pass():
        with T.no_grad():
            for b in batches:
                model.forward(b["token_ids"], b["attention_mask"], b["token_type_ids"])

    for _ in range(warmup):
        one_pass()
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        one_pass()
        samples.append(time.perf_counter() - t0)
    return float(np.mean(samples)), float(np.std(samples)), samples


def bench_models(models: Dict[str, object], seq_len: int, batch_size: int,
                 n_examples: int, trials: int = 3, seed: int = 0) -> List[BenchReport]:
    """Time each model on the same synthetic dataset; speedups vs the first entry."""
    names = list(models)
    first = models[names[0]]
    batches = synthetic_batches(first.config.vocab_size, seq_len, batch_size, n_examples, seed)
    reports = []
    base_time = None
    for name in names:
        model = models[name]
        mean, std, _ = time_forward(model, batches, trials=trials)
        if base_time is None:
            base_time = mean
        reports.append(
            BenchReport(
                name=name,
                n_params=model.parameter_count(),
                avg_time=mean,
                std_time=std,
                rel_speedup=base_time / mean,
                seq_len=seq_len,
                batch_size=batch_size,
                trials=trials,
                n_examples=len(batches) * batch_size,
            )
        )
    return reports


def compression_bench(config: ModelConfig, seq_len: int = 384, batch_size: int = 8,
                      n_examples: int = 32, trials: int = 3, seed: int = 0):
    """Uncompressed control vs compressed student on identical inputs.

    The control comes first so rel_speedup reads as 'times faster than the
    full-length pipeline'.
    """
    control = StudentModel(config, seed=seed, compressed=False)
    student = StudentModel(config, seed=seed, compressed=True)
    return bench_models(
        {"control_full_length": control, "compressed_student": student},
        seq_len=seq_len, batch_size=batch_size, n_examples=n_examples,
        trials=trials, seed=seed,
    )


# ---------------------------------------------------------------------------
# kernel backend benchmark


def bench_kernels(trials: int = 5, seed: int = 0) -> List[dict]:
    """Compare every importable kernel backend on representative shapes."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 384, 96))
    w = rng.normal(size=(3, 96, 96))
    b = rng.normal(size=96)
    gy = rng.normal(size=(8, 384, 96))
    att = rng.normal(size=(64, 96, 96))

    cases = [
        ("conv1d_same", lambda m: m.conv1d_same(x, w, b)),
        ("conv1d_same_backward", lambda m: m.conv1d_same_backward(x, w, gy)),
        ("maxpool1d", lambda m: m.maxpool1d(x, 2)),
        ("avgpool1d", lambda m: m.avgpool1d(x, 4)),
        ("maxpool2d", lambda m: m.maxpool2d(att, 4)),
        ("upsample1d", lambda m: m.upsample1d(x, 2)),
    ]
    rows = []
    for case_name, fn in cases:
        row = {"kernel": case_name}
        for mod in kernels.available_backends():
            fn(mod)  # warmup
            samples = []
            for _ in range(trials):
                t0 = time.perf_counter()
                fn(mod)
                samples.append(time.perf_counter() - t0)
            row[mod.NAME] = float(np.mean(samples))
        rows.append(row)
    return rows
