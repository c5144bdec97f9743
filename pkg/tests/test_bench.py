"""FLOP model and timing harness tests."""

import numpy as np
import pytest

import seqkd.kernels as kernels
from seqkd.bench import (
    attention_flops,
    bench_kernels,
    bench_models,
    compression_bench,
    student_flops,
    synthetic_batches,
    time_forward,
)
from seqkd.errors import ContractError
from seqkd.model import ModelConfig, StudentModel


def test_attention_flops_quarter_length_is_exactly_one_sixteenth():
    cfg = ModelConfig.full_size()
    l = 384
    ratio = attention_flops(l // 4, cfg.hidden_size, cfg.n_heads) / attention_flops(
        l, cfg.hidden_size, cfg.n_heads
    )
    assert ratio == 1.0 / 16.0


def test_attention_flops_minimal_and_quadratic():
    assert attention_flops(1, 4) > 0
    assert attention_flops(64, 480) == 4 * attention_flops(32, 480)
    with pytest.raises(ContractError):
        attention_flops(0, 4)


def test_flop_model_total_is_sum_of_parts():
    fm = student_flops(ModelConfig.full_size(), compressed=True, seq_len=384)
    d = fm.as_dict()
    assert d["total"] == sum(v for k, v in d.items() if k != "total")


def test_compressed_student_needs_fewer_flops_than_control():
    cfg = ModelConfig.full_size()
    comp = student_flops(cfg, compressed=True, seq_len=384).total()
    ctrl = student_flops(cfg, compressed=False, seq_len=384).total()
    assert comp < ctrl


def test_time_forward_contracts():
    cfg = ModelConfig.tiny()
    model = StudentModel(cfg, seed=0)
    with pytest.raises(ContractError):
        time_forward(model, [], trials=3)
    batches = synthetic_batches(cfg.vocab_size, cfg.max_seq_len, 2, 4)
    with pytest.raises(ContractError):
        time_forward(model, batches, trials=2)
    mean, std, samples = time_forward(model, batches, trials=3)
    assert mean > 0 and len(samples) == 3 and std >= 0


def test_timing_grows_with_dataset_size():
    cfg = ModelConfig.tiny()
    model = StudentModel(cfg, seed=0)
    means = []
    for n in (4, 16, 64):
        batches = synthetic_batches(cfg.vocab_size, cfg.max_seq_len, 2, n, seed=1)
        mean, _std, _ = time_forward(model, batches, trials=3)
        means.append(mean)
    assert means[0] < means[1] < means[2]


def test_bench_models_baseline_speedup_is_one():
    cfg = ModelConfig.tiny()
    a = StudentModel(cfg, seed=0)
    reports = bench_models({"a": a, "b": StudentModel(cfg, seed=1)},
                           seq_len=16, batch_size=2, n_examples=4, trials=3)
    assert reports[0].rel_speedup == 1.0
    assert all(r.avg_time > 0 for r in reports)
    assert {r.name for r in reports} == {"a", "b"}


def test_compression_bench_order_and_fields():
    cfg = ModelConfig.tiny()
    reports = compression_bench(cfg, seq_len=16, batch_size=2, n_examples=4, trials=3)
    assert reports[0].name == "control_full_length"
    assert reports[1].name == "compressed_student"
    payload = reports[1].as_dict()
    assert payload["seq_len"] == 16 and payload["trials"] == 3


def test_bench_kernels_covers_all_backends():
    rows = bench_kernels(trials=1)
    names = {m.NAME for m in kernels.available_backends()}
    for row in rows:
        assert names <= set(row)
    assert {r["kernel"] for r in rows} >= {"conv1d_same", "maxpool1d", "maxpool2d"}
