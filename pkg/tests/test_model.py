"""Student architecture tests: parameter counts, shape contracts, span prediction."""

import numpy as np
import pytest

import seqkd.tensor as T
from seqkd import checkpoint
from seqkd.errors import ConfigError, DimensionError
from seqkd.model import (
    MASKING_VALUE,
    ModelConfig,
    StudentModel,
    build_student,
    compress_mask,
    predict_spans,
)

from oracles import span_search_oracle


def analytic_parameter_count(cfg: ModelConfig, compressed: bool = True) -> int:
    """Closed-form count, kept independent of the model's own bookkeeping."""
    e, d, ff, k = cfg.embedding_size, cfg.hidden_size, cfg.ff_size, cfg.kernel_width
    c1, c2, c = cfg.conv1_filters, cfg.conv2_filters, cfg.conv3to6_filters
    total = cfg.vocab_size * e + cfg.max_seq_len * e + 2 * e + 2 * e
    if compressed:
        total += k * e * c1 + c1 + k * c1 * c2 + c2 + c2 * d + d
    else:
        total += e * d + d
    total += 2 * d  # expansion layer norm
    per_block = 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d) + 2 * d
    total += cfg.n_encoder_blocks * per_block
    if compressed:
        total += (k * d * c + c) + (c2 * c + c) + 2 * c  # conv3 + skip + ln
        total += (k * c * c + c) + (c1 * c + c) + 2 * c  # conv4 + skip + ln
        total += 2 * (k * c * c + c)  # conv5, conv6
        total += c * 2 + 2
    else:
        total += d * 2 + 2
    return total


def small_inputs(cfg, batch=2, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, cfg.vocab_size, size=(batch, cfg.max_seq_len))
    mask = np.ones((batch, cfg.max_seq_len), dtype=np.int64)
    return ids, mask


def test_full_size_parameter_count_near_published_total():
    model = build_student(ModelConfig.full_size(vocab_size=30522), seed=0)
    count = model.parameter_count()
    assert abs(count - 24.6e6) / 24.6e6 < 0.05
    assert count == analytic_parameter_count(model.config)


def test_small_config_count_matches_closed_form():
    cfg = ModelConfig(vocab_size=2000, max_seq_len=64, n_encoder_blocks=4,
                      embedding_size=32, hidden_size=64, ff_size=192, n_heads=4,
                      conv1_filters=32, conv2_filters=48, conv3to6_filters=64)
    model = build_student(cfg, seed=1)
    assert model.parameter_count() == analytic_parameter_count(cfg)
    control = build_student(cfg, seed=1, compressed=False)
    assert control.parameter_count() == analytic_parameter_count(cfg, compressed=False)


def test_same_seed_bit_identical():
    cfg = ModelConfig.tiny()
    a = build_student(cfg, seed=42)
    b = build_student(cfg, seed=42)
    assert list(a.params) == list(b.params)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)


def test_config_invariants():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=100, hidden_size=50, n_heads=16)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=100, max_seq_len=30)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=0)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=100, kernel_width=4)


def test_forward_shape_contracts():
    cfg = ModelConfig.tiny()
    model = build_student(cfg, seed=3)
    ids, mask = small_inputs(cfg)
    rec = model.forward(ids, mask)
    L = cfg.max_seq_len
    assert rec.start_logits.shape == (2, L)
    assert rec.end_logits.shape == (2, L)
    assert len(rec.hidden_states) == cfg.n_encoder_blocks
    assert len(rec.attention_scores) == cfg.n_encoder_blocks
    for h in rec.hidden_states:
        assert h.shape == (2, L // 4, cfg.hidden_size)
    for s in rec.attention_scores:
        assert s.shape == (2, cfg.n_heads, L // 4, L // 4)
    assert rec.embeddings.shape == (2, L, cfg.embedding_size)


def test_forward_masks_padded_logits():
    cfg = ModelConfig.tiny()
    model = build_student(cfg, seed=3)
    ids, mask = small_inputs(cfg)
    mask[:, 10:] = 0
    rec = model.forward(ids, mask)
    assert (rec.start_logits.data[:, 10:] == MASKING_VALUE).all()
    assert (rec.end_logits.data[:, 10:] == MASKING_VALUE).all()
    assert np.isfinite(rec.start_logits.data[:, :10]).all()


def test_forward_shape_mismatch_error():
    cfg = ModelConfig.tiny()
    model = build_student(cfg, seed=3)
    with pytest.raises(DimensionError):
        model.forward(np.zeros((2, 16), dtype=int), np.ones((2, 12), dtype=int))


def test_forward_deterministic():
    cfg = ModelConfig.tiny()
    model = build_student(cfg, seed=5)
    ids, mask = small_inputs(cfg, seed=9)
    a = model.forward(ids, mask)
    b = model.forward(ids, mask)
    np.testing.assert_array_equal(a.start_logits.data, b.start_logits.data)
    np.testing.assert_array_equal(a.hidden_states[-1].data, b.hidden_states[-1].data)


def test_token_change_reaches_its_compression_window():
    cfg = ModelConfig.tiny()
    model = build_student(cfg, seed=7)
    ids, mask = small_inputs(cfg, seed=11)
    base = model.forward(ids, mask).start_logits.data
    for p in (0, 5, 13):
        changed = ids.copy()
        changed[0, p] = (changed[0, p] + 1) % cfg.vocab_size
        new = model.forward(changed, mask).start_logits.data
        window = slice(4 * (p // 4), 4 * (p // 4) + 4)
        assert not np.array_equal(new[0, window], base[0, window])


def test_compress_mask_cases():
    m = np.array([[1, 1, 1, 1, 0, 0, 0, 0]])
    np.testing.assert_array_equal(compress_mask(m), [[1, 0]])
    m = np.array([[1, 0, 0, 0, 0, 0, 0, 0]])
    np.testing.assert_array_equal(compress_mask(m), [[1, 0]])
    m = np.ones((3, 8), dtype=int)
    np.testing.assert_array_equal(compress_mask(m), np.ones((3, 2)))


def test_predict_spans_one_hot():
    L = 16
    s = np.full((1, L), -10.0)
    e = np.full((1, L), -10.0)
    s[0, 5] = 10.0
    e[0, 7] = 10.0
    assert predict_spans(s, e, [(1, L - 1)]) == [(5, 7)]


def test_predict_spans_null_convention():
    L = 16
    s = np.zeros((1, L))
    e = np.zeros((1, L))
    s[0, 0] = 50.0
    e[0, 0] = 50.0
    assert predict_spans(s, e, [(2, L - 1)]) == [None]


def test_predict_spans_matches_exhaustive_search():
    rng = np.random.default_rng(31)
    L = 16
    for trial in range(50):
        s = rng.normal(size=(1, L))
        e = rng.normal(size=(1, L))
        lo = int(rng.integers(1, 6))
        hi = int(rng.integers(lo, L))
        max_len = int(rng.integers(1, 8))
        thr = float(rng.normal())
        got = predict_spans(s, e, [(lo, hi)], null_threshold=thr, max_answer_len=max_len)[0]
        want = span_search_oracle(s[0], e[0], lo, hi, max_len, thr)
        assert got == want


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = ModelConfig.tiny()
    model = build_student(cfg, seed=13)
    rng = np.random.default_rng(0)
    for p in model.params.values():
        p.data = p.data + rng.normal(size=p.data.shape) * 0.01
    checkpoint.save_model(str(tmp_path / "ck"), model, step=77)
    loaded, step = checkpoint.load_model(str(tmp_path / "ck"))
    assert step == 77
    assert loaded.compressed
    assert list(loaded.params) == list(model.params)
    for name in model.params:
        np.testing.assert_array_equal(loaded.params[name].data, model.params[name].data)


def test_checkpoint_control_round_trip(tmp_path):
    cfg = ModelConfig.tiny()
    model = build_student(cfg, seed=13, compressed=False)
    checkpoint.save_model(str(tmp_path / "ck"), model)
    loaded, _ = checkpoint.load_model(str(tmp_path / "ck"))
    assert isinstance(loaded, StudentModel) and not loaded.compressed


def test_uncompressed_control_runs_at_full_length():
    cfg = ModelConfig.tiny()
    model = build_student(cfg, seed=3, compressed=False)
    ids, mask = small_inputs(cfg)
    rec = model.forward(ids, mask)
    assert rec.hidden_states[0].shape == (2, cfg.max_seq_len, cfg.hidden_size)
    assert rec.start_logits.shape == (2, cfg.max_seq_len)
