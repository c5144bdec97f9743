"""Command-line surface tying the pipeline together.

Subcommands:
    gen-data             synthesize train/dev/augment splits + tokenizer
    train-teacher        fit the full-resolution teacher on the train split
    distill              train a student (--mode picks the ablation variant)
    eval                 EM/F1 of a checkpoint on a dataset
    export-predictions   write {qas_id: answer or ""} for a dataset
    ablate               run all five modes and print the comparison table
    bench                wall-clock forward timing (--compare-compression,
                         --kernels for the backend comparison)
    flops                analytic FLOP model and the attention-work ratio

Global flags: --config (key=value file; keys like student.hidden_size,
teacher.n_layers, train.init_lr, teacher_train.total_steps, data.vocab_size),
--seed, --out-dir.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import bench as bench_mod
from . import checkpoint, corpus, kernels
from .errors import DataError, SeqKDError, TrainingError
from .model import ModelConfig, StudentModel
from .teacher import TeacherConfig, TeacherModel
from .trainer import (
    MODES,
    TrainConfig,
    evaluate_model,
    majority_null_baseline,
    predict,
    run_ablation,
    train,
    train_teacher,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class DataSettings:
    vocab_size: int = 512
    max_seq_len: int = 96
    n_train_paragraphs: int = 240
    n_dev_paragraphs: int = 60
    n_augment_paragraphs: int = 240
    questions_per_paragraph: int = 3
    unanswerable_fraction: float = 1.0 / 3.0


def parse_config_file(path: str) -> Dict[str, str]:
    out = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    return out


def _coerce(value: str, typ):
    if typ is bool:
        return value.lower() in ("1", "true", "yes", "on")
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    return value


def apply_overrides(obj, prefix: str, cfg: Dict[str, str]):
    """Rebuild a dataclass with the prefix-matched config keys applied."""
    by_name = {f.name: f for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in cfg.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in by_name:
            raise UsageError(f"unknown config key {key!r}")
        typ = by_name[name].type
        if isinstance(typ, str):  # postponed annotations
            typ = {"int": int, "float": float, "str": str, "bool": bool}.get(typ, str)
        updates[name] = _coerce(value, typ)
    return dataclasses.replace(obj, **updates) if updates else obj


@dataclass
class Settings:
    data: DataSettings
    student: ModelConfig
    teacher: TeacherConfig
    train: TrainConfig
    teacher_train: TrainConfig
    seed: int
    out_dir: str


def build_settings(args) -> Settings:
    cfg = parse_config_file(args.config) if args.config else {}
    seed = args.seed
    data = apply_overrides(DataSettings(), "data.", cfg)
    student = apply_overrides(
        ModelConfig.small(vocab_size=data.vocab_size, max_seq_len=data.max_seq_len),
        "student.", cfg,
    )
    teacher = apply_overrides(
        TeacherConfig.small(vocab_size=student.vocab_size, max_seq_len=student.max_seq_len),
        "teacher.", cfg,
    )
    train_cfg = apply_overrides(
        TrainConfig.small(seed=seed), "train.", cfg
    )
    teacher_train = apply_overrides(
        TrainConfig(
            mode="baseline", seed=seed, batch_size=16, init_lr=1e-3,
            warmup_steps=100, steps_per_block=400, n_blocks=4, total_steps=4000,
        ),
        "teacher_train.", cfg,
    )
    if train_cfg.n_blocks != student.n_encoder_blocks:
        train_cfg = dataclasses.replace(train_cfg, n_blocks=student.n_encoder_blocks)
    return Settings(
        data=data, student=student, teacher=teacher, train=train_cfg,
        teacher_train=teacher_train, seed=seed, out_dir=args.out_dir,
    )


def _data_dir(args, settings) -> str:
    return args.data_dir or settings.out_dir


def _fit_vocab(settings: Settings, vocab) -> Settings:
    """Pin model configs to the tokenizer's actual size (merges may stop early)."""
    return dataclasses.replace(
        settings,
        student=dataclasses.replace(settings.student, vocab_size=len(vocab)),
        teacher=dataclasses.replace(settings.teacher, vocab_size=len(vocab)),
    )


def _load_vocab_and_split(settings, data_dir: str, split: str):
    vocab = corpus.load_vocab(os.path.join(data_dir, "vocab.txt"))
    path = os.path.join(data_dir, f"{split}.json")
    return vocab, corpus.load_squad_json(path, vocab, settings.data.max_seq_len)


def _write_json(path: str, payload):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    s = build_settings(args)
    os.makedirs(s.out_dir, exist_ok=True)
    d = s.data
    splits = {
        "train": corpus.generate_synthetic_corpus(
            s.seed, d.n_train_paragraphs, d.questions_per_paragraph,
            d.unanswerable_fraction, id_prefix="train",
        ),
        "dev": corpus.generate_synthetic_corpus(
            s.seed + 1, d.n_dev_paragraphs, d.questions_per_paragraph,
            d.unanswerable_fraction, id_prefix="dev",
        ),
        "augment": corpus.generate_synthetic_corpus(
            s.seed + 2, d.n_augment_paragraphs, d.questions_per_paragraph,
            d.unanswerable_fraction, id_prefix="aug",
        ),
    }
    texts = []
    for para in splits["train"]:
        texts.append(para["context"])
        texts.extend(q["question"] for q in para["qas"])
    vocab = corpus.build_tokenizer(texts, d.vocab_size)
    corpus.save_vocab(os.path.join(s.out_dir, "vocab.txt"), vocab)
    for name, paragraphs in splits.items():
        _write_json(os.path.join(s.out_dir, f"{name}.json"), corpus.to_squad_json(paragraphs))
        packed = corpus.pack_paragraphs(paragraphs, vocab, d.max_seq_len)  # validates lengths
        n_null = sum(ex.is_impossible for ex in packed)
        print(f"{name}: {len(packed)} questions ({n_null} unanswerable) -> {name}.json")
    print(f"vocabulary: {len(vocab)} tokens -> vocab.txt")
    return 0


def cmd_train_teacher(args) -> int:
    s = build_settings(args)
    data_dir = _data_dir(args, s)
    vocab, train_ex = _load_vocab_and_split(s, data_dir, "train")
    _, dev_ex = _load_vocab_and_split(s, data_dir, "dev")
    s = _fit_vocab(s, vocab)
    teacher = TeacherModel(s.teacher, s.seed)
    print(f"teacher: {teacher.parameter_count():,} parameters, "
          f"{s.teacher_train.total_steps} steps")
    _result, em, f1 = train_teacher(teacher, train_ex, s.teacher_train, dev_ex)
    ckpt = os.path.join(s.out_dir, "teacher")
    checkpoint.save_model(ckpt, teacher, step=s.teacher_train.total_steps)
    base = majority_null_baseline(dev_ex)
    _write_json(os.path.join(s.out_dir, "teacher_eval.json"),
                {"em": em, "f1": f1, "n": len(dev_ex), "majority_null_em": base})
    print(f"teacher dev EM {em:.1f} / F1 {f1:.1f} (majority-null EM {base:.1f}) -> {ckpt}")
    return 0


def _load_teacher(args, s) -> TeacherModel:
    path = args.teacher or os.path.join(s.out_dir, "teacher")
    model, _step = checkpoint.load_model(path)
    if not isinstance(model, TeacherModel):
        raise DataError(f"{path} is not a teacher checkpoint")
    return model


def cmd_distill(args) -> int:
    s = build_settings(args)
    data_dir = _data_dir(args, s)
    vocab, train_ex = _load_vocab_and_split(s, data_dir, "train")
    s = _fit_vocab(s, vocab)
    mode = args.mode
    cfg = dataclasses.replace(s.train, mode=mode)
    teacher = None
    if mode != "baseline":
        teacher = _load_teacher(args, s)
    if mode == "slow_build_augmented":
        pairs = corpus.load_squad_pairs(os.path.join(data_dir, "augment.json"))
        train_ex = train_ex + corpus.augment_with_teacher(
            teacher, pairs, vocab, s.data.max_seq_len
        )
    student = StudentModel(s.student, s.seed)
    run_dir = os.path.join(s.out_dir, mode)
    print(f"distilling mode={mode}: student {student.parameter_count():,} params, "
          f"{cfg.total_steps} steps, {len(train_ex)} examples")
    train(student, teacher, train_ex, cfg, out_dir=run_dir, resume_from=args.resume)
    final = os.path.join(run_dir, "student")
    checkpoint.save_model(final, student, step=cfg.total_steps)
    print(f"student checkpoint -> {final}; metrics -> {run_dir}/metrics.jsonl")
    return 0


def cmd_eval(args) -> int:
    s = build_settings(args)
    data_dir = _data_dir(args, s)
    vocab = corpus.load_vocab(os.path.join(data_dir, "vocab.txt"))
    examples = corpus.load_squad_json(args.data, vocab, s.data.max_seq_len)
    model, _ = checkpoint.load_model(args.model)
    em, f1, preds = evaluate_model(model, examples, null_threshold=args.null_threshold)
    report = {"em": em, "f1": f1, "n": len(examples)}
    if args.predictions:
        _write_json(args.predictions, {k: (v or "") for k, v in preds.items()})
    out = _write_json(os.path.join(s.out_dir, "eval.json"), report)
    print(json.dumps(report))
    print(f"report -> {out}")
    return 0


def cmd_export_predictions(args) -> int:
    s = build_settings(args)
    data_dir = _data_dir(args, s)
    vocab = corpus.load_vocab(os.path.join(data_dir, "vocab.txt"))
    examples = corpus.load_squad_json(args.data, vocab, s.data.max_seq_len)
    model, _ = checkpoint.load_model(args.model)
    preds = predict(model, examples, null_threshold=args.null_threshold)
    out = _write_json(args.output or os.path.join(s.out_dir, "predictions.json"),
                      {k: (v or "") for k, v in preds.items()})
    print(f"predictions -> {out}")
    return 0


def cmd_ablate(args) -> int:
    s = build_settings(args)
    data_dir = _data_dir(args, s)
    vocab, train_ex = _load_vocab_and_split(s, data_dir, "train")
    _, dev_ex = _load_vocab_and_split(s, data_dir, "dev")
    s = _fit_vocab(s, vocab)
    teacher = _load_teacher(args, s)
    pairs = corpus.load_squad_pairs(os.path.join(data_dir, "augment.json"))
    augment_ex = corpus.augment_with_teacher(teacher, pairs, vocab, s.data.max_seq_len)

    def builder():
        return StudentModel(s.student, s.seed)

    rows = run_ablation(builder, teacher, train_ex, augment_ex, dev_ex, s.train,
                        out_dir=os.path.join(s.out_dir, "ablation"))
    _write_json(os.path.join(s.out_dir, "ablation.json"), rows)
    print(f"{'mode':<22}{'EM':>8}{'F1':>8}")
    for row in rows:
        print(f"{row['mode']:<22}{row['em']:>8.1f}{row['f1']:>8.1f}")
    return 0


def cmd_bench(args) -> int:
    s = build_settings(args)
    payload = {}
    if args.kernels:
        rows = bench_mod.bench_kernels(trials=args.trials)
        payload["kernels"] = rows
        names = [m.NAME for m in kernels.available_backends()]
        header = "kernel".ljust(24) + "".join(n.rjust(14) for n in names)
        print(header)
        for row in rows:
            print(row["kernel"].ljust(24) + "".join(
                f"{row[n] * 1e3:13.3f}ms" for n in names if n in row))
    if args.compare_compression or not args.kernels:
        if args.preset == "full":
            cfg = ModelConfig.full_size(vocab_size=2048)
        else:
            cfg = dataclasses.replace(s.student, max_seq_len=max(s.student.max_seq_len, args.seq_len))
        seq_len = min(args.seq_len, cfg.max_seq_len)
        reports = bench_mod.compression_bench(
            cfg, seq_len=seq_len, batch_size=args.batch_size,
            n_examples=args.examples, trials=args.trials, seed=s.seed,
        )
        payload["models"] = [r.as_dict() for r in reports]
        for r in reports:
            print(f"{r.name:<24} {r.n_params:>12,} params  "
                  f"{r.avg_time:8.3f}s +-{r.std_time:.3f}  {r.rel_speedup:5.2f}x")
    out = _write_json(os.path.join(s.out_dir, "bench.json"), payload)
    print(f"report -> {out}")
    return 0


def cmd_flops(args) -> int:
    build_settings(args)  # validates --config even though flops only needs dims
    cfg = ModelConfig.full_size()
    l = args.seq_len
    ratio = bench_mod.attention_flops(l // 4, cfg.hidden_size, cfg.n_heads) / \
        bench_mod.attention_flops(l, cfg.hidden_size, cfg.n_heads)
    print(f"attention work at l/4 vs l={l}: {ratio} (1/{round(1 / ratio)})")
    if args.compare_compression:
        comp = bench_mod.student_flops(cfg, compressed=True, seq_len=l)
        ctrl = bench_mod.student_flops(cfg, compressed=False, seq_len=l)
        print(f"compressed total:   {comp.total():,} FLOPs  {json.dumps(comp.as_dict())}")
        print(f"full-length total:  {ctrl.total():,} FLOPs  {json.dumps(ctrl.as_dict())}")
        print(f"compute ratio: {ctrl.total() / comp.total():.2f}x")
    return 0


# ---------------------------------------------------------------------------
# parser


def make_parser() -> _Parser:
    p = _Parser(prog="seqkd", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--data-dir", help="directory with vocab.txt and the JSON splits (default: out-dir)")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="generate the synthetic corpus and tokenizer")

    sub.add_parser("train-teacher", help="train the teacher on the train split")

    d = sub.add_parser("distill", help="train a student")
    d.add_argument("--mode", choices=MODES, default="slow_build")
    d.add_argument("--teacher", help="teacher checkpoint (default: <out-dir>/teacher)")
    d.add_argument("--resume", help="resume from a saved training state")

    e = sub.add_parser("eval", help="EM/F1 of a checkpoint on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--predictions", help="also write a predictions file")
    e.add_argument("--null-threshold", type=float, default=0.0)

    x = sub.add_parser("export-predictions", help="write predictions for a dataset")
    x.add_argument("--model", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--output")
    x.add_argument("--null-threshold", type=float, default=0.0)

    a = sub.add_parser("ablate", help="run the five-mode comparison")
    a.add_argument("--teacher", help="teacher checkpoint (default: <out-dir>/teacher)")

    b = sub.add_parser("bench", help="forward-pass wall-clock benchmark")
    b.add_argument("--seq-len", type=int, default=384)
    b.add_argument("--batch-size", type=int, default=8)
    b.add_argument("--examples", type=int, default=32)
    b.add_argument("--trials", type=int, default=3)
    b.add_argument("--preset", choices=("full", "small"), default="full")
    b.add_argument("--compare-compression", action="store_true")
    b.add_argument("--kernels", action="store_true", help="compare kernel backends")

    f = sub.add_parser("flops", help="analytic FLOP model")
    f.add_argument("--seq-len", type=int, default=384)
    f.add_argument("--compare-compression", action="store_true")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "export-predictions": cmd_export_predictions,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
    "flops": cmd_flops,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except SeqKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
