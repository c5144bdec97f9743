"""Extractive-QA data layer.

Subword tokenizer (frequency-trained merges, greedy longest-match encoding),
SQuAD-v2.0-format ingestion and export, a template-grammar synthetic corpus
generator that stands in for large-scale augmentation, teacher-labeled
unlabeled examples, and the EM/F1 evaluator with the official normalization
rules (lowercase, strip punctuation and articles, collapse whitespace).

Packed inputs follow the BERT QA convention:
    [CLS] question [SEP] context [SEP] <pad...>
with segment 0 through the first [SEP] and segment 1 for the context half.
Unanswerable questions map to the (0, 0) span at the [CLS] slot.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DataError

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"
SPECIALS = (PAD, CLS, SEP, UNK)
_NO_SPACE_BEFORE = set(".,?!;:')")
_WORD_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def basic_tokens(text: str) -> List[Tuple[str, int, int]]:
    """Lowercased word/punctuation tokens with (start, end) char offsets."""
    out = []
    for m in _WORD_RE.finditer(text.lower()):
        out.append((m.group(), m.start(), m.end()))
    return out


class Vocabulary:
    """Subword vocabulary with greedy longest-match encoding.

    Continuation pieces carry the ``##`` prefix. decode() round-trips any text
    made of in-vocabulary words, single spaces, and trailing punctuation.
    """

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("duplicate tokens in vocabulary")
        for s in SPECIALS:
            if s not in self.token_to_id:
                raise ConfigError(f"vocabulary missing special token {s}")
        self.pad_id = self.token_to_id[PAD]
        self.cls_id = self.token_to_id[CLS]
        self.sep_id = self.token_to_id[SEP]
        self.unk_id = self.token_to_id[UNK]

    def __len__(self):
        return len(self.id_to_token)

    def _wordpieces(self, word: str) -> Optional[List[str]]:
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            piece = None
            while start < end:
                cand = word[start:end] if start == 0 else "##" + word[start:end]
                if cand in self.token_to_id:
                    piece = cand
                    break
                end -= 1
            if piece is None:
                return None
            pieces.append(piece)
            start = end
        return pieces

    def encode_with_offsets(self, text: str) -> Tuple[List[int], List[Tuple[int, int]]]:
        """Token ids plus per-token (start, end) char offsets into ``text``."""
        ids, offsets = [], []
        for word, w_start, w_end in basic_tokens(text):
            pieces = self._wordpieces(word)
            if pieces is None:
                ids.append(self.unk_id)
                offsets.append((w_start, w_end))
                continue
            consumed = 0
            for piece in pieces:
                width = len(piece) - 2 if piece.startswith("##") else len(piece)
                ids.append(self.token_to_id[piece])
                offsets.append((w_start + consumed, w_start + consumed + width))
                consumed += width
        return ids, offsets

    def encode(self, text: str) -> List[int]:
        return self.encode_with_offsets(text)[0]

    def decode(self, ids: Sequence[int]) -> str:
        words: List[str] = []
        for i in ids:
            tok = self.id_to_token[int(i)]
            if tok in SPECIALS:
                continue
            if tok.startswith("##") and words:
                words[-1] += tok[2:]
            elif tok in _NO_SPACE_BEFORE and words:
                words[-1] += tok
            else:
                words.append(tok)
        return " ".join(words)


def build_tokenizer(texts: Sequence[str], vocab_size: int) -> Vocabulary:
    """Train merge-based subwords on ``texts`` by pair frequency.

    Starts from single characters (word-initial and ``##`` continuations) and
    repeatedly merges the most frequent adjacent pair, breaking ties
    lexicographically, until the vocabulary is full.
    """
    if vocab_size < len(SPECIALS) + 1:
        raise ConfigError(f"vocab_size {vocab_size} smaller than the special-token set")
    if not texts:
        raise ConfigError("cannot train a tokenizer on an empty corpus")

    word_freq = Counter()
    for text in texts:
        for word, _s, _e in basic_tokens(text):
            word_freq[word] += 1

    words = {w: [w[0]] + ["##" + ch for ch in w[1:]] for w in word_freq}
    vocab = set()
    for symbols in words.values():
        vocab.update(symbols)

    def room():
        return len(SPECIALS) + len(vocab) < vocab_size

    while room():
        pairs = Counter()
        for w, symbols in words.items():
            freq = word_freq[w]
            for a, b in zip(symbols, symbols[1:]):
                pairs[(a, b)] += freq
        if not pairs:
            break
        top = max(pairs.items(), key=lambda kv: (kv[1], kv[0][0], kv[0][1]))
        (a, b), count = top
        if count < 2:
            break
        merged = a + b[2:]
        vocab.add(merged)
        for w, symbols in words.items():
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            words[w] = out

    ordered = list(SPECIALS) + sorted(vocab)
    return Vocabulary(ordered)


# ---------------------------------------------------------------------------
# packed examples


@dataclass
class QAExample:
    """One packed (question, context) record."""

    qas_id: str
    question: str
    context: str
    answers: List[str]  # ground-truth texts; empty for null answers
    token_ids: np.ndarray  # (l,)
    attention_mask: np.ndarray  # (l,)
    token_type_ids: np.ndarray  # (l,)
    context_bounds: Tuple[int, int]  # inclusive token positions of the context
    token_offsets: List[Optional[Tuple[int, int]]]  # context char offsets per position
    span: Tuple[int, int]  # (0, 0) marks the null answer
    has_label: bool = True
    is_impossible: bool = False

    def span_text(self, span: Optional[Tuple[int, int]]) -> Optional[str]:
        """Context substring covered by a predicted token span (None for null)."""
        if span is None or span == (0, 0):
            return None
        s, e = span
        lo, hi = self.context_bounds
        if not (lo <= s <= e <= hi):
            return None
        return self.context[self.token_offsets[s][0]:self.token_offsets[e][1]]


def pack_example(
    vocab: Vocabulary,
    qas_id: str,
    question: str,
    context: str,
    max_seq_len: int,
    answers: Optional[List[str]] = None,
    answer_start: Optional[int] = None,
    is_impossible: bool = False,
    has_label: bool = True,
) -> QAExample:
    """Tokenize, pack, and map the character answer span onto token positions."""
    q_ids, _ = vocab.encode_with_offsets(question)
    c_ids, c_offsets = vocab.encode_with_offsets(context)

    budget = max_seq_len - 3 - len(q_ids)
    if budget < 1:
        raise DataError(f"{qas_id}: question leaves no room for context in length {max_seq_len}")
    c_ids = c_ids[:budget]
    c_offsets = c_offsets[:budget]

    ids = [vocab.cls_id] + q_ids + [vocab.sep_id] + c_ids + [vocab.sep_id]
    n = len(ids)
    ctx_lo = 2 + len(q_ids)
    ctx_hi = ctx_lo + len(c_ids) - 1
    token_ids = np.full(max_seq_len, vocab.pad_id, dtype=np.int64)
    token_ids[:n] = ids
    attention_mask = np.zeros(max_seq_len, dtype=np.int64)
    attention_mask[:n] = 1
    token_type_ids = np.zeros(max_seq_len, dtype=np.int64)
    token_type_ids[ctx_lo:n] = 1
    token_offsets: List[Optional[Tuple[int, int]]] = [None] * max_seq_len
    for k, off in enumerate(c_offsets):
        token_offsets[ctx_lo + k] = off

    span = (0, 0)
    answers = answers or []
    if not is_impossible and has_label and answers:
        text = answers[0]
        if answer_start is None:
            answer_start = context.lower().find(text.lower())
        if answer_start < 0:
            raise DataError(f"{qas_id}: answer text not found in context")
        answer_end = answer_start + len(text)
        first = last = None
        for k, off in enumerate(c_offsets):
            if off[1] > answer_start and off[0] < answer_end:
                if first is None:
                    first = k
                last = k
        if first is None:
            raise DataError(f"{qas_id}: answer span cannot be mapped onto the packed tokens")
        span = (ctx_lo + first, ctx_lo + last)

    return QAExample(
        qas_id=qas_id,
        question=question,
        context=context,
        answers=list(answers),
        token_ids=token_ids,
        attention_mask=attention_mask,
        token_type_ids=token_type_ids,
        context_bounds=(ctx_lo, ctx_hi),
        token_offsets=token_offsets,
        span=span,
        has_label=has_label,
        is_impossible=is_impossible,
    )


def batch_arrays(examples: Sequence[QAExample]) -> Dict[str, np.ndarray]:
    """Stack a list of examples into model-ready arrays."""
    return {
        "token_ids": np.stack([ex.token_ids for ex in examples]),
        "attention_mask": np.stack([ex.attention_mask for ex in examples]),
        "token_type_ids": np.stack([ex.token_type_ids for ex in examples]),
        "start_targets": np.array([ex.span[0] for ex in examples], dtype=np.int64),
        "end_targets": np.array([ex.span[1] for ex in examples], dtype=np.int64),
        "has_label": np.array([ex.has_label for ex in examples], dtype=bool),
        "context_bounds": [ex.context_bounds for ex in examples],
    }


# ---------------------------------------------------------------------------
# SQuAD v2.0 JSON

def load_squad_json(path: str, vocab: Vocabulary, max_seq_len: int) -> List[QAExample]:
    """Read a SQuAD v2.0 file and pack every qas entry."""
    try:
        with open(path) as fh:
            blob = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse SQuAD JSON at {path}: {exc}") from exc
    examples = []
    try:
        articles = blob["data"]
    except (TypeError, KeyError) as exc:
        raise DataError(f"{path}: missing top-level 'data' array") from exc
    for article in articles:
        for para in article.get("paragraphs", []):
            context = para["context"]
            for qa in para.get("qas", []):
                impossible = bool(qa.get("is_impossible", False))
                answers = [a["text"] for a in qa.get("answers", [])]
                answer_start = qa["answers"][0]["answer_start"] if (answers and not impossible) else None
                examples.append(
                    pack_example(
                        vocab,
                        qa["id"],
                        qa["question"],
                        context,
                        max_seq_len,
                        answers=answers,
                        answer_start=answer_start,
                        is_impossible=impossible,
                    )
                )
    return examples


def to_squad_json(paragraphs: List[dict]) -> dict:
    """Wrap generated paragraphs in the SQuAD v2.0 schema."""
    return {"version": "v2.0", "data": [{"title": "synthetic", "paragraphs": paragraphs}]}


def load_squad_pairs(path: str) -> List[Tuple[str, str, str]]:
    """(id, question, context) triples from a SQuAD file, labels ignored."""
    try:
        with open(path) as fh:
            blob = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse SQuAD JSON at {path}: {exc}") from exc
    pairs = []
    for article in blob.get("data", []):
        for para in article.get("paragraphs", []):
            for qa in para.get("qas", []):
                pairs.append((qa["id"], qa["question"], para["context"]))
    return pairs


def save_vocab(path: str, vocab: Vocabulary):
    with open(path, "w") as fh:
        fh.write("\n".join(vocab.id_to_token) + "\n")


def load_vocab(path: str) -> Vocabulary:
    try:
        with open(path) as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    except OSError as exc:
        raise DataError(f"cannot read vocabulary at {path}: {exc}") from exc
    return Vocabulary(tokens)


# ---------------------------------------------------------------------------
# synthetic corpus


SYLLABLES = [
    "ba", "del", "fon", "gar", "hul", "jor", "kel", "lim", "mor", "nar",
    "pol", "quin", "ras", "sol", "tur", "vex", "wil", "yar", "zan", "bri",
    "cor", "dun", "eth", "fal", "gri",
]

RELATIONS = {
    "capital": ("the capital of {e} is {v}.", "what is the capital of {e}?"),
    "currency": ("the currency of {e} is the {v}.", "what is the currency of {e}?"),
    "founder": ("{e} was founded by {v}.", "who founded {e}?"),
    "language": ("the people of {e} speak {v}.", "what language do the people of {e} speak?"),
    "flower": ("the national flower of {e} is the {v}.", "what is the national flower of {e}?"),
    "river": ("the longest river of {e} is the {v}.", "what is the longest river of {e}?"),
    "mountain": ("the highest mountain of {e} is {v}.", "what is the highest mountain of {e}?"),
    "festival": ("the main festival of {e} is {v}.", "what is the main festival of {e}?"),
}


def _name(rng: np.random.Generator, n_syllables: int) -> str:
    return "".join(rng.choice(SYLLABLES) for _ in range(n_syllables))


def generate_synthetic_corpus(
    seed: int,
    n_paragraphs: int,
    questions_per_paragraph: int = 3,
    unanswerable_fraction: float = 1.0 / 3.0,
    id_prefix: str = "syn",
) -> List[dict]:
    """Grammar-generated paragraphs with exact-span questions, SQuAD-schema shaped.

    Each paragraph describes one invented entity through a shuffled subset of
    relation sentences; answerable questions target a present relation (the
    answer is the relation's value, verbatim in the context) and unanswerable
    ones target an absent relation.
    """
    if n_paragraphs < 1:
        raise ConfigError("n_paragraphs must be >= 1")
    rng = np.random.default_rng(seed)
    rel_names = sorted(RELATIONS)
    paragraphs = []
    for p in range(n_paragraphs):
        entity = _name(rng, 2)
        k = int(rng.integers(4, 6))
        present = list(rng.choice(rel_names, size=k, replace=False))
        values = {}
        used = {entity}
        for rel in present:
            while True:
                two_words = rng.random() < 0.25
                v = _name(rng, 2) + (" " + _name(rng, 2) if two_words else "")
                if v not in used and not any(part in used for part in v.split()):
                    used.add(v)
                    used.update(v.split())
                    break
            values[rel] = v
        sentences = [RELATIONS[rel][0].format(e=entity, v=values[rel]) for rel in present]
        order = rng.permutation(len(sentences))
        context = " ".join(sentences[i] for i in order)

        absent = [r for r in rel_names if r not in present]
        qas = []
        for q in range(questions_per_paragraph):
            qas_id = f"{id_prefix}-{seed}-{p}-{q}"
            if rng.random() < unanswerable_fraction and absent:
                rel = absent[int(rng.integers(len(absent)))]
                qas.append(
                    {
                        "id": qas_id,
                        "question": RELATIONS[rel][1].format(e=entity),
                        "answers": [],
                        "is_impossible": True,
                    }
                )
            else:
                rel = present[int(rng.integers(len(present)))]
                answer = values[rel]
                # word-boundary search: a name may occur as a substring of a longer name
                start = re.search(rf"(?<![a-z]){re.escape(answer)}(?![a-z])", context).start()
                qas.append(
                    {
                        "id": qas_id,
                        "question": RELATIONS[rel][1].format(e=entity),
                        "answers": [{"text": answer, "answer_start": start}],
                        "is_impossible": False,
                    }
                )
        paragraphs.append({"context": context, "qas": qas})
    return paragraphs


def pack_paragraphs(
    paragraphs: List[dict], vocab: Vocabulary, max_seq_len: int, has_label: bool = True
) -> List[QAExample]:
    examples = []
    for para in paragraphs:
        for qa in para["qas"]:
            answers = [a["text"] for a in qa.get("answers", [])]
            start = qa["answers"][0]["answer_start"] if answers else None
            examples.append(
                pack_example(
                    vocab,
                    qa["id"],
                    qa["question"],
                    para["context"],
                    max_seq_len,
                    answers=answers,
                    answer_start=start,
                    is_impossible=bool(qa.get("is_impossible", False)),
                    has_label=has_label,
                )
            )
    return examples


def augment_with_teacher(teacher, pairs, vocab: Vocabulary, max_seq_len: int) -> List[QAExample]:
    """Wrap unlabeled (id, question, context) pairs for distillation-only training.

    The trained teacher supplies signals on demand during training; these
    examples carry no ground-truth span, so the ground-truth loss skips them.
    """
    if teacher is not None and teacher.config.vocab_size != len(vocab):
        raise ConfigError(
            f"teacher vocab {teacher.config.vocab_size} != tokenizer vocab {len(vocab)}"
        )
    out = []
    for qas_id, question, context in pairs:
        out.append(
            pack_example(
                vocab, qas_id, question, context, max_seq_len,
                answers=[], is_impossible=False, has_label=False,
            )
        )
    return out


# ---------------------------------------------------------------------------
# evaluation


def normalize_answer(s: str) -> str:
    """Official normalization: lowercase, drop punctuation and articles, fix spaces."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    return " ".join(s.split())


def _token_f1(pred: str, truth: str) -> float:
    pred_toks = normalize_answer(pred).split()
    truth_toks = normalize_answer(truth).split()
    if not pred_toks or not truth_toks:
        return float(pred_toks == truth_toks)
    common = Counter(pred_toks) & Counter(truth_toks)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_toks)
    recall = overlap / len(truth_toks)
    return 2 * precision * recall / (precision + recall)


def evaluate(predictions: Sequence[Optional[str]], examples: Sequence[QAExample]) -> Tuple[float, float]:
    """(EM, F1) percentages; a prediction of None or "" is the null answer.

    EM counts normalized exact matches against any ground truth (null matches
    null); F1 averages each example's best token overlap, with null-vs-null
    scoring 1 and null-vs-span scoring 0.
    """
    if len(predictions) != len(examples):
        raise ContractError(f"{len(predictions)} predictions for {len(examples)} examples")
    em_total = 0.0
    f1_total = 0.0
    for pred, ex in zip(predictions, examples):
        pred_null = pred is None or pred == ""
        truth_null = ex.is_impossible or not ex.answers
        if truth_null or pred_null:
            score = float(pred_null == truth_null)
            em_total += score
            f1_total += score
            continue
        norm_pred = normalize_answer(pred)
        em_total += float(any(norm_pred == normalize_answer(t) for t in ex.answers))
        f1_total += max(_token_f1(pred, t) for t in ex.answers)
    n = len(examples)
    return 100.0 * em_total / n, 100.0 * f1_total / n
