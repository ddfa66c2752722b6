"""Report corpus: records, tokenizer, vocabulary and JSON-lines I/O."""

from __future__ import annotations

import json
import os
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

# Label order of the 14-way topic vector (CheXbert categories).
TOPIC_NAMES = (
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
    "No Finding",
)
N_TOPICS = len(TOPIC_NAMES)
SPLITS = ("train", "val", "test")

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split off punctuation, split on whitespace."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass
class SampleRecord:
    id: str
    image_ref: str
    report: str
    topics: list[int]
    split: str

    def validate(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("field 'id' must be a nonempty string")
        if not isinstance(self.report, str) or not self.report.strip():
            raise CorpusError(f"{self.id}: field 'report' must be nonempty")
        if not isinstance(self.topics, list) or len(self.topics) != N_TOPICS:
            n = len(self.topics) if isinstance(self.topics, list) else "non-list"
            raise CorpusError(f"{self.id}: field 'topics' must have {N_TOPICS} entries, got {n}")
        if any(t not in (0, 1) or isinstance(t, bool) for t in self.topics):
            raise CorpusError(f"{self.id}: field 'topics' entries must be 0 or 1")
        if self.split not in SPLITS:
            raise CorpusError(f"{self.id}: field 'split' must be one of {SPLITS}, got {self.split!r}")


_FIELDS = ("id", "image_ref", "report", "topics", "split")


def load_corpus(path) -> list[SampleRecord]:
    records: list[SampleRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: record must be a JSON object")
            missing = [f for f in _FIELDS if f not in obj]
            if missing:
                raise CorpusError(f"{path}:{lineno}: missing field(s) {missing}")
            rec = SampleRecord(**{f: obj[f] for f in _FIELDS})
            try:
                rec.validate()
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if rec.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    if not records:
        raise CorpusError(f"{path}: empty corpus")
    return records


def write_corpus(path, records: Iterable[SampleRecord]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")


def split_records(records: Sequence[SampleRecord], split: str) -> list[SampleRecord]:
    return [r for r in records if r.split == split]


class Vocabulary:
    """Token <-> id bijection with PAD=0, BOS=1, EOS=2, UNK=3 reserved."""

    def __init__(self, tokens: Sequence[str], counts: Sequence[int] | None = None):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be unique")
        self.counts = list(counts) if counts is not None else [0] * (len(self.itos) - len(RESERVED))

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens: Sequence[str], add_eos: bool = True, max_len: int | None = None) -> list[int]:
        ids = [self.stoi.get(t, UNK) for t in tokens]
        if max_len is not None:
            ids = ids[: max_len - 1 if add_eos else max_len]
        return ids + [EOS] if add_eos else ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, cnt in zip(self.itos[len(RESERVED):], self.counts):
                fh.write(f"{tok}\t{cnt}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        toks, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                tok, cnt = line.rstrip("\n").split("\t")
                toks.append(tok)
                counts.append(int(cnt))
        return cls(toks, counts)


def _ranked(counter: Counter) -> list[tuple[str, int]]:
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))


def build_vocab(reports: Iterable[Sequence[str] | str], min_count: int = 1) -> Vocabulary:
    """Vocabulary from token lists (or raw texts): count >= min_count, frequency then lexicographic order."""
    counter: Counter = Counter()
    n = 0
    for rep in reports:
        counter.update(tokenize(rep) if isinstance(rep, str) else rep)
        n += 1
    if n == 0 or not counter:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    kept = [(t, c) for t, c in _ranked(counter) if c >= min_count and t not in RESERVED]
    return Vocabulary([t for t, _ in kept], [c for _, c in kept])
