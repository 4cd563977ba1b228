"""Byte-pair subword tokenizer with digit splitting and reserved control ids.

Spaces become a word-boundary marker (``▁``) that prefixes the following
word, so decoding is an exact inverse of encoding for in-vocabulary text.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import CorpusTooSmall, UnknownId, ValidationError
from .tabledoc import DEFAULT_MAX_COLS, DEFAULT_MAX_ROWS, Component, clip_component

MARK = "▁"
PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
NUM_SENTINELS = 100
SENTINEL_BASE = 3
NUM_RESERVED = SENTINEL_BASE + NUM_SENTINELS
RESERVED_PIECES = ("<pad>", "</s>", "<unk>") + tuple(
    f"<extra_id_{i}>" for i in range(NUM_SENTINELS)
)
VOCAB_HEADER = "tabseq-vocab 1"

_CHUNK_RE = re.compile(f"{MARK}[^{MARK}]*|[^{MARK}]+")
_SEGMENT_RE = re.compile(r"\d|\D+")


def sentinel_id(i: int) -> int:
    if not 0 <= i < NUM_SENTINELS:
        raise ValueError(f"sentinel index {i} out of range")
    return SENTINEL_BASE + i


def is_sentinel(token_id: int) -> bool:
    return SENTINEL_BASE <= token_id < NUM_RESERVED


def _chunks(text: str) -> list[str]:
    return _CHUNK_RE.findall(text.replace(" ", MARK))


@dataclass(frozen=True)
class Vocab:
    pieces: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    _piece_ids: dict = field(init=False, repr=False, compare=False)
    _ranks: dict = field(init=False, repr=False, compare=False)
    _cache: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.pieces[:NUM_RESERVED] != RESERVED_PIECES:
            raise ValidationError("vocab does not start with the reserved pieces")
        ids: dict[str, int] = {}
        for i, p in enumerate(self.pieces[NUM_RESERVED:], start=NUM_RESERVED):
            ids.setdefault(p, i)
        object.__setattr__(self, "_piece_ids", ids)
        object.__setattr__(self, "_ranks", {m: r for r, m in enumerate(self.merges)})
        object.__setattr__(self, "_cache", {})

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def size(self) -> int:
        return len(self.pieces)

    def piece_id(self, piece: str) -> int:
        return self._piece_ids.get(piece, UNK_ID)

    def _bpe(self, segment: str) -> tuple[int, ...]:
        cached = self._cache.get(segment)
        if cached is not None:
            return cached
        symbols = list(segment)
        ranks = self._ranks
        while len(symbols) > 1:
            best = None
            best_rank = None
            for pair in zip(symbols, symbols[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            merged = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        out = tuple(self.piece_id(s) for s in symbols)
        self._cache[segment] = out
        return out

    # -- serialization --------------------------------------------------
    def dumps(self) -> str:
        lines = [VOCAB_HEADER, f"pieces {len(self.pieces)}"]
        lines += [json.dumps(p, ensure_ascii=False) for p in self.pieces]
        lines.append(f"merges {len(self.merges)}")
        lines += [json.dumps(list(m), ensure_ascii=False) for m in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        lines = text.split("\n")
        if not lines or lines[0] != VOCAB_HEADER:
            raise ValidationError(f"not a vocab file (expected header {VOCAB_HEADER!r})")
        try:
            n = int(lines[1].split()[1])
            pieces = tuple(json.loads(line) for line in lines[2 : 2 + n])
            m = int(lines[2 + n].split()[1])
            merges = tuple(tuple(json.loads(line)) for line in lines[3 + n : 3 + n + m])
        except (IndexError, ValueError) as exc:
            raise ValidationError(f"malformed vocab file: {exc}") from None
        return cls(pieces, merges)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8", newline="\n") as fh:
            return cls.loads(fh.read())


def train_vocab(corpus: Iterable[str], target_size: int) -> Vocab:
    """Greedy pair-merge training up to exactly ``target_size`` pieces.

    The most frequent adjacent pair is merged first; ties go to the
    lexicographically smaller pair.
    """
    words: Counter[str] = Counter()
    for text in corpus:
        words.update(_chunks(text))
    alphabet = sorted({ch for w in words for ch in w})
    if len(alphabet) + NUM_RESERVED > target_size:
        raise CorpusTooSmall(
            f"{len(alphabet)} characters + {NUM_RESERVED} reserved exceed target size {target_size}"
        )
    pieces = list(RESERVED_PIECES) + alphabet
    known = set(alphabet)
    merges: list[tuple[str, str]] = []
    # unique words in first-seen order keep training deterministic
    entries = [[list(w), n] for w, n in words.items()]
    while len(pieces) < target_size:
        counts: Counter[tuple[str, str]] = Counter()
        for symbols, n in entries:
            for pair in zip(symbols, symbols[1:]):
                counts[pair] += n
        if not counts:
            raise CorpusTooSmall(
                f"corpus supports only {len(pieces)} pieces, target size is {target_size}"
            )
        best = min(counts, key=lambda p: (-counts[p], p))
        merges.append(best)
        joined = best[0] + best[1]
        if joined not in known:
            known.add(joined)
            pieces.append(joined)
        for entry in entries:
            symbols = entry[0]
            if len(symbols) < 2:
                continue
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == best[0] and symbols[i + 1] == best[1]:
                    out.append(joined)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            entry[0] = out
    return Vocab(tuple(pieces), tuple(merges))


def encode_text(vocab: Vocab, text: str, number_split: bool = False) -> list[int]:
    ids: list[int] = []
    for chunk in _chunks(text):
        if number_split:
            for seg in _SEGMENT_RE.findall(chunk):
                ids.extend(vocab._bpe(seg))
        else:
            ids.extend(vocab._bpe(chunk))
    return ids


def decode_ids(vocab: Vocab, ids: Iterable[int]) -> str:
    parts = []
    size = len(vocab)
    for i in ids:
        i = int(i)
        if not 0 <= i < size:
            raise UnknownId(f"token id {i} outside vocabulary of size {size}")
        if i >= NUM_RESERVED:
            parts.append(vocab.pieces[i])
    return "".join(parts).replace(MARK, " ")


@dataclass(frozen=True)
class StructuredTokenSequence:
    token_ids: tuple[int, ...]
    type_ids: tuple[int, ...]
    row_ids: tuple[int, ...]
    col_ids: tuple[int, ...]

    def __post_init__(self):
        n = len(self.token_ids)
        if not (len(self.type_ids) == len(self.row_ids) == len(self.col_ids) == n):
            raise ValidationError("structured sequence arrays differ in length")

    @property
    def length(self) -> int:
        return len(self.token_ids)

    def __len__(self) -> int:
        return len(self.token_ids)

    def to_dict(self) -> dict:
        return {
            "input_tokens": list(self.token_ids),
            "type_ids": list(self.type_ids),
            "row_ids": list(self.row_ids),
            "col_ids": list(self.col_ids),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StructuredTokenSequence":
        return cls(
            tuple(obj["input_tokens"]),
            tuple(obj["type_ids"]),
            tuple(obj["row_ids"]),
            tuple(obj["col_ids"]),
        )

    def truncated(self, max_len: int) -> "StructuredTokenSequence":
        """Cut to ``max_len`` tokens, keeping the trailing eos."""
        if self.length <= max_len:
            return self
        keep = max_len - 1
        return StructuredTokenSequence(
            self.token_ids[:keep] + (EOS_ID,),
            self.type_ids[:keep] + (0,),
            self.row_ids[:keep] + (0,),
            self.col_ids[:keep] + (0,),
        )


def encode_stream(
    vocab: Vocab,
    components: Sequence[Component],
    max_input_len: int | None = None,
    *,
    number_split: bool = False,
    max_rows: int = DEFAULT_MAX_ROWS,
    max_cols: int = DEFAULT_MAX_COLS,
    pieces: Sequence[Sequence[int] | None] | None = None,
) -> StructuredTokenSequence:
    """Expand components to tokens that inherit (type, row, col), then eos.

    ``pieces`` optionally supplies pre-tokenized ids per component (``None``
    entries are tokenized normally). Over-long streams keep whole leading
    components and fill the remaining budget from the first one that does
    not fit; eos is always last.
    """
    if max_input_len is not None and max_input_len < 1:
        raise ValueError("max_input_len must be positive")
    budget = None if max_input_len is None else max_input_len - 1
    tok: list[int] = []
    typ: list[int] = []
    row: list[int] = []
    col: list[int] = []
    for k, comp in enumerate(components):
        ids = pieces[k] if pieces is not None and pieces[k] is not None else None
        if ids is None:
            ids = encode_text(vocab, comp.utterance, number_split)
        ids = list(ids)
        if budget is not None and len(tok) + len(ids) > budget:
            ids = ids[: budget - len(tok)]
        c = clip_component(comp, max_rows, max_cols)
        tok.extend(ids)
        typ.extend([int(c.ctype)] * len(ids))
        row.extend([c.row] * len(ids))
        col.extend([c.col] * len(ids))
        if budget is not None and len(tok) >= budget:
            break
    tok.append(EOS_ID)
    typ.append(0)
    row.append(0)
    col.append(0)
    return StructuredTokenSequence(tuple(tok), tuple(typ), tuple(row), tuple(col))
