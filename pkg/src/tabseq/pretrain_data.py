"""Pretraining example generators: table denoising and statement matching."""
from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import MalformedTarget, NoCells, ValidationError
from .tabledoc import (
    DEFAULT_MAX_COLS,
    DEFAULT_MAX_ROWS,
    Component,
    ComponentType,
    Document,
    linearize,
    with_components,
)
from .textnorm import normalize_text, parse_date, parse_number
from .tokenizer import (
    EOS_ID,
    NUM_SENTINELS,
    StructuredTokenSequence,
    Vocab,
    encode_stream,
    encode_text,
    is_sentinel,
    sentinel_id,
)


@dataclass(frozen=True)
class Example:
    """A model-ready pair: structured input stream and target token ids."""

    id: str
    input: StructuredTokenSequence
    target: tuple[int, ...]

    def to_json(self) -> str:
        obj = {"id": self.id, **self.input.to_dict(), "target_tokens": list(self.target)}
        return json.dumps(obj, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "Example":
        obj = json.loads(line)
        try:
            return cls(
                str(obj["id"]),
                StructuredTokenSequence.from_dict(obj),
                tuple(obj["target_tokens"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed example record: {exc}") from None


def read_examples(path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Example.from_json(line))
    return out


def write_examples(path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")


# -- denoising ----------------------------------------------------------------

class UnitKind(enum.Enum):
    Cell = "Cell"
    Column = "Column"


@dataclass(frozen=True)
class MaskedUnit:
    kind: UnitKind
    row: int
    col: int
    # (start offset in the uncorrupted token stream, token count) per covered component
    segments: tuple[tuple[int, int], ...]

    @property
    def num_tokens(self) -> int:
        return sum(n for _, n in self.segments)


@dataclass(frozen=True)
class CorruptionExample:
    input: StructuredTokenSequence
    target: tuple[int, ...]
    mask_plan: tuple[MaskedUnit, ...]
    doc_id: str = ""

    def as_example(self) -> Example:
        return Example(self.doc_id, self.input, self.target)


def corruption_budget(rate: float, num_cells: int) -> int:
    return max(1, math.floor(rate * num_cells + 0.5))


def _rng_for(rng_seed: int, doc_id: str) -> random.Random:
    return random.Random(f"{rng_seed}:{doc_id}")


def corrupt(
    doc: Document,
    vocab: Vocab,
    rate: float = 0.15,
    column_prob: float = 0.1,
    rng_seed: int = 0,
    *,
    number_split: bool = False,
    max_rows: int = DEFAULT_MAX_ROWS,
    max_cols: int = DEFAULT_MAX_COLS,
) -> CorruptionExample:
    """Replace table cells and whole columns with sentinels.

    Units are drawn until the number of covered cells reaches the budget;
    a masked column (header plus all its cells) becomes one sentinel at the
    header position. Only columns that fit in the remaining budget are
    eligible, so the covered-cell count never exceeds the budget.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"rate must lie in (0, 1), got {rate}")
    if not 0.0 <= column_prob <= 1.0:
        raise ValueError(f"column_prob must lie in [0, 1], got {column_prob}")
    comps = linearize(doc)
    cells = [(c.row, c.col) for c in comps if c.ctype is ComponentType.TableCell]
    if not cells:
        raise NoCells(f"document {doc.id!r} has no table cells")

    by_col: dict[int, list[tuple[int, int]]] = {}
    for rc in cells:
        by_col.setdefault(rc[1], []).append(rc)
    columns = sorted(by_col)

    rng = _rng_for(rng_seed, doc.id)
    budget = corruption_budget(rate, len(cells))
    masked_cells: set[tuple[int, int]] = set()
    masked_cols: set[int] = set()
    consumed = 0
    max_units = NUM_SENTINELS - 1  # the target needs one closing sentinel
    while consumed < budget and len(masked_cells) + len(masked_cols) < max_units:
        want_column = rng.random() < column_prob
        room = budget - consumed
        free_cols = [j for j in columns if j not in masked_cols and len(by_col[j]) <= room
                     and not any(rc in masked_cells for rc in by_col[j])]
        if want_column and free_cols:
            j = rng.choice(free_cols)
            masked_cols.add(j)
            consumed += len(by_col[j])
            continue
        free_cells = [rc for rc in cells if rc not in masked_cells and rc[1] not in masked_cols]
        if not free_cells:
            break
        rc = rng.choice(free_cells)
        masked_cells.add(rc)
        consumed += 1

    token_lists = [encode_text(vocab, c.utterance, number_split) for c in comps]

    # walk the stream once, assigning sentinels in input order
    unit_of: dict[tuple, int] = {}
    unit_keys: list[tuple] = []
    unit_segments: list[list[tuple[int, int]]] = []
    unit_tokens: list[list[int]] = []
    in_comps: list[Component] = []
    in_pieces: list[list[int] | None] = []
    offset = 0
    for comp, ids in zip(comps, token_lists):
        key = None
        if comp.ctype.is_table and comp.col in masked_cols:
            key = (UnitKind.Column, 0, comp.col)
        elif comp.ctype is ComponentType.TableCell and (comp.row, comp.col) in masked_cells:
            key = (UnitKind.Cell, comp.row, comp.col)
        if key is None:
            in_comps.append(comp)
            in_pieces.append(ids)
        else:
            if key not in unit_of:
                unit_of[key] = len(unit_keys)
                unit_keys.append(key)
                unit_segments.append([])
                unit_tokens.append([])
                idx = unit_of[key]
                ctype = ComponentType.TableHeader if key[0] is UnitKind.Column else ComponentType.TableCell
                in_comps.append(Component("", ctype, key[2], key[1]))
                in_pieces.append([sentinel_id(idx)])
            idx = unit_of[key]
            unit_segments[idx].append((offset, len(ids)))
            unit_tokens[idx].extend(ids)
        offset += len(ids)

    inp = encode_stream(
        vocab, in_comps, None, max_rows=max_rows, max_cols=max_cols, pieces=in_pieces
    )
    target: list[int] = []
    for idx, toks in enumerate(unit_tokens):
        target.append(sentinel_id(idx))
        target.extend(toks)
    target.append(sentinel_id(len(unit_tokens)))
    target.append(EOS_ID)
    plan = tuple(
        MaskedUnit(k[0], k[1], k[2], tuple(segs)) for k, segs in zip(unit_keys, unit_segments)
    )
    return CorruptionExample(inp, tuple(target), plan, doc.id)


def masked_cell_count(example: CorruptionExample, doc: Document) -> int:
    """Number of data cells covered by the example's masked units."""
    per_col: dict[int, int] = {}
    for c in doc.components:
        if c.ctype is ComponentType.TableCell:
            per_col[c.col] = per_col.get(c.col, 0) + 1
    return sum(per_col.get(u.col, 0) if u.kind is UnitKind.Column else 1 for u in example.mask_plan)


def reconstruct(example: CorruptionExample, vocab: Vocab | None = None) -> list[int]:
    """Splice the target spans back into the corrupted input stream."""
    inp = list(example.input.token_ids)
    in_sentinels = [t for t in inp if is_sentinel(t)]
    n_units = len(example.mask_plan)
    if in_sentinels != [sentinel_id(i) for i in range(n_units)]:
        raise MalformedTarget("input sentinels are not sentinel_0..n-1 in order")
    tgt = list(example.target)
    if not tgt or tgt[-1] != EOS_ID:
        raise MalformedTarget("target does not end with eos")
    tgt = tgt[:-1]
    marks = [i for i, t in enumerate(tgt) if is_sentinel(t)]
    if [tgt[i] for i in marks] != [sentinel_id(i) for i in range(n_units + 1)] or marks[:1] != [0]:
        raise MalformedTarget("target sentinel order does not match the input")
    spans = [tgt[a + 1 : b] for a, b in zip(marks, marks[1:])]
    if marks[-1] != len(tgt) - 1:
        raise MalformedTarget("tokens follow the closing sentinel")

    survivors = [t for t in inp if not is_sentinel(t)]
    total = len(survivors) + sum(u.num_tokens for u in example.mask_plan)
    out: list[int | None] = [None] * total
    for unit, span in zip(example.mask_plan, spans):
        if len(span) != unit.num_tokens:
            raise MalformedTarget(
                f"span for unit at ({unit.row}, {unit.col}) has {len(span)} tokens, "
                f"plan expects {unit.num_tokens}"
            )
        pos = 0
        for start, n in unit.segments:
            if start + n > total:
                raise MalformedTarget("mask plan points past the end of the stream")
            out[start : start + n] = span[pos : pos + n]
            pos += n
    it = iter(survivors)
    for i, t in enumerate(out):
        if t is None:
            out[i] = next(it)
    return out  # type: ignore[return-value]


# -- ToTTification --------------------------------------------------------------

class EntityKind(enum.Enum):
    UrlTitle = "UrlTitle"
    Number = "Number"
    Date = "Date"


@dataclass(frozen=True)
class Statement:
    text: str
    entities: tuple[tuple[EntityKind, str], ...]
    doc_id: str = ""

    @classmethod
    def from_dict(cls, obj: dict) -> "Statement":
        ents = tuple((EntityKind(e["kind"]), str(e["surface"])) for e in obj.get("entities", []))
        return cls(str(obj["text"]), ents, str(obj.get("doc_id", "")))


def _entity_matches(kind: EntityKind, surface: str, values: Sequence[str]) -> bool:
    norm = normalize_text(surface)
    if kind is EntityKind.Number:
        target = parse_number(surface)
        if target is not None:
            tol = 1e-9 * max(1.0, abs(target))
            return any(
                (v := parse_number(x)) is not None and abs(v - target) <= tol for x in values
            )
    if kind is EntityKind.Date:
        target = parse_date(surface)
        if target is not None:
            for x in values:
                d = parse_date(x)
                if d is not None:
                    if d == target:
                        return True
                elif normalize_text(x) == norm:
                    return True
            return False
    return any(normalize_text(x) == norm for x in values)


def entity_match(statement: Statement, doc: Document) -> list[str]:
    """Entity surfaces of ``statement`` that match a header or cell, in order, each once."""
    values = [c.utterance for c in doc.components if c.ctype.is_table]
    out: list[str] = []
    for kind, surface in statement.entities:
        if surface not in out and _entity_matches(kind, surface, values):
            out.append(surface)
    return out


def tottify(
    doc: Document,
    statements: Sequence[Statement],
    vocab: Vocab,
    max_input_len: int | None = None,
    *,
    number_split: bool = False,
    max_rows: int = DEFAULT_MAX_ROWS,
    max_cols: int = DEFAULT_MAX_COLS,
) -> list[Example]:
    out = []
    for k, st in enumerate(statements):
        matched = entity_match(st, doc)
        if not matched:
            continue
        hint = Component(", ".join(matched), ComponentType.EntityHint)
        comps = linearize(with_components(doc, [hint]))
        inp = encode_stream(
            vocab, comps, max_input_len,
            number_split=number_split, max_rows=max_rows, max_cols=max_cols,
        )
        target = tuple(encode_text(vocab, st.text, number_split)) + (EOS_ID,)
        out.append(Example(f"{doc.id}:{k}", inp, target))
    return out
