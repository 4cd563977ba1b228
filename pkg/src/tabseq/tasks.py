"""Dataset adapters: table QA, formula prediction and highlighted-cell data-to-text."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import CellOutOfBounds, InputFormatError, ValidationError
from .formula import FormulaError, parse_formula
from .pretrain_data import Example
from .tabledoc import (
    DEFAULT_MAX_COLS,
    DEFAULT_MAX_ROWS,
    Component,
    ComponentType,
    Document,
    build_document,
    linearize,
)
from .textnorm import format_value
from .tokenizer import EOS_ID, NUM_SENTINELS, Vocab, encode_stream, encode_text, sentinel_id

ANSWER_DELIMITER = ", "
# stands in for the cell whose formula is to be predicted
TARGET_CELL_MARKER = sentinel_id(NUM_SENTINELS - 1)
DEFAULT_WINDOW = (2, 2, 2, 2)


def format_answer(values: Iterable) -> str:
    return ANSWER_DELIMITER.join(format_value(v) for v in values)


def _target(vocab: Vocab, text: str, number_split: bool) -> tuple[int, ...]:
    return tuple(encode_text(vocab, text, number_split)) + (EOS_ID,)


def make_qa_example(doc: Document, question: str, answer: Sequence, vocab: Vocab,
                    max_input_len: int | None = None, example_id: str | None = None,
                    *, max_rows: int = DEFAULT_MAX_ROWS,
                    max_cols: int = DEFAULT_MAX_COLS) -> Example:
    """Question component, then the document; target is the joined answer values."""
    comps = [Component(question, ComponentType.Question)] + linearize(doc)
    inp = encode_stream(vocab, comps, max_input_len, number_split=True,
                        max_rows=max_rows, max_cols=max_cols)
    return Example(example_id or doc.id, inp, _target(vocab, format_answer(answer), True))


# -- formula prediction ---------------------------------------------------------

@dataclass(frozen=True)
class FormulaCell:
    literal: str
    formula: str | None = None


@dataclass(frozen=True)
class FormulaSheet:
    """A sheet whose first grid row holds the headers.

    ``target_cell`` indexes ``grid`` as (row, col), both 0-based; row 0 is
    the header row, so targets sit at row >= 1.
    """

    grid: tuple[tuple[FormulaCell, ...], ...]
    target_cell: tuple[int, int]
    id: str = ""

    def validate(self) -> None:
        r, c = self.target_cell
        if not (1 <= r < len(self.grid) and 0 <= c < len(self.grid[r])):
            raise CellOutOfBounds(f"target {self.target_cell} outside the sheet")
        if not self.grid[r][c].formula:
            raise ValidationError(f"target {self.target_cell} has no formula")

    @property
    def target_formula(self) -> str:
        r, c = self.target_cell
        return self.grid[r][c].formula or ""

    @classmethod
    def from_dict(cls, obj: dict) -> "FormulaSheet":
        grid = tuple(
            tuple(FormulaCell(str(cell.get("literal", "")), cell.get("formula")) for cell in row)
            for row in obj["grid"]
        )
        r, c = obj["target"]
        return cls(grid, (int(r), int(c)), str(obj.get("id", "")))


def _strip_formula_text(literal: str) -> str:
    return literal.replace("=", "")


def window_bounds(sheet: FormulaSheet, window=DEFAULT_WINDOW) -> tuple[range, range]:
    up, down, left, right = window
    r, c = sheet.target_cell
    nrows = len(sheet.grid)
    ncols = max(len(row) for row in sheet.grid)
    return (range(max(1, r - up), min(nrows - 1, r + down) + 1),
            range(max(0, c - left), min(ncols - 1, c + right) + 1))


def make_formula_example(sheet: FormulaSheet, vocab: Vocab, window=DEFAULT_WINDOW,
                         max_input_len: int | None = None, *,
                         max_rows: int = DEFAULT_MAX_ROWS,
                         max_cols: int = DEFAULT_MAX_COLS) -> Example:
    """Header row plus the neighbourhood of the target, literals only.

    Every context cell contributes its literal value; formulas never reach
    the input. The target cell is a single marker token.
    """
    sheet.validate()
    rows, cols = window_bounds(sheet, window)
    comps: list[Component] = []
    pieces: list[list[int] | None] = []
    for j, cell in enumerate(sheet.grid[0]):
        comps.append(Component(_strip_formula_text(cell.literal), ComponentType.TableHeader, j + 1, 0))
        pieces.append(None)
    for i in rows:
        for j in cols:
            if j >= len(sheet.grid[i]):
                continue
            if (i, j) == sheet.target_cell:
                comps.append(Component("", ComponentType.TableCell, j + 1, i))
                pieces.append([TARGET_CELL_MARKER])
            else:
                text = _strip_formula_text(sheet.grid[i][j].literal)
                comps.append(Component(text, ComponentType.TableCell, j + 1, i))
                pieces.append(None)
    inp = encode_stream(vocab, comps, max_input_len, number_split=True,
                        max_rows=max_rows, max_cols=max_cols, pieces=pieces)
    return Example(sheet.id, inp, _target(vocab, sheet.target_formula, True))


def formula_is_usable(sheet: FormulaSheet) -> bool:
    try:
        sheet.validate()
        ranges = parse_formula(sheet.target_formula)
    except (FormulaError, ValidationError):
        return False
    nrows = len(sheet.grid)
    ncols = max(len(row) for row in sheet.grid)
    for start, end in ranges:
        for ref in (start, end):
            if ref.sheet is not None or ref.row > nrows or ref.col >= ncols:
                return False
    return True


def filter_formula_corpus(sheets: Iterable[FormulaSheet]) -> list[FormulaSheet]:
    """Drop sheets with unparseable targets or references outside their own grid."""
    return [s for s in sheets if formula_is_usable(s)]


# -- data-to-text -----------------------------------------------------------------

def make_totto_example(doc: Document, highlighted: Iterable[tuple[int, int]], target_text: str,
                       vocab: Vocab, max_input_len: int | None = None,
                       example_id: str | None = None, *, max_rows: int = DEFAULT_MAX_ROWS,
                       max_cols: int = DEFAULT_MAX_COLS) -> Example:
    nrows, ncols = doc.table_shape
    cells = set()
    for r, c in highlighted:
        if not (1 <= r <= nrows and 1 <= c <= ncols):
            raise CellOutOfBounds(f"highlighted cell ({r}, {c}) outside a {nrows}x{ncols} table")
        cells.add((r, c))
    cols = {c for _, c in cells}
    keep = [
        comp for comp in linearize(doc)
        if not comp.ctype.is_table
        or (comp.ctype is ComponentType.TableHeader and comp.col in cols)
        or (comp.ctype is ComponentType.TableCell and (comp.row, comp.col) in cells)
    ]
    inp = encode_stream(vocab, keep, max_input_len, max_rows=max_rows, max_cols=max_cols)
    return Example(example_id or doc.id, inp, _target(vocab, target_text, False))


@dataclass(frozen=True)
class TottoRecord:
    id: str
    doc: Document
    highlighted: tuple[tuple[int, int], ...]
    target: str

    @classmethod
    def from_dict(cls, obj: dict) -> "TottoRecord":
        table = obj["table"]
        metadata = [(ComponentType[m["type"]], m["text"]) for m in obj.get("metadata", [])]
        doc = build_document(table["rows"], table["headers"], metadata, str(obj["id"]))
        hl = tuple((int(r), int(c)) for r, c in obj.get("highlighted", []))
        return cls(str(obj["id"]), doc, hl, str(obj["target"]))


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InputFormatError(f"{path}:{n}: malformed JSON ({exc.msg})") from None
    return out
