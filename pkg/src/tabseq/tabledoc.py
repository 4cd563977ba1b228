"""Table-and-text documents as typed component streams with 2-D coordinates.

Coordinate scheme: non-table components sit at (row=0, col=0), headers at
row 0 with cols 1..C, data cells at rows 1..R with cols 1..C.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .errors import InvalidDocument, RaggedGrid

DEFAULT_MAX_ROWS = 64
DEFAULT_MAX_COLS = 32


class ComponentType(enum.IntEnum):
    Question = 1
    DocumentTitle = 2
    TableCaption = 3
    TableHeader = 4
    TableCell = 5
    EntityHint = 6
    Passage = 7

    @property
    def is_table(self) -> bool:
        return self in (ComponentType.TableHeader, ComponentType.TableCell)


@dataclass(frozen=True)
class Component:
    utterance: str
    ctype: ComponentType
    col: int = 0
    row: int = 0


@dataclass(frozen=True)
class Document:
    components: tuple[Component, ...]
    table_shape: tuple[int, int] = (0, 0)
    id: str = ""

    @property
    def num_cells(self) -> int:
        return sum(1 for c in self.components if c.ctype is ComponentType.TableCell)

    def metadata(self) -> list[Component]:
        return [c for c in self.components if not c.ctype.is_table]

    def headers(self) -> list[Component]:
        return sorted(
            (c for c in self.components if c.ctype is ComponentType.TableHeader),
            key=lambda c: c.col,
        )

    def cells(self) -> list[Component]:
        return sorted(
            (c for c in self.components if c.ctype is ComponentType.TableCell),
            key=lambda c: (c.row, c.col),
        )

    def cell(self, row: int, col: int) -> Component | None:
        for c in self.components:
            if c.ctype is ComponentType.TableCell and c.row == row and c.col == col:
                return c
        return None


def build_document(
    cells: Sequence[Sequence[str]],
    headers: Sequence[str],
    metadata: Iterable[tuple[ComponentType, str]] = (),
    doc_id: str = "",
) -> Document:
    """Assemble a document: metadata first, then headers, then cells row by row."""
    ncols = len(headers)
    for r, row in enumerate(cells):
        if len(row) != ncols:
            raise RaggedGrid(f"row {r} has {len(row)} cells, expected {ncols}")
    comps: list[Component] = []
    for ctype, text in metadata:
        ctype = ComponentType(ctype)
        if ctype.is_table:
            raise InvalidDocument(f"metadata cannot have table type {ctype.name}")
        comps.append(Component(text, ctype, 0, 0))
    for j, h in enumerate(headers, start=1):
        comps.append(Component(h, ComponentType.TableHeader, j, 0))
    for i, row in enumerate(cells, start=1):
        for j, text in enumerate(row, start=1):
            comps.append(Component(text, ComponentType.TableCell, j, i))
    return Document(tuple(comps), (len(cells), ncols), doc_id)


def validate(doc: Document) -> None:
    nrows, ncols = doc.table_shape
    seen_cells: set[tuple[int, int]] = set()
    seen_headers: set[int] = set()
    for c in doc.components:
        if c.row < 0 or c.col < 0:
            raise InvalidDocument(f"negative coordinate on {c!r}")
        if c.ctype is ComponentType.TableHeader:
            if c.row != 0 or not 1 <= c.col <= ncols:
                raise InvalidDocument(f"header out of place: {c!r}")
            if c.col in seen_headers:
                raise InvalidDocument(f"duplicate header for column {c.col}")
            seen_headers.add(c.col)
        elif c.ctype is ComponentType.TableCell:
            if not (1 <= c.row <= nrows and 1 <= c.col <= ncols):
                raise InvalidDocument(f"cell out of bounds: {c!r}")
            if (c.row, c.col) in seen_cells:
                raise InvalidDocument(f"duplicate cell at ({c.row}, {c.col})")
            seen_cells.add((c.row, c.col))
        elif c.row != 0 or c.col != 0:
            raise InvalidDocument(f"non-table component must sit at (0, 0): {c!r}")


def _order_key(indexed: tuple[int, Component]) -> tuple:
    i, c = indexed
    if c.ctype is ComponentType.TableHeader:
        return (1, 0, c.col, i)
    if c.ctype is ComponentType.TableCell:
        return (2, c.row, c.col, i)
    return (0, 0, 0, i)


def linearize(doc: Document) -> list[Component]:
    """Return components as metadata, headers, then data rows top-to-bottom."""
    validate(doc)
    return [c for _, c in sorted(enumerate(doc.components), key=_order_key)]


def clip_component(c: Component, max_rows: int, max_cols: int) -> Component:
    if c.row <= max_rows and c.col <= max_cols:
        return c
    return replace(c, row=min(c.row, max_rows), col=min(c.col, max_cols))


def clip_coordinates(
    doc: Document, max_rows: int = DEFAULT_MAX_ROWS, max_cols: int = DEFAULT_MAX_COLS
) -> Document:
    if max_rows < 1 or max_cols < 1:
        raise ValueError("clipping bounds must be positive")
    comps = tuple(clip_component(c, max_rows, max_cols) for c in doc.components)
    return replace(doc, components=comps)


def with_components(doc: Document, before_table: Sequence[Component]) -> Document:
    """Insert extra non-table components after the metadata and before the table."""
    meta = doc.metadata()
    table = [c for c in doc.components if c.ctype.is_table]
    return replace(doc, components=tuple(meta) + tuple(before_table) + tuple(table))


# -- JSONL interchange -------------------------------------------------------

def document_to_dict(doc: Document) -> dict:
    nrows, ncols = doc.table_shape
    rows = [["" for _ in range(ncols)] for _ in range(nrows)]
    for c in doc.cells():
        rows[c.row - 1][c.col - 1] = c.utterance
    headers = [""] * ncols
    for h in doc.headers():
        headers[h.col - 1] = h.utterance
    return {
        "id": doc.id,
        "headers": headers,
        "rows": rows,
        "metadata": [{"type": c.ctype.name, "text": c.utterance} for c in doc.metadata()],
    }


def document_from_dict(obj: dict) -> Document:
    try:
        metadata = [(ComponentType[m["type"]], m["text"]) for m in obj.get("metadata", [])]
        return build_document(obj["rows"], obj["headers"], metadata, str(obj["id"]))
    except KeyError as exc:
        raise InvalidDocument(f"missing or unknown field {exc}") from None


def dumps_document(doc: Document) -> str:
    return json.dumps(document_to_dict(doc), ensure_ascii=False)


def loads_document(line: str) -> Document:
    return document_from_dict(json.loads(line))


def read_documents(path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                docs.append(loads_document(line))
    return docs


def write_documents(path, docs: Iterable[Document]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(dumps_document(doc) + "\n")
