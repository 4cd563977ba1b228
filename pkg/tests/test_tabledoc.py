import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabseq.errors import InvalidDocument, RaggedGrid
from tabseq.tabledoc import (
    Component,
    ComponentType as T,
    Document,
    build_document,
    clip_component,
    clip_coordinates,
    document_from_dict,
    dumps_document,
    linearize,
    loads_document,
    read_documents,
    validate,
    with_components,
    write_documents,
)


def coords(doc):
    return [(c.utterance, c.row, c.col) for c in doc.components]


def test_component_type_codes_are_stable():
    assert [t.name for t in T] == ["Question", "DocumentTitle", "TableCaption", "TableHeader",
                                  "TableCell", "EntityHint", "Passage"]
    assert [int(t) for t in T] == list(range(1, 8))


def test_two_by_two_with_question():
    doc = build_document([["a", "b"], ["c", "d"]], ["H1", "H2"], [(T.Question, "q")])
    assert len(doc.components) == 7
    assert doc.cell(2, 2).utterance == "d"
    assert [c.utterance for c in linearize(doc)] == ["q", "H1", "H2", "a", "b", "c", "d"]
    assert doc.table_shape == (2, 2)


def test_empty_table_keeps_metadata_at_origin():
    doc = build_document([], [], [(T.Question, "q")])
    assert coords(doc) == [("q", 0, 0)]
    assert [c.utterance for c in linearize(doc)] == ["q"]


def test_single_column_coordinates():
    doc = build_document([["x"], ["y"]], ["H"])
    assert coords(doc) == [("H", 0, 1), ("x", 1, 1), ("y", 2, 1)]


def test_three_by_one_rows_in_order():
    doc = build_document([["r1"], ["r2"], ["r3"]], ["h"])
    cells = [c for c in linearize(doc) if c.ctype is T.TableCell]
    assert [c.row for c in cells] == [1, 2, 3]


def test_ragged_grid():
    with pytest.raises(RaggedGrid):
        build_document([["a", "b"], ["c"]], ["H1", "H2"])


def test_table_typed_metadata_rejected():
    with pytest.raises(InvalidDocument):
        build_document([], [], [(T.TableCell, "x")])


def test_linearize_reorders_shuffled_components():
    doc = build_document([["a", "b"], ["c", "d"]], ["H1", "H2"], [(T.DocumentTitle, "t")])
    comps = list(doc.components)
    random.Random(0).shuffle(comps)
    shuffled = Document(tuple(comps), doc.table_shape, doc.id)
    assert linearize(shuffled) == linearize(doc)


@pytest.mark.parametrize("bad", [
    Component("q", T.Question, 1, 0),
    Component("h", T.TableHeader, 1, 1),
    Component("c", T.TableCell, 0, 1),
])
def test_invariant_violations_rejected(bad):
    doc = Document((bad,), (1, 1))
    with pytest.raises(InvalidDocument):
        linearize(doc)


def test_duplicate_cell_rejected():
    cell = Component("a", T.TableCell, 1, 1)
    with pytest.raises(InvalidDocument):
        validate(Document((cell, cell), (1, 1)))


@pytest.mark.parametrize("row,bound,expect", [(70, 64, 64), (3, 64, 3)])
def test_clip_rows(row, bound, expect):
    c = clip_component(Component("x", T.TableCell, 1, row), bound, 32)
    assert c.row == expect


def test_clip_cols():
    assert clip_component(Component("x", T.TableCell, 40, 1), 64, 32).col == 32


grids = st.integers(1, 6).flatmap(lambda c: st.tuples(
    st.lists(st.text(min_size=0, max_size=5), min_size=c, max_size=c),
    st.lists(st.lists(st.text(max_size=5), min_size=c, max_size=c), max_size=8),
))


@settings(max_examples=60, deadline=None)
@given(grids, st.integers(1, 4), st.integers(1, 4))
def test_linearize_bijection_and_clip_idempotent(grid, max_rows, max_cols):
    headers, rows = grid
    doc = build_document(rows, headers, [(T.Question, "q")])
    out = linearize(doc)
    assert Counter(c.utterance for c in out) == Counter(c.utterance for c in doc.components)
    # grid position (i, j) lands at row i + 1, col j + 1
    for c in out:
        if c.ctype is T.TableCell:
            assert rows[c.row - 1][c.col - 1] == c.utterance
        elif c.ctype is T.TableHeader:
            assert c.row == 0 and headers[c.col - 1] == c.utterance
    once = clip_coordinates(doc, max_rows, max_cols)
    assert clip_coordinates(once, max_rows, max_cols) == once
    assert all(c.row <= max_rows and c.col <= max_cols for c in once.components)


def test_same_row_same_row_id():
    doc = build_document([["a", "b", "c"]], ["x", "y", "z"])
    assert {c.row for c in doc.cells()} == {1}


def test_with_components_inserts_before_table():
    doc = build_document([["a"]], ["H"], [(T.DocumentTitle, "t")])
    hint = Component("e", T.EntityHint)
    out = with_components(doc, [hint])
    assert [c.utterance for c in linearize(out)] == ["t", "e", "H", "a"]


def test_jsonl_roundtrip_is_byte_exact(tmp_path, fixtures_dir):
    src = (fixtures_dir / "docs.jsonl").read_text(encoding="utf-8")
    for line in src.splitlines():
        assert dumps_document(loads_document(line)) == line
    doc = build_document([["é", "1,024"]], ["名前", "n"], [(T.TableCaption, "cap")], "u")
    path = tmp_path / "d.jsonl"
    write_documents(path, [doc])
    text = path.read_text(encoding="utf-8")
    assert read_documents(path) == [doc]
    write_documents(path, read_documents(path))
    assert path.read_text(encoding="utf-8") == text


def test_missing_field():
    with pytest.raises(InvalidDocument):
        document_from_dict({"id": "x", "rows": []})
