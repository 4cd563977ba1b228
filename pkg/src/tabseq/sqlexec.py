"""Parser and executor for single-table aggregate queries of the form

    SELECT [AGG] col FROM t [WHERE col OP val (AND col OP val)*]

with OP in ``=``, ``>``, ``<`` and AGG in MAX, MIN, COUNT, SUM, AVG.
"""
from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import EmptyResult, NonNumericAggregate, SqlSyntaxError, UnknownColumn
from .tabledoc import Document
from .textnorm import format_number, normalize_text, parse_number

Value = Union[str, float]


class Agg(enum.Enum):
    None_ = "NONE"
    Max = "MAX"
    Min = "MIN"
    Count = "COUNT"
    Sum = "SUM"
    Avg = "AVG"


class Op(enum.Enum):
    Eq = "="
    Gt = ">"
    Lt = "<"


@dataclass(frozen=True)
class Condition:
    col: int
    op: Op
    value: Value


@dataclass(frozen=True)
class SqlQuery:
    agg: Agg
    select_col: int
    conditions: tuple[Condition, ...] = ()


@dataclass(frozen=True)
class Answer:
    values: tuple[Value, ...]


_KEYWORDS = {"SELECT", "FROM", "WHERE", "AND"}
_AGGS = {a.value: a for a in Agg if a is not Agg.None_}
_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<qident>"(?:[^"]|"")*"|`[^`]*`)
  | (?P<number>-?(?:\d+\.?\d*|\.\d+)(?![^\s()=<>,]))
  | (?P<op>[=<>])
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<word>[^\s'"`()=<>]+)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int

    @property
    def keyword(self) -> str | None:
        if self.kind == "word" and self.text.upper() in _KEYWORDS | set(_AGGS):
            return self.text.upper()
        return None


def _tokenize(text: str) -> list[_Tok]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SqlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            out.append(_Tok(m.lastgroup, m.group(), pos))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str, headers: Sequence[str]):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.headers = [normalize_text(h) for h in headers]

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def pos(self) -> int:
        t = self.peek()
        return t.pos if t else len(self.text)

    def expect_keyword(self, kw: str) -> None:
        t = self.peek()
        if t is None or t.keyword != kw:
            raise SqlSyntaxError(f"expected {kw}", self.pos())
        self.i += 1

    def column(self) -> int:
        t = self.peek()
        if t is None:
            raise SqlSyntaxError("expected a column name", self.pos())
        start = t.pos
        if t.kind == "qident":
            self.i += 1
            name = t.text[1:-1].replace('""', '"') if t.text[0] == '"' else t.text[1:-1]
        else:
            words = []
            while (t := self.peek()) is not None and t.kind in ("word", "number") and t.keyword is None:
                words.append(t.text)
                self.i += 1
            if not words:
                raise SqlSyntaxError("expected a column name", start)
            name = " ".join(words)
        key = normalize_text(name)
        if key not in self.headers:
            raise UnknownColumn(f"unknown column {name!r}")
        return self.headers.index(key)

    def value(self) -> Value:
        t = self.peek()
        if t is None:
            raise SqlSyntaxError("expected a value", self.pos())
        if t.kind == "string":
            self.i += 1
            return t.text[1:-1].replace("''", "'")
        if t.kind == "number":
            self.i += 1
            return float(t.text)
        raise SqlSyntaxError(f"expected a quoted string or number, found {t.text!r}", t.pos)

    def parse(self) -> SqlQuery:
        self.expect_keyword("SELECT")
        agg = Agg.None_
        t = self.peek()
        if t is not None and t.keyword in _AGGS:
            agg = _AGGS[t.keyword]
            self.i += 1
            if self.peek() is not None and self.peek().kind == "lparen":
                self.i += 1
                col = self.column()
                if self.peek() is None or self.peek().kind != "rparen":
                    raise SqlSyntaxError("expected ')'", self.pos())
                self.i += 1
            else:
                col = self.column()
        else:
            col = self.column()
        self.expect_keyword("FROM")
        t = self.peek()
        if t is None or t.kind not in ("word", "qident") or t.keyword:
            raise SqlSyntaxError("expected a table name", self.pos())
        self.i += 1
        conds = []
        if self.peek() is not None:
            self.expect_keyword("WHERE")
            while True:
                c = self.column()
                t = self.peek()
                if t is None or t.kind != "op":
                    raise SqlSyntaxError("expected one of = > <", self.pos())
                self.i += 1
                conds.append(Condition(c, Op(t.text), self.value()))
                if self.peek() is None:
                    break
                self.expect_keyword("AND")
        return SqlQuery(agg, col, tuple(conds))


def parse_sql(text: str, headers: Sequence[str]) -> SqlQuery:
    """Parse ``text``; column names resolve case-insensitively against ``headers``."""
    return _Parser(text, headers).parse()


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def to_sql(query: SqlQuery, headers: Sequence[str], table: str = "t") -> str:
    col = _quote_ident(headers[query.select_col])
    head = col if query.agg is Agg.None_ else f"{query.agg.value}({col})"
    sql = f"SELECT {head} FROM {table}"
    parts = []
    for c in query.conditions:
        if isinstance(c.value, str):
            v = "'" + c.value.replace("'", "''") + "'"
        else:
            v = format_number(c.value) if float(c.value).is_integer() else repr(float(c.value))
        parts.append(f"{_quote_ident(headers[c.col])} {c.op.value} {v}")
    if parts:
        sql += " WHERE " + " AND ".join(parts)
    return sql


# -- execution ------------------------------------------------------------------------

def table_rows(doc: Document) -> tuple[list[str], list[list[str]]]:
    nrows, ncols = doc.table_shape
    headers = [""] * ncols
    for h in doc.headers():
        headers[h.col - 1] = h.utterance
    rows = [[""] * ncols for _ in range(nrows)]
    for c in doc.cells():
        rows[c.row - 1][c.col - 1] = c.utterance
    return headers, rows


def condition_holds(cell: str, op: Op, value: Value) -> bool:
    a = parse_number(cell)
    b = parse_number(value)
    if a is not None and b is not None:
        if op is Op.Eq:
            return a == b
        return a > b if op is Op.Gt else a < b
    if op is not Op.Eq:
        return False
    text = value if isinstance(value, str) else format_number(value)
    return normalize_text(cell) == normalize_text(text)


def execute(query: SqlQuery, table: Document) -> Answer:
    headers, rows = table_rows(table)
    width = len(headers)
    if not 0 <= query.select_col < width or any(not 0 <= c.col < width for c in query.conditions):
        raise UnknownColumn("query column outside the table")
    picked = [
        row[query.select_col] for row in rows
        if all(condition_holds(row[c.col], c.op, c.value) for c in query.conditions)
    ]
    if query.agg is Agg.Count:
        return Answer((float(len(picked)),))
    if not picked:
        raise EmptyResult("no rows satisfy the conditions")
    if query.agg is Agg.None_:
        return Answer(tuple(picked))
    nums = [parse_number(v) for v in picked]
    if query.agg in (Agg.Sum, Agg.Avg):
        if any(n is None for n in nums):
            raise NonNumericAggregate(f"{query.agg.value} over non-numeric values")
        total = sum(nums)
        return Answer((total if query.agg is Agg.Sum else total / len(nums),))
    pick = max if query.agg is Agg.Max else min
    if all(n is not None for n in nums):
        return Answer((pick(nums),))
    return Answer((pick(picked),))


# -- denotation scoring ------------------------------------------------------------------

def _split_prediction(text: str) -> list[str]:
    text = text.strip()
    return [] if not text else [p.strip() for p in text.split(", ")]


def _bag(values: Sequence[Value]) -> tuple[list[float], Counter]:
    nums, texts = [], Counter()
    for v in values:
        n = parse_number(v)
        if n is not None:
            nums.append(n)
        else:
            texts[normalize_text(str(v))] += 1
    return sorted(nums), texts


def denotation_matches(prediction: str, reference: Sequence[Value], tol: float = 1e-6) -> bool:
    pn, pt = _bag(_split_prediction(prediction))
    rn, rt = _bag(list(reference))
    return pt == rt and len(pn) == len(rn) and all(abs(a - b) <= tol for a, b in zip(pn, rn))


def reference_answer(query: SqlQuery, table: Document) -> tuple[Value, ...]:
    try:
        return execute(query, table).values
    except EmptyResult:
        return ()


def denotation_accuracy(predicted_texts: Sequence[str], queries: Sequence[SqlQuery | str],
                        tables: Sequence[Document]) -> float:
    """Fraction of predictions whose value multiset equals the executed answer."""
    if not (len(predicted_texts) == len(queries) == len(tables)):
        raise ValueError("predictions, queries and tables must be aligned")
    if not predicted_texts:
        return 0.0
    correct = 0
    for pred, q, doc in zip(predicted_texts, queries, tables):
        if isinstance(q, str):
            q = parse_sql(q, table_rows(doc)[0])
        correct += denotation_matches(pred, reference_answer(q, doc))
    return correct / len(predicted_texts)
