"""Minimal spreadsheet formula grammar: literals, cell refs, ranges, calls, arithmetic.

Used only to validate formulas and collect the cells they reference.
"""
from __future__ import annotations

import re
from dataclasses import dataclass


class FormulaError(ValueError):
    pass


@dataclass(frozen=True)
class CellRef:
    sheet: str | None
    row: int  # 1-based spreadsheet row
    col: int  # 0-based column index


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>"(?:[^"]|"")*")
  | (?P<ref>(?:(?:'(?:[^']|'')+'|[A-Za-z_][A-Za-z0-9_.]*)!)?\$?[A-Za-z]{1,3}\$?[0-9]+)(?![A-Za-z0-9_(])
  | (?P<sheetbad>(?:'(?:[^']|'')+'|[A-Za-z_][A-Za-z0-9_.]*)!)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<op><>|<=|>=|[-+*/^&=<>%])
  | (?P<punct>[(),:])
    """,
    re.VERBOSE,
)
_REF_RE = re.compile(r"(?:(?P<sheet>'(?:[^']|'')+'|[A-Za-z_][A-Za-z0-9_.]*)!)?\$?(?P<col>[A-Za-z]{1,3})\$?(?P<row>[0-9]+)")


def column_index(letters: str) -> int:
    n = 0
    for ch in letters.upper():
        n = n * 26 + (ord(ch) - 64)
    return n - 1


def column_letters(index: int) -> str:
    s = ""
    index += 1
    while index:
        index, rem = divmod(index - 1, 26)
        s = chr(65 + rem) + s
    return s


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise FormulaError(f"unexpected character {text[pos]!r} at {pos}")
        kind = m.lastgroup
        if kind == "sheetbad":
            raise FormulaError(f"sheet qualifier without a cell reference at {pos}")
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0
        self.refs: list[tuple[CellRef, CellRef]] = []

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, -1)

    def take(self, value=None, kind=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value) or (kind is not None and tok[0] != kind):
            raise FormulaError(f"expected {value or kind} but found {tok[1]!r}")
        self.i += 1
        return tok

    def expr(self):
        self.unary()
        while self.peek()[0] == "op" and self.peek()[1] != "%":
            self.i += 1
            self.unary()

    def unary(self):
        while self.peek()[1] in ("-", "+"):
            self.i += 1
        self.postfix()

    def postfix(self):
        self.primary()
        while self.peek()[1] == "%":
            self.i += 1

    def primary(self):
        kind, value, _ = self.peek()
        if kind in ("number", "string"):
            self.i += 1
        elif kind == "ref":
            self.i += 1
            start = _parse_ref(value)
            end = start
            if self.peek()[1] == ":":
                self.i += 1
                end = _parse_ref(self.take(kind="ref")[1])
            self.refs.append((start, end))
        elif kind == "name":
            self.i += 1
            if self.peek()[1] == "(":
                self.i += 1
                if self.peek()[1] != ")":
                    self.expr()
                    while self.peek()[1] == ",":
                        self.i += 1
                        self.expr()
                self.take(")")
            elif value.upper() not in ("TRUE", "FALSE"):
                raise FormulaError(f"unknown name {value!r}")
        elif value == "(":
            self.i += 1
            self.expr()
            self.take(")")
        else:
            raise FormulaError(f"unexpected token {value!r}")


def _parse_ref(text: str) -> CellRef:
    m = _REF_RE.fullmatch(text)
    if not m:
        raise FormulaError(f"bad reference {text!r}")
    sheet = m.group("sheet")
    row = int(m.group("row"))
    if row < 1:
        raise FormulaError(f"row 0 in reference {text!r}")
    return CellRef(sheet, row, column_index(m.group("col")))


def parse_formula(text: str) -> list[tuple[CellRef, CellRef]]:
    """Validate ``text`` (leading ``=`` required) and return its referenced ranges."""
    if not text.startswith("="):
        raise FormulaError("formula must start with '='")
    p = _Parser(_tokenize(text[1:]))
    if not p.toks:
        raise FormulaError("empty formula")
    p.expr()
    if p.i != len(p.toks):
        raise FormulaError(f"trailing input {p.peek()[1]!r}")
    return p.refs
