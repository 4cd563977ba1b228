"""Value normalization shared by entity matching, SQL execution and scoring."""
from __future__ import annotations

import datetime as _dt
import math
import re

_WS_RE = re.compile(r"\s+")
_NUMBER_RE = re.compile(r"[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)?(?:\.\d+)?(?:[eE][+-]?\d+)?")
_DATE_FORMATS = ("%Y-%m-%d", "%d %B %Y", "%B %d, %Y", "%B %d %Y", "%d %b %Y", "%b %d, %Y", "%Y/%m/%d")


def normalize_text(text: str) -> str:
    return _WS_RE.sub(" ", text.strip().lower())


def parse_number(text) -> float | None:
    """Parse ``text`` as a number; thousands separators are accepted."""
    if isinstance(text, bool):
        return None
    if isinstance(text, (int, float)):
        return float(text) if math.isfinite(text) else None
    s = text.strip()
    if not s or not any(ch.isdigit() for ch in s) or not _NUMBER_RE.fullmatch(s):
        return None
    value = float(s.replace(",", ""))
    return value if math.isfinite(value) else None


def parse_date(text: str) -> _dt.date | None:
    s = _WS_RE.sub(" ", text.strip())
    for fmt in _DATE_FORMATS:
        try:
            return _dt.datetime.strptime(s, fmt).date()
        except ValueError:
            continue
    return None


def format_number(value: float) -> str:
    """Shortest text for a number; integral values drop the fraction."""
    if float(value).is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(float(value))


def format_value(value) -> str:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return format_number(value)
    return str(value)
