"""Seeded synthetic tables and table-lookup questions for smoke training runs."""
from __future__ import annotations

import random

from .tabledoc import ComponentType, Document, build_document

HEADER_POOL = (
    "name", "city", "team", "year", "score", "color", "country", "points",
    "rank", "club", "party", "venue",
)
WORD_POOL = (
    "paris", "berlin", "rome", "oslo", "lima", "cairo", "delhi", "tokyo",
    "red", "blue", "green", "amber", "lions", "tigers", "hawks", "bears",
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi",
)


def random_cell(rng: random.Random) -> str:
    if rng.random() < 0.35:
        return str(rng.randint(0, 999))
    return rng.choice(WORD_POOL)


def random_document(rng: random.Random, n_rows: int, n_cols: int, doc_id: str,
                    title: bool = True) -> Document:
    headers = rng.sample(HEADER_POOL, n_cols)
    grid = [[random_cell(rng) for _ in range(n_cols)] for _ in range(n_rows)]
    meta = [(ComponentType.DocumentTitle, f"table {doc_id}")] if title else []
    return build_document(grid, headers, meta, doc_id)


def random_documents(n: int, seed: int, min_cells: int = 20, max_cells: int = 60,
                     prefix: str = "doc") -> list[Document]:
    """``n`` tables whose cell counts lie in ``[min_cells, max_cells]``."""
    rng = random.Random(seed)
    docs = []
    for i in range(n):
        while True:
            r, c = rng.randint(1, max_cells), rng.randint(1, min(max_cells, len(HEADER_POOL)))
            if min_cells <= r * c <= max_cells:
                break
        docs.append(random_document(rng, r, c, f"{prefix}{i}"))
    return docs


def lookup_question(header: str, row: int) -> str:
    return f"what is the value in column {header}, row {row}?"


def lookup_tasks(n: int, seed: int, rows: tuple[int, int] = (2, 4),
                 cols: tuple[int, int] = (2, 4), prefix: str = "q"):
    """``n`` (document, question, answer) triples asking for one cell by header and row."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        doc = random_document(rng, rng.randint(*rows), rng.randint(*cols), f"{prefix}{i}",
                              title=False)
        nrows, ncols = doc.table_shape
        r, c = rng.randint(1, nrows), rng.randint(1, ncols)
        header = doc.headers()[c - 1].utterance
        out.append((doc, lookup_question(header, r), doc.cell(r, c).utterance))
    return out


def corpus_lines() -> list[str]:
    """Text covering every token the synthetic generators can emit."""
    lines = list(HEADER_POOL) + list(WORD_POOL)
    lines += [lookup_question(h, r) for h in HEADER_POOL for r in range(1, 10)]
    lines += ["table doc", "0123456789", "what is the sum of points?"]
    return lines


# -- entity world ---------------------------------------------------------------
# Tables drawn from a fixed set of entity facts, so cells are predictable from
# the rest of their row (the regularity denoising can learn).

ENTITY_NAMES = WORD_POOL[16:] + (
    "ivan", "judy", "kim", "leo", "mallory", "nina", "oscar", "peggy",
    "quinn", "rupert", "sybil", "trent", "uma", "victor", "wendy", "yusuf",
)
ATTRIBUTE_VALUES = {
    "city": WORD_POOL[:8],
    "color": WORD_POOL[8:12],
    "team": WORD_POOL[12:16],
    "year": tuple(str(y) for y in range(1990, 2000)),
    "points": tuple(str(p) for p in range(10, 30)),
}


def entity_world(seed: int = 0) -> dict[str, dict[str, str]]:
    rng = random.Random(f"world:{seed}")
    return {
        name: {attr: rng.choice(values) for attr, values in ATTRIBUTE_VALUES.items()}
        for name in ENTITY_NAMES
    }


def world_document(rng: random.Random, world: dict, doc_id: str,
                   rows: tuple[int, int] = (2, 5), attrs: tuple[int, int] = (2, 4)) -> Document:
    names = rng.sample(sorted(world), rng.randint(*rows))
    columns = rng.sample(sorted(ATTRIBUTE_VALUES), rng.randint(*attrs))
    grid = [[n] + [world[n][a] for a in columns] for n in names]
    return build_document(grid, ["name"] + columns, [], doc_id)


def world_documents(n: int, seed: int, world: dict | None = None, prefix: str = "w") -> list[Document]:
    world = world or entity_world()
    rng = random.Random(seed)
    return [world_document(rng, world, f"{prefix}{i}") for i in range(n)]


def world_question(attr: str, name: str) -> str:
    return f"what is the {attr} of {name}?"


def world_tasks(n: int, seed: int, world: dict | None = None, prefix: str = "wq"):
    """``n`` (document, question, answer) triples about one entity attribute."""
    world = world or entity_world()
    rng = random.Random(seed)
    out = []
    for i in range(n):
        doc = world_document(rng, world, f"{prefix}{i}")
        nrows, ncols = doc.table_shape
        r, c = rng.randint(1, nrows), rng.randint(2, ncols)
        name = doc.cell(r, 1).utterance
        attr = doc.headers()[c - 1].utterance
        out.append((doc, world_question(attr, name), doc.cell(r, c).utterance))
    return out


def world_corpus_lines() -> list[str]:
    lines = list(ENTITY_NAMES) + ["name"] + list(ATTRIBUTE_VALUES)
    lines += [v for vals in ATTRIBUTE_VALUES.values() for v in vals]
    lines += [world_question(a, n) for a in ATTRIBUTE_VALUES for n in ENTITY_NAMES[:4]]
    return lines
