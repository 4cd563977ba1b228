import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tabseq import synthetic as S  # noqa: E402
from tabseq.tokenizer import NUM_RESERVED, train_vocab  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
VOCAB_SIZE = NUM_RESERVED + 200


@pytest.fixture(scope="session")
def vocab():
    return train_vocab(S.corpus_lines() + S.world_corpus_lines() + ["3.14 is pi."], VOCAB_SIZE)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
