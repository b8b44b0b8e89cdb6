import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
sys.path.insert(0, str(HERE))


def fixture_text(*names) -> str:
    return "\n".join((FIXTURES / n).read_text(encoding="utf-8") for n in names)


def load(*names):
    from neurolangqa.parser import parse_program

    return parse_program(fixture_text(*names))


@pytest.fixture
def example5():
    return load("example5.nl")
