import os
import sys

import pytest

# Same import layout as main_eductive.py
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(__file__)), "backend"))

from services.compiler_service import compile_source  # noqa: E402
from services.program_corpus import CORPUS  # noqa: E402
from utils.clock import SimClock  # noqa: E402


@pytest.fixture
def sim_clock():
    return SimClock()


@pytest.fixture(scope="session")
def corpus_geers():
    return {name: compile_source(source) for name, source in CORPUS.items()}
