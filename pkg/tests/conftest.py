import sys
from pathlib import Path
from random import Random

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from teefuzz.corpus_io import load_seed_corpus
from teefuzz.probe import SimProbe
from teefuzz.templates import bundled_template_path, load_bundled_templates


@pytest.fixture(scope="session")
def templates():
    return load_bundled_templates()


@pytest.fixture(scope="session")
def seed_corpus(templates):
    return load_seed_corpus(Path(bundled_template_path()).parent / "seeds", templates)


@pytest.fixture()
def probe():
    return SimProbe(campaign_seed=42)


@pytest.fixture()
def rng():
    return Random(1234)
