import sys

import numpy as np
import pytest
import torch

from fairgen import data, synth
from fairgen.models import ArchConfig


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A tiny generated corpus: ``(cfg, out_dir, {split: manifest path})``."""
    cfg = synth.SynthConfig(scale=0.02, seed=3)
    out = tmp_path_factory.mktemp("corpus")
    return cfg, out, synth.generate_corpus(cfg, out)


@pytest.fixture(scope="session")
def small_prepared(small_corpus):
    _, _, paths = small_corpus
    return data.prepare_corpus([data.load_manifest(paths[s]) for s in data.SPLITS])


@pytest.fixture
def arch32():
    return ArchConfig(hidden=32)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
