import numpy as np
import pytest

from subspace_sr.data import synth_corpus, write_corpus
from subspace_sr.pca import fit_pca

ACCEPTANCE_RESULTS = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion."""
    def record(criterion, passed, detail=""):
        ACCEPTANCE_RESULTS.append((criterion, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {criterion}: {detail}")


@pytest.fixture(scope="session")
def small_corpus():
    """48 train + 8 val synthetic 32x32 RGB images."""
    return synth_corpus(56, (3, 32, 32), seed=3, val_count=8)


@pytest.fixture(scope="session")
def small_corpus_dir(small_corpus, tmp_path_factory):
    manifest, _ = small_corpus
    out = tmp_path_factory.mktemp("corpus")
    return write_corpus(manifest, out)


@pytest.fixture(scope="session")
def small_basis(small_corpus):
    manifest, images = small_corpus
    train = images[[s == "train" for s in manifest.splits]]
    return fit_pca(train)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
