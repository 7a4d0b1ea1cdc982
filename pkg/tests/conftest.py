import json

import pytest

from vfcommit.linker import IssueLinker
from vfcommit.synthetic import make_synthetic_dataset

ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.fixture(scope="session")
def synthetic():
    return make_synthetic_dataset(250, negative_ratio=5, seed=3)


@pytest.fixture(scope="session")
def synthetic_linker(synthetic):
    _, corpus = synthetic
    return IssueLinker().fit([i for _, i in corpus], keys=[k for k, _ in corpus])


@pytest.fixture
def corpus_dir(tmp_path, synthetic):
    d = tmp_path / "corpus"
    d.mkdir()
    for key, issue in synthetic[1]:
        (d / f"{key}.json").write_text(json.dumps(issue.to_dict()))
    return d


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{status:4s}  {name}")
