import pytest

from fixture_corpus import build_corpus


@pytest.fixture
def corpus(tmp_path):
    root = tmp_path / "corpus"
    root.mkdir()
    entries = build_corpus(root)
    return root, entries
