import pytest
from pathlib import Path

from opgkit.ontology import load_default_ontology
from opgkit.parser import load_default_lexicon
from opgkit.planner import RunConfig, run_case
from opgkit.toolbox import ToolRegistry

REPO = Path(__file__).resolve().parents[1]
CORPUS = REPO / "corpus"
GOLDENS = Path(__file__).resolve().parent / "goldens"


@pytest.fixture(scope="session")
def schema():
    return load_default_ontology()


@pytest.fixture(scope="session")
def lexicon():
    return load_default_lexicon()


@pytest.fixture(scope="session")
def corpus_dir():
    assert CORPUS.exists(), "bundled corpus missing; run scripts/make_corpus.py"
    return CORPUS


@pytest.fixture(scope="session")
def registry(corpus_dir):
    return ToolRegistry.from_manifest(corpus_dir / "manifest.json")


@pytest.fixture(scope="session")
def case_dirs(corpus_dir):
    return sorted(d for d in (corpus_dir / "cases").iterdir() if d.is_dir())


@pytest.fixture(scope="session")
def corpus_run(tmp_path_factory, corpus_dir, registry, schema, case_dirs):
    """One default-config run over the whole bundled corpus, shared by the
    planner/CLI/acceptance tests."""
    out = tmp_path_factory.mktemp("corpus-run")
    config = RunConfig(manifest_path=str(corpus_dir / "manifest.json"))
    for case_dir in case_dirs:
        run_case(case_dir, config, registry, schema, out_dir=out)
    return out


@pytest.fixture(scope="session")
def goldens_dir():
    return GOLDENS
