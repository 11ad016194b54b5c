from importlib import resources

import pytest

from cfgdec import corpus
from cfgdec.grammar import load_grammar

# the worked example threaded through the whole suite
QUERY = "SELECT ?area { ?capital p:area ?area . ?texas p:has_capital ?capital }".split()


def data_text(name: str) -> str:
    return resources.files("cfgdec.data").joinpath(name).read_text()


@pytest.fixture(scope="session")
def sparql_grammar():
    return load_grammar(data_text("sparql_fragment.cfg"))


@pytest.fixture(scope="session")
def sparql_templates():
    return corpus.load_templates(data_text("sparql_fragment.tpl"))


@pytest.fixture(scope="session")
def geo_grammar():
    return load_grammar(data_text("geo_select.cfg"))


@pytest.fixture(scope="session")
def geo_templates():
    return corpus.load_templates(data_text("geo_select.tpl"))


@pytest.fixture(scope="session")
def chain_grammar():
    """Left-recursive triple chains; no template file exists for it."""
    return load_grammar(data_text("triple_chain.cfg"))


@pytest.fixture(scope="session")
def toy_corpus(sparql_grammar, sparql_templates):
    """All 64 pairs of the shipped fragment grammar."""
    return corpus.synthesize(sparql_grammar, sparql_templates, None)


@pytest.fixture(scope="session")
def toy_vocab(toy_corpus, sparql_grammar):
    return corpus.build_vocab(toy_corpus, sparql_grammar)
