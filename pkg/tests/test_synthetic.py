from importlib import resources

from hypothesis import given, strategies as st

from metascope.ingest import format_corpus
from metascope.registry import classify_payload
from metascope.stealth import format_keys
from metascope.synthetic import (
    PROTOCOL_CATEGORIES,
    OBSERVED_SHARES,
    apportion,
    generate_corpus,
    sample_2013_records,
    stealth_fixture,
    synthetic_registry,
)

DATA = resources.files("metascope.data")


def test_shipped_files_match_generators():
    assert DATA.joinpath("sample_2013.csv").read_text("utf-8") == format_corpus(sample_2013_records())
    fx = stealth_fixture()
    assert DATA.joinpath("stealth_fixture.csv").read_text("utf-8") == format_corpus(fx.records)
    assert DATA.joinpath("stealth_fixture.keys").read_text("utf-8") == format_keys(fx.identity)
    assert len(fx.ours) == 3 and len(fx.records) == 10


def test_known_protocol_lists():
    assert len(PROTOCOL_CATEGORIES) == 22
    assert set(OBSERVED_SHARES) == set(PROTOCOL_CATEGORIES) | {"Unattributed"}


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(0.001, 100), min_size=1, max_size=10),
       st.integers(0, 5000))
def test_apportion_exact_and_close(weights, total):
    counts = apportion(weights, total)
    assert sum(counts.values()) == total
    norm = sum(weights.values())
    for k, w in weights.items():
        assert abs(counts[k] - w * total / norm) < 1


def test_synthetic_registry_has_nested_prefixes():
    reg = synthetic_registry()
    assert len(reg) == 22
    prefixes = [e.prefix for e in reg]
    assert any(a != b and b.startswith(a) for a in prefixes for b in prefixes)


def test_generated_labels_are_ground_truth():
    reg = synthetic_registry()
    corpus = generate_corpus(2000, seed=5, dark_wallet=40)
    assert len(corpus) == 2040
    assert all(classify_payload(lp.payload, reg).label == lp.label for lp in corpus)
    assert generate_corpus(50, seed=1) == generate_corpus(50, seed=1)
