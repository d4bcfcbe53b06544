import logging
import random

import pytest
from hypothesis import given, strategies as st

from metascope.metadata import OpReturnPayload
from metascope.registry import (
    DARK_WALLET,
    UNATTRIBUTED,
    Category,
    Classification,
    DuplicateEntry,
    ProtocolEntry,
    ProtocolRegistry,
    RegistryParseError,
    Verdict,
    classify_corpus,
    classify_payload,
    default_registry,
    load_registry,
    parse_registry,
)


def p(data: bytes) -> OpReturnPayload:
    return OpReturnPayload(data, None, b"\x6a")


def reg(**prefixes) -> ProtocolRegistry:
    return ProtocolRegistry(tuple(ProtocolEntry(k, v) for k, v in prefixes.items()))


EXPECTED_CATEGORIES = {
    "Blockstore": "Key-value store", "Factom": "Notary/Doc", "Omni Layer": "Assets",
    "Blocksign": "Notary/Doc", "Colu": "Assets", "Stampery": "Notary/Doc",
    "Eternity wall": "Messages", "Bitproof": "Notary/Doc", "Open Assets": "Assets",
    "Ascribe": "Digital Arts", "Monegraph": "Digital Arts", "Coinspark": "Assets",
    "Proof of Existence": "Notary/Doc", "Original My": "Notary/Doc",
    "Open Provenance": "Proof of ownership", "Remembr": "Notary/Doc",
    "Crypto copyright": "Notary/Doc", "LaPreuve": "Notary/Doc", "ProveBit": "Notary/Doc",
    "Blockchain Notary": "Notary/Doc", "Counterparty": "Assets", "Stampd": "Notary/Doc",
}


def test_default_registry_names_and_categories():
    r = default_registry()
    assert len(r) == 22
    assert {e.name: e.category.value for e in r} == EXPECTED_CATEGORIES
    assert all(e.prefix is None for e in r)
    assert "YEJ" not in r.names and "BITCC" not in r.names


def test_load_file(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text(
        "# test\nname,hex_prefix,category,notes\n"
        "Dark Wallet,06,Not identified,len=38 enforced in code\n"
        'Omni,6f6d6e69,Assets,"notes, with comma"\n'
        "Blank,,Key value store\n", encoding="utf-8")
    r = load_registry(f)
    assert r.names == ["Dark Wallet", "Omni", "Blank"]
    assert r.get("Omni").prefix == b"omni" and r.get("Omni").notes == "notes, with comma"
    assert r.get("Blank").prefix is None and r.get("Blank").category is Category.KEY_VALUE


def test_empty_file(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text("", encoding="utf-8")
    assert len(load_registry(f)) == 0


def test_duplicate_prefix(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text("A,06,Assets\nB,06,Assets\n", encoding="utf-8")
    with pytest.raises(DuplicateEntry):
        load_registry(f)


def test_duplicate_name():
    with pytest.raises(DuplicateEntry):
        parse_registry(["A,01,Assets", "A,02,Assets"])
    with pytest.raises(DuplicateEntry):
        ProtocolRegistry((ProtocolEntry("A", b"\x01"), ProtocolEntry("A", b"\x02")))


def test_blank_prefixes_do_not_collide():
    assert len(parse_registry(["A,,Assets", "B,,Assets"])) == 2


@pytest.mark.parametrize("line,lineno", [
    ("A,zz,Assets", 2), ("A,01", 2), ("A,01,Nonsense", 2), (",01,Assets", 2),
])
def test_parse_errors_carry_line(line, lineno):
    with pytest.raises(RegistryParseError) as err:
        parse_registry(["# header comment", line])
    assert err.value.lineno == lineno


def test_marker_prefix_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="metascope.registry"):
        parse_registry(["Shadow,06,Assets"])
    assert any("dark-wallet" in r.message for r in caplog.records)


def test_dark_wallet_signature():
    r = reg(Shadow=b"\x06")
    assert classify_payload(p(b"\x06" + bytes(37)), r) == DARK_WALLET
    for n in (1, 37, 39, 80):
        c = classify_payload(p(b"\x06" + bytes(n - 1)), r)
        assert c.verdict is not Verdict.DARK_WALLET
        assert c == Classification(Verdict.ATTRIBUTED, "Shadow")
    assert classify_payload(p(b"\x06" + bytes(36)), ProtocolRegistry()) == UNATTRIBUTED


def test_empty_registry_unattributed():
    assert classify_payload(p(b"anything"), ProtocolRegistry()) == UNATTRIBUTED
    assert classify_payload(p(b""), ProtocolRegistry()) == UNATTRIBUTED


def test_longest_prefix_wins():
    r = reg(short=b"AB", long=b"ABCD")
    assert classify_payload(p(b"ABCDEF"), r).protocol == "long"
    assert classify_payload(p(b"ABCX"), r).protocol == "short"
    assert classify_payload(p(b"ABC"), r).protocol == "short"
    assert classify_payload(p(b"A"), r) == UNATTRIBUTED


def test_labels():
    assert DARK_WALLET.label == "Dark Wallet"
    assert UNATTRIBUTED.label == "Unattributed"
    assert Classification(Verdict.ATTRIBUTED, "Colu").label == "Colu"


prefix_sets = st.lists(st.binary(min_size=1, max_size=3), max_size=8, unique=True)


@given(prefix_sets, st.binary(max_size=50))
def test_totality_and_determinism(prefixes, data):
    r = ProtocolRegistry(tuple(ProtocolEntry(f"p{i}", x) for i, x in enumerate(prefixes)))
    c1, c2 = classify_payload(p(data), r), classify_payload(p(data), r)
    assert c1 == c2
    assert c1.verdict in set(Verdict)
    matches = [x for x in prefixes if data.startswith(x)]
    if len(data) == 38 and data[:1] == b"\x06":
        assert c1 == DARK_WALLET
    elif matches:
        assert c1.protocol == f"p{prefixes.index(max(matches, key=len))}"
    else:
        assert c1 == UNATTRIBUTED


@given(prefix_sets, st.binary(min_size=1, max_size=50), st.integers(1, 4))
def test_adding_longer_prefix_never_shortens(prefixes, data, extra):
    base = ProtocolRegistry(tuple(ProtocolEntry(f"p{i}", x) for i, x in enumerate(prefixes)))
    before = classify_payload(p(data), base)
    longer = data[:min(len(data), 3 + extra)]
    if longer in prefixes:
        return
    grown = ProtocolRegistry(base.entries + (ProtocolEntry("new", longer),))
    after = classify_payload(p(data), grown)
    if before.verdict is Verdict.ATTRIBUTED and after.verdict is Verdict.ATTRIBUTED:
        assert len(grown.get(after.protocol).prefix) >= len(base.get(before.protocol).prefix)


def test_classify_corpus_order_and_empty():
    r = reg(x=b"X")
    stream = [(p(b"X1"), 1), (p(b"Y"), 2), (p(b"\x06" + bytes(37)), 3)]
    out = list(classify_corpus(stream, r))
    assert [t for _, t in out] == [1, 2, 3]
    assert [c.verdict for c, _ in out] == [Verdict.ATTRIBUTED, Verdict.UNATTRIBUTED, Verdict.DARK_WALLET]
    assert list(classify_corpus([], r)) == []


def test_51_of_100_attributed():
    rng = random.Random(1)
    r = reg(a=b"\xe0\x01", b=b"\xe0\x02")
    stream = [(p(rng.choice([b"\xe0\x01", b"\xe0\x02"]) + rng.randbytes(10)), i) for i in range(51)]
    stream += [(p(b"\xf1" + rng.randbytes(10)), 51 + i) for i in range(49)]
    rng.shuffle(stream)
    out = [c for c, _ in classify_corpus(stream, r)]
    assert sum(c.verdict is Verdict.ATTRIBUTED for c in out) == 51
    assert sum(c.verdict is Verdict.UNATTRIBUTED for c in out) == 49
