import random
import threading

import pytest
from hypothesis import given, settings, strategies as st

from metascope.script import (
    OP_RETURN,
    MalformedScript,
    MalformedTransaction,
    Script,
    ScriptOp,
    ScriptType,
    Transaction,
    TxInput,
    TxOutput,
    WitnessNotSupported,
    classify_script_bytes,
    classify_script_type,
    decode_compact_size,
    encode_compact_size,
    parse_script,
    parse_transaction,
    push,
    serialize_transaction,
)
from txgen import encode_tx, random_tx_bytes, varint

# First transaction of block 170 (coinbase-funded payment); txid is public record.
BLOCK170_TX = bytes.fromhex(
    "0100000001c997a5e56e104102fa209c6a852dd90660a20b2d9c352423edce25857fcd3704000000004847304402"
    "204e45e16932b8af514961a1d3a1a25fdf3f4f7732e9d624c6c61548ab5fb8cd410220181522ec8eca07de4860a4"
    "acdd12909d831cc56cbbac4622082221a8768d1d0901ffffffff0200ca9a3b00000000434104ae1a62fe09c5f51b"
    "13905f07f06b99a2f7159b2225f374cd378d71302fa28414e7aab37397f554a7df5f142c21c1b7303b8a0626f1ba"
    "ded5c72a704f7e6cd84cac00286bee0000000043410411db93e1dcdb8a016b49840f8c53bc1eb68a382e97b1482e"
    "cad7b148a6909a5cb2e0eaddfb84ccf9744464f82e160bfa9b8b64f9d4c03f999b8643f656b412a3ac00000000"
)
BLOCK170_TXID = "f4184fc596403b9d638783cf57adfe4c75c605f6356fbc91338530e9831e9e16"


def test_compact_size_boundaries():
    for n, enc in [(0, "00"), (0xFC, "fc"), (0xFD, "fdfd00"), (0xFFFF, "fdffff"),
                   (0x10000, "fe00000100"), (0xFFFFFFFF, "feffffffff"),
                   (0x100000000, "ff0000000001000000")]:
        assert encode_compact_size(n).hex() == enc
        assert decode_compact_size(bytes.fromhex(enc)) == (n, len(enc) // 2)
        assert encode_compact_size(n) == varint(n)


def test_non_canonical_compact_size_rejected():
    with pytest.raises(MalformedTransaction):
        decode_compact_size(bytes.fromhex("fd0500"))


def test_empty_transaction_rejected():
    with pytest.raises(MalformedTransaction):
        parse_transaction(b"")


def test_known_mainnet_transaction():
    tx = parse_transaction(BLOCK170_TX)
    assert tx.txid == BLOCK170_TXID
    assert tx.version == 1 and tx.locktime == 0
    assert len(tx.inputs) == 1 and len(tx.outputs) == 2
    assert tx.outputs[0].value == 10 * 10**8
    assert classify_script_type(tx.outputs[0].locking_script) is ScriptType.P2PK
    assert serialize_transaction(tx) == BLOCK170_TX


def test_fixture_from_independent_encoder_round_trips():
    raw = encode_tx(
        2,
        [(bytes(range(32)), 7, b"\x51", 0xFFFFFFFE)],
        [(5000, b"\x76\xa9\x14" + b"\x11" * 20 + b"\x88\xac"), (0, b"\x6a\x05hello")],
        499999,
    )
    tx = parse_transaction(raw)
    assert tx.inputs[0].prev_txid == bytes(range(32)) and tx.inputs[0].prev_index == 7
    assert [o.value for o in tx.outputs] == [5000, 0]
    assert serialize_transaction(tx) == raw


def test_declared_counts_are_honoured():
    # one input, one output on the wire; claiming two outputs must fail
    raw = bytearray(encode_tx(1, [(b"\0" * 32, 0, b"", 0)], [(1, b"\x51")], 0))
    count_at = 4 + 1 + 32 + 4 + 1 + 4
    assert raw[count_at] == 1
    raw[count_at] = 2
    with pytest.raises(MalformedTransaction):
        parse_transaction(bytes(raw))
    tx = parse_transaction(encode_tx(1, [(b"\0" * 32, 0, b"", 0)], [(1, b"\x51")], 0))
    assert (len(tx.inputs), len(tx.outputs)) == (1, 1)


def test_huge_count_rejected_cheaply():
    raw = b"\x01\x00\x00\x00" + b"\xfe\xff\xff\xff\x7f" + b"\x00" * 10
    with pytest.raises(MalformedTransaction, match="exceeds"):
        parse_transaction(raw)


def test_trailing_garbage_rejected():
    raw = encode_tx(1, [(b"\0" * 32, 0, b"", 0)], [], 0)
    with pytest.raises(MalformedTransaction, match="trailing"):
        parse_transaction(raw + b"\x00")


def test_witness_serialization_has_its_own_error():
    raw = b"\x02\x00\x00\x00\x00\x01" + b"\x01" + b"\x00" * 41
    with pytest.raises(WitnessNotSupported) as err:
        parse_transaction(raw)
    assert err.value.code == "witness-unsupported"
    assert isinstance(err.value, MalformedTransaction)


def test_serialize_deterministic_and_constructed_round_trip():
    tx = Transaction(1, [TxInput(b"\xaa" * 32, 3, b"\x00\x01\x02")],
                     [TxOutput(42, b"\x6a\x02hi")], 9)
    a, b = serialize_transaction(tx), serialize_transaction(tx)
    assert a == b
    assert parse_transaction(a) == tx
    assert parse_transaction(a).txid == tx.txid


def test_txid_is_function_of_bytes():
    rng = random.Random(5)
    raw = random_tx_bytes(rng)
    assert parse_transaction(raw).txid == parse_transaction(bytes(raw)).txid


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_round_trip_property(rng):
    raw = random_tx_bytes(rng)
    tx = parse_transaction(raw)
    assert serialize_transaction(tx) == raw


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_every_truncation_fails(rng):
    raw = random_tx_bytes(rng)
    for cut in range(len(raw)):
        with pytest.raises(MalformedTransaction):
            parse_transaction(raw[:cut])


# --- scripts ---------------------------------------------------------------

def test_parse_hello():
    s = parse_script(bytes.fromhex("6a0568656c6c6f"))
    assert s.ops == (ScriptOp(OP_RETURN), ScriptOp(5, b"hello"))
    assert str(s) == "OP_RETURN PUSH(68656c6c6f)"


def test_push_overrun():
    with pytest.raises(MalformedScript):
        parse_script(b"\x6a\x26" + b"\x00" * 10)
    with pytest.raises(MalformedScript):
        parse_script(b"\x6a\x4d\x01")


def test_empty_script():
    assert parse_script(b"").ops == ()


def test_pushdata_forms():
    data = bytes(range(200))
    s = parse_script(b"\x6a\x4c\xc8" + data)
    assert s.ops[1] == ScriptOp(0x4C, data)
    big = bytes(223)
    s = parse_script(b"\x6a\x4d\xdf\x00" + big)
    assert s.ops[1].data == big
    # non-minimal push is preserved verbatim
    s = parse_script(b"\x4c\x01\xff")
    assert s.ops == (ScriptOp(0x4C, b"\xff"),)
    assert Script.from_ops(s.ops).raw == s.raw


def test_unknown_opcodes_kept():
    s = parse_script(b"\xfe\xba\x50")
    assert [o.opcode for o in s.ops] == [0xFE, 0xBA, 0x50]
    assert all(o.data is None for o in s.ops)


@given(st.binary(max_size=300))
def test_script_reassembly(raw):
    try:
        s = parse_script(raw)
    except MalformedScript:
        return
    assert b"".join(o.encode() for o in s.ops) == raw
    for o in s.ops:
        if 0x01 <= o.opcode <= 0x4B:
            assert len(o.data) == o.opcode


@given(st.binary(max_size=600))
def test_push_is_minimal_and_decodable(data):
    op = push(data)
    assert parse_script(op.encode()).ops == (op,)


# --- classification --------------------------------------------------------

PK33 = b"\x02" + b"\x11" * 32
PK65 = b"\x04" + b"\x22" * 64


@pytest.mark.parametrize("raw,expected", [
    (b"\x6a", ScriptType.NULL_DATA),
    (b"\x6a\x05hello", ScriptType.NULL_DATA),
    (b"\x76\xa9\x14" + b"\x00" * 20 + b"\x88\xac", ScriptType.P2PKH),
    (b"\xa9\x14" + b"\x00" * 20 + b"\x87", ScriptType.P2SH),
    (b"\x21" + PK33 + b"\xac", ScriptType.P2PK),
    (b"\x41" + PK65 + b"\xac", ScriptType.P2PK),
    (b"\x51\x21" + PK33 + b"\x21" + PK33 + b"\x52\xae", ScriptType.MULTISIG),
    (b"\x52\x21" + PK33 + b"\x51\xae", ScriptType.NONSTANDARD),  # k > n
    (b"\x76\xa9\x13" + b"\x00" * 19 + b"\x88\xac", ScriptType.NONSTANDARD),
    (b"\xfe", ScriptType.NONSTANDARD),
    (b"", ScriptType.NONSTANDARD),
])
def test_classify(raw, expected):
    assert classify_script_type(parse_script(raw)) is expected


def test_classify_bytes_total_on_malformed():
    assert classify_script_bytes(b"\x6a\x26\x00") is ScriptType.NULL_DATA
    assert classify_script_bytes(b"\x4d\x01") is ScriptType.NONSTANDARD


@given(st.binary(max_size=120))
def test_classification_total_and_deterministic(raw):
    assert classify_script_bytes(raw) is classify_script_bytes(raw)
    assert isinstance(classify_script_bytes(raw), ScriptType)


def test_concurrent_parsing_is_consistent():
    rng = random.Random(11)
    blobs = [random_tx_bytes(rng) for _ in range(50)]
    expected = [parse_transaction(b).txid for b in blobs]
    results = {}

    def work(i):
        results[i] = [parse_transaction(b).txid for b in blobs]

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == expected for r in results.values())
