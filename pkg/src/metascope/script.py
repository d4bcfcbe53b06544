"""Binary transaction and script codec.

Legacy (non-witness) transaction layout::

    version:int32 | n_in:compact | inputs | n_out:compact | outputs | locktime:uint32

Scripts are decoded into ``(opcode, data)`` pairs. Unknown and disabled
opcodes are kept as opaque single-byte ops; nothing here executes scripts.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Optional

OP_0 = 0x00
OP_PUSHDATA1 = 0x4C
OP_PUSHDATA2 = 0x4D
OP_PUSHDATA4 = 0x4E
OP_1 = 0x51
OP_16 = 0x60
OP_RETURN = 0x6A
OP_DUP = 0x76
OP_EQUAL = 0x87
OP_EQUALVERIFY = 0x88
OP_HASH160 = 0xA9
OP_CHECKSIG = 0xAC
OP_CHECKMULTISIG = 0xAE

OPCODE_NAMES = {
    OP_0: "OP_0",
    OP_PUSHDATA1: "OP_PUSHDATA1",
    OP_PUSHDATA2: "OP_PUSHDATA2",
    OP_PUSHDATA4: "OP_PUSHDATA4",
    OP_RETURN: "OP_RETURN",
    OP_DUP: "OP_DUP",
    OP_EQUAL: "OP_EQUAL",
    OP_EQUALVERIFY: "OP_EQUALVERIFY",
    OP_HASH160: "OP_HASH160",
    OP_CHECKSIG: "OP_CHECKSIG",
    OP_CHECKMULTISIG: "OP_CHECKMULTISIG",
}
for _n in range(1, 17):
    OPCODE_NAMES[OP_1 + _n - 1] = f"OP_{_n}"


class MalformedTransaction(ValueError):
    code = "malformed"


class WitnessNotSupported(MalformedTransaction):
    """Segregated-witness serialization; not decoded in this version."""

    code = "witness-unsupported"


class MalformedScript(ValueError):
    pass


def sha256d(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


# ---------------------------------------------------------------------------
# Compact-size integers
# ---------------------------------------------------------------------------

def encode_compact_size(n: int) -> bytes:
    if n < 0:
        raise ValueError("compact size must be non-negative")
    if n < 0xFD:
        return bytes([n])
    if n <= 0xFFFF:
        return b"\xfd" + struct.pack("<H", n)
    if n <= 0xFFFFFFFF:
        return b"\xfe" + struct.pack("<I", n)
    if n <= 0xFFFFFFFFFFFFFFFF:
        return b"\xff" + struct.pack("<Q", n)
    raise ValueError("compact size exceeds 64 bits")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def read(self, n: int) -> bytes:
        if n > self.remaining():
            raise MalformedTransaction(
                f"truncated: need {n} bytes at offset {self.pos}, {self.remaining()} left"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> int:
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))[0]

    def compact_size(self) -> int:
        first = self.read(1)[0]
        if first < 0xFD:
            return first
        fmt, floor = {0xFD: ("<H", 0xFD), 0xFE: ("<I", 0x10000), 0xFF: ("<Q", 0x100000000)}[first]
        n = self.unpack(fmt)
        # non-minimal encodings would break the byte-exact round trip
        if n < floor:
            raise MalformedTransaction(f"non-canonical compact size at offset {self.pos}")
        return n


def decode_compact_size(data: bytes) -> tuple[int, int]:
    """Return ``(value, bytes_consumed)`` for a compact size at the start of *data*."""
    r = _Reader(data)
    return r.compact_size(), r.pos


# ---------------------------------------------------------------------------
# Scripts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptOp:
    opcode: int
    data: Optional[bytes] = None

    @property
    def is_push(self) -> bool:
        return self.data is not None

    def encode(self) -> bytes:
        op = self.opcode
        if self.data is None:
            return bytes([op])
        n = len(self.data)
        if op == OP_0:
            return b"\x00"
        if op <= 0x4B:
            return bytes([op]) + self.data
        if op == OP_PUSHDATA1:
            return bytes([op, n]) + self.data
        if op == OP_PUSHDATA2:
            return bytes([op]) + struct.pack("<H", n) + self.data
        return bytes([op]) + struct.pack("<I", n) + self.data

    def __str__(self) -> str:
        if self.data is not None and self.opcode != OP_0:
            return f"PUSH({self.data.hex()})"
        return OPCODE_NAMES.get(self.opcode, f"OP_UNKNOWN<0x{self.opcode:02x}>")


def push(data: bytes) -> ScriptOp:
    """Minimal push op for *data*."""
    n = len(data)
    if n == 0:
        return ScriptOp(OP_0, b"")
    if n <= 0x4B:
        return ScriptOp(n, bytes(data))
    if n <= 0xFF:
        return ScriptOp(OP_PUSHDATA1, bytes(data))
    if n <= 0xFFFF:
        return ScriptOp(OP_PUSHDATA2, bytes(data))
    return ScriptOp(OP_PUSHDATA4, bytes(data))


@dataclass(frozen=True)
class Script:
    raw: bytes
    ops: tuple[ScriptOp, ...]

    @classmethod
    def from_ops(cls, ops: Iterable[ScriptOp | int]) -> "Script":
        norm = tuple(ScriptOp(o) if isinstance(o, int) else o for o in ops)
        return cls(b"".join(o.encode() for o in norm), norm)

    def __len__(self) -> int:
        return len(self.ops)

    def __str__(self) -> str:
        return " ".join(str(o) for o in self.ops)


def parse_script(data: bytes) -> Script:
    data = bytes(data)
    ops = []
    i, end = 0, len(data)
    while i < end:
        op = data[i]
        i += 1
        if op == OP_0:
            ops.append(ScriptOp(op, b""))
            continue
        if op <= 0x4B:
            n = op
        elif op in (OP_PUSHDATA1, OP_PUSHDATA2, OP_PUSHDATA4):
            width = {OP_PUSHDATA1: 1, OP_PUSHDATA2: 2, OP_PUSHDATA4: 4}[op]
            if i + width > end:
                raise MalformedScript(f"missing length operand for 0x{op:02x} at offset {i - 1}")
            n = int.from_bytes(data[i:i + width], "little")
            i += width
        else:
            ops.append(ScriptOp(op))
            continue
        if i + n > end:
            raise MalformedScript(f"push of {n} bytes at offset {i} overruns script of {end} bytes")
        ops.append(ScriptOp(op, data[i:i + n]))
        i += n
    return Script(data, tuple(ops))


class ScriptType(Enum):
    P2PK = "P2PK"
    P2PKH = "P2PKH"
    P2SH = "P2SH"
    MULTISIG = "Multisig"
    NULL_DATA = "NullData"
    NONSTANDARD = "NonStandard"


def _small_int(op: ScriptOp) -> Optional[int]:
    if op.data is None and OP_1 <= op.opcode <= OP_16:
        return op.opcode - OP_1 + 1
    return None


def _direct_push(op: ScriptOp, *sizes: int) -> bool:
    return op.data is not None and 0x01 <= op.opcode <= 0x4B and len(op.data) in sizes


def classify_script_type(script: Script) -> ScriptType:
    ops = script.ops
    if not ops:
        return ScriptType.NONSTANDARD
    if ops[0].opcode == OP_RETURN:
        return ScriptType.NULL_DATA
    codes = [o.opcode for o in ops]
    if (len(ops) == 5 and codes[0] == OP_DUP and codes[1] == OP_HASH160
            and _direct_push(ops[2], 20) and codes[3] == OP_EQUALVERIFY
            and codes[4] == OP_CHECKSIG):
        return ScriptType.P2PKH
    if len(ops) == 3 and codes[0] == OP_HASH160 and _direct_push(ops[1], 20) and codes[2] == OP_EQUAL:
        return ScriptType.P2SH
    if len(ops) == 2 and _direct_push(ops[0], 33, 65) and codes[1] == OP_CHECKSIG:
        return ScriptType.P2PK
    if len(ops) >= 4 and codes[-1] == OP_CHECKMULTISIG:
        k, n = _small_int(ops[0]), _small_int(ops[-2])
        keys = ops[1:-2]
        if (k is not None and n is not None and k <= n == len(keys)
                and all(_direct_push(o, 33, 65) for o in keys)):
            return ScriptType.MULTISIG
    return ScriptType.NONSTANDARD


def classify_script_bytes(raw: bytes) -> ScriptType:
    """Like classify_script_type, but total over undecodable scripts too."""
    try:
        return classify_script_type(parse_script(raw))
    except MalformedScript:
        return ScriptType.NULL_DATA if raw[:1] == bytes([OP_RETURN]) else ScriptType.NONSTANDARD


# ---------------------------------------------------------------------------
# Transactions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TxInput:
    prev_txid: bytes
    prev_index: int
    script_sig: bytes
    sequence: int = 0xFFFFFFFF

    def __post_init__(self):
        if len(self.prev_txid) != 32:
            raise ValueError("prev_txid must be 32 bytes")
        if not 0 <= self.prev_index <= 0xFFFFFFFF:
            raise ValueError("prev_index out of range")

    @cached_property
    def unlocking_script(self) -> Script:
        """Decoded script; raises MalformedScript (coinbase data often is)."""
        return parse_script(self.script_sig)


@dataclass(frozen=True)
class TxOutput:
    value: int
    script_pubkey: bytes

    def __post_init__(self):
        if not 0 <= self.value <= 0xFFFFFFFFFFFFFFFF:
            raise ValueError("output value out of range")

    @cached_property
    def locking_script(self) -> Script:
        return parse_script(self.script_pubkey)


@dataclass(frozen=True)
class Transaction:
    version: int
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    locktime: int = 0
    _raw: Optional[bytes] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    @cached_property
    def raw(self) -> bytes:
        return self._raw if self._raw is not None else serialize_transaction(self)

    @cached_property
    def txid_bytes(self) -> bytes:
        """Double SHA-256 of the wire bytes, in internal (wire) byte order."""
        return sha256d(self.raw)

    @property
    def txid(self) -> str:
        """Display form: byte-reversed hex."""
        return self.txid_bytes[::-1].hex()


def parse_transaction(data: bytes) -> Transaction:
    data = bytes(data)
    if not data:
        raise MalformedTransaction("empty input")
    r = _Reader(data)
    version = r.unpack("<i")
    n_in = r.compact_size()
    if n_in == 0 and r.remaining() and data[r.pos] == 0x01:
        raise WitnessNotSupported("segwit marker/flag found after version")
    if n_in * 41 > r.remaining():
        raise MalformedTransaction(f"input count {n_in} exceeds remaining bytes")
    inputs = []
    for _ in range(n_in):
        prev = r.read(32)
        idx = r.unpack("<I")
        sig = r.read(r.compact_size())
        seq = r.unpack("<I")
        inputs.append(TxInput(prev, idx, sig, seq))
    n_out = r.compact_size()
    if n_out * 9 > r.remaining():
        raise MalformedTransaction(f"output count {n_out} exceeds remaining bytes")
    outputs = []
    for _ in range(n_out):
        value = r.unpack("<Q")
        spk = r.read(r.compact_size())
        outputs.append(TxOutput(value, spk))
    locktime = r.unpack("<I")
    if r.remaining():
        raise MalformedTransaction(f"{r.remaining()} trailing bytes after locktime")
    return Transaction(version, tuple(inputs), tuple(outputs), locktime, _raw=data)


def serialize_transaction(tx: Transaction) -> bytes:
    parts = [struct.pack("<i", tx.version), encode_compact_size(len(tx.inputs))]
    for txin in tx.inputs:
        parts += [
            txin.prev_txid,
            struct.pack("<I", txin.prev_index),
            encode_compact_size(len(txin.script_sig)),
            txin.script_sig,
            struct.pack("<I", txin.sequence),
        ]
    parts.append(encode_compact_size(len(tx.outputs)))
    for txout in tx.outputs:
        parts += [
            struct.pack("<Q", txout.value),
            encode_compact_size(len(txout.script_pubkey)),
            txout.script_pubkey,
        ]
    parts.append(struct.pack("<I", tx.locktime))
    return b"".join(parts)
