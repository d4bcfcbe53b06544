"""OP_RETURN payload extraction and size-profile checks.

Hex dumps of null-data scripts are usually read as "6a, then the length,
then the record"; in bytes that is: byte 0 = 0x6a, byte 1 = push opcode
(the length for direct pushes), data from byte 2. PUSHDATA1/2/4 pushes
shift the data start by the width of their length operand.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .script import OP_RETURN, MalformedScript, Transaction, parse_script

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OpReturnPayload:
    """Metadata carried by one null-data output.

    ``data`` is the first push after OP_RETURN. ``push_opcode`` is None for a
    bare OP_RETURN (or one followed by a non-push opcode), in which case
    ``data`` is empty. Anything after the first push stays in ``raw_script``.
    """

    data: bytes
    push_opcode: Optional[int]
    raw_script: bytes
    txid: Optional[str] = None
    output_index: Optional[int] = None

    @property
    def tx_ref(self) -> tuple[Optional[str], Optional[int]]:
        return self.txid, self.output_index

    def __len__(self) -> int:
        return len(self.data)


def payload_from_script(raw_script: bytes, txid: Optional[str] = None,
                        output_index: Optional[int] = None) -> OpReturnPayload:
    """Decode a null-data locking script.

    Raises ValueError if the script does not start with OP_RETURN and
    MalformedScript if a push overruns it.
    """
    raw_script = bytes(raw_script)
    if raw_script[:1] != bytes([OP_RETURN]):
        raise ValueError("script does not start with OP_RETURN (0x6a)")
    ops = parse_script(raw_script).ops
    if len(ops) > 1 and ops[1].data is not None:
        return OpReturnPayload(ops[1].data, ops[1].opcode, raw_script, txid, output_index)
    return OpReturnPayload(b"", None, raw_script, txid, output_index)


def extract_op_return(tx: Transaction) -> list[OpReturnPayload]:
    payloads = []
    for i, out in enumerate(tx.outputs):
        if out.script_pubkey[:1] != bytes([OP_RETURN]):
            continue
        try:
            payloads.append(payload_from_script(out.script_pubkey, tx.txid, i))
        except MalformedScript as exc:
            log.warning("skipping output %s:%d: %s", tx.txid, i, exc)
    return payloads


@dataclass(frozen=True)
class SizeProfile:
    name: str
    max_data_bytes: int

    def __post_init__(self):
        if self.max_data_bytes <= 0:
            raise ValueError(f"profile {self.name!r}: max_data_bytes must be positive")


# btc-legacy: the 20-byte address field used before OP_RETURN relay existed
DEFAULT_PROFILES = {
    p.name: p
    for p in (
        SizeProfile("btc", 80),
        SizeProfile("btc-legacy", 20),
        SizeProfile("bch-2018", 223),
    )
}


@dataclass(frozen=True)
class SizeCheck:
    accepted: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.accepted


def validate_payload_size(payload: OpReturnPayload, profile: SizeProfile) -> SizeCheck:
    n = len(payload.data)
    if n <= profile.max_data_bytes:
        return SizeCheck(True)
    return SizeCheck(False, f"{n} data bytes exceeds {profile.name} limit of {profile.max_data_bytes}")


def load_profiles(path: str | Path) -> dict[str, SizeProfile]:
    """Read ``name,max_data_bytes`` lines; ``#`` starts a comment."""
    profiles: dict[str, SizeProfile] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                name, limit = (part.strip() for part in line.split(","))
                profile = SizeProfile(name, int(limit))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad profile line: {exc}") from None
            if name in profiles:
                raise ValueError(f"{path}:{lineno}: duplicate profile {name!r}")
            profiles[name] = profile
    return profiles


def decode_ascii(payload: OpReturnPayload | bytes) -> str:
    data = payload.data if isinstance(payload, OpReturnPayload) else payload
    return "".join(chr(b) if 0x20 <= b < 0x7F else "." for b in data)
