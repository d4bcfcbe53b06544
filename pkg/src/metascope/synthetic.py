"""Deterministic synthetic corpora with known ground truth.

Used to exercise the classifier, reports and scanner without chain access,
and to regenerate the sample files shipped in ``metascope.data``.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Optional

from .ingest import OBSERVED_FIRST_BLOCK, MetadataRecord
from .metadata import OpReturnPayload
from .registry import (
    DARK_WALLET_LABEL,
    DARK_WALLET_LENGTH,
    DARK_WALLET_MARKER,
    UNATTRIBUTED_LABEL,
    Category,
    ProtocolEntry,
    ProtocolRegistry,
)
from .script import OP_RETURN, push
from .stealth import StealthIdentity, keygen, send_stealth

# Contribution (%) per protocol over 2013-2017; "<0.01%" rows are given 0.005.
OBSERVED_SHARES: dict[str, float] = {
    UNATTRIBUTED_LABEL: 49.0,
    "Blockstore": 8.5,
    "Factom": 4.14,
    "Omni Layer": 10.3,
    "Blocksign": 0.06,
    "Colu": 10.11,
    "Stampery": 2.60,
    "Eternity wall": 0.16,
    "Bitproof": 0.03,
    "Open Assets": 8.09,
    "Ascribe": 2.0,
    "Monegraph": 2.7,
    "Coinspark": 1.1,
    "Proof of Existence": 0.22,
    "Original My": 0.005,
    "Open Provenance": 0.005,
    "Remembr": 0.005,
    "Crypto copyright": 0.005,
    "LaPreuve": 0.005,
    "ProveBit": 0.005,
    "Blockchain Notary": 0.005,
    "Counterparty": 0.005,
    "Stampd": 0.005,
}

PROTOCOL_CATEGORIES: dict[str, Category] = {
    "Blockstore": Category.KEY_VALUE,
    "Factom": Category.NOTARY,
    "Omni Layer": Category.ASSETS,
    "Blocksign": Category.NOTARY,
    "Colu": Category.ASSETS,
    "Stampery": Category.NOTARY,
    "Eternity wall": Category.MESSAGES,
    "Bitproof": Category.NOTARY,
    "Open Assets": Category.ASSETS,
    "Ascribe": Category.DIGITAL_ARTS,
    "Monegraph": Category.DIGITAL_ARTS,
    "Coinspark": Category.ASSETS,
    "Proof of Existence": Category.NOTARY,
    "Original My": Category.NOTARY,
    "Open Provenance": Category.PROOF_OF_OWNERSHIP,
    "Remembr": Category.NOTARY,
    "Crypto copyright": Category.NOTARY,
    "LaPreuve": Category.NOTARY,
    "ProveBit": Category.NOTARY,
    "Blockchain Notary": Category.NOTARY,
    "Counterparty": Category.ASSETS,
    "Stampd": Category.NOTARY,
}


def apportion(weights: dict[str, float], total: int) -> dict[str, int]:
    """Largest-remainder split of *total* items in proportion to *weights*."""
    norm = sum(weights.values())
    exact = {k: w * total / norm for k, w in weights.items()}
    counts = {k: int(x) for k, x in exact.items()}
    short = total - sum(counts.values())
    for k in sorted(exact, key=lambda k: (-(exact[k] - counts[k]), k))[:short]:
        counts[k] += 1
    return counts


def synthetic_registry() -> ProtocolRegistry:
    """The 22 known protocols with made-up prefixes.

    Every third protocol's prefix extends its predecessor's by one byte, so
    longest-prefix matching is actually exercised.
    """
    entries = []
    prev = None
    for i, name in enumerate(PROTOCOL_CATEGORIES):
        prefix = prev + b"\x01" if prev is not None and i % 3 == 2 else bytes([0xE0, i])
        entries.append(ProtocolEntry(name, prefix, PROTOCOL_CATEGORIES[name], "synthetic prefix"))
        prev = prefix
    return ProtocolRegistry(tuple(entries))


def null_data_script(data: bytes) -> bytes:
    return bytes([OP_RETURN]) + push(data).encode()


@dataclass(frozen=True)
class LabeledPayload:
    payload: OpReturnPayload
    timestamp: datetime
    label: str


def _intended(data: bytes, prefixes: dict[bytes, str]) -> Optional[str]:
    # brute force over every registered prefix, independent of the registry's lookup table
    if len(data) == DARK_WALLET_LENGTH and data[0] == DARK_WALLET_MARKER:
        return DARK_WALLET_LABEL
    best = None
    for p, name in prefixes.items():
        if data.startswith(p) and (best is None or len(p) > len(best)):
            best = p
    return UNATTRIBUTED_LABEL if best is None else prefixes[best]


def generate_corpus(total: int = 10_000, seed: int = 0, *,
                    registry: Optional[ProtocolRegistry] = None,
                    shares: Optional[dict[str, float]] = None,
                    dark_wallet: int = 0,
                    start: datetime = datetime(2013, 3, 29, tzinfo=timezone.utc),
                    end: datetime = datetime(2017, 7, 6, tzinfo=timezone.utc)) -> list[LabeledPayload]:
    """Payloads drawn to *shares* (observed 2013-2017 mix by default) with their true labels.

    ``dark_wallet`` extra payloads get the 0x06/38-byte shape. Unattributed
    payloads include some 0x06-led data of other lengths as decoys.
    """
    rng = random.Random(seed)
    registry = registry or synthetic_registry()
    prefixes = {e.prefix: e.name for e in registry if e.prefix is not None}
    by_name = {e.name: e.prefix for e in registry}
    counts = apportion(shares or OBSERVED_SHARES, total)
    if dark_wallet:
        counts[DARK_WALLET_LABEL] = dark_wallet
    labels = [name for name, c in sorted(counts.items()) for _ in range(c)]
    rng.shuffle(labels)
    span = int((end - start).total_seconds())
    out = []
    for label in labels:
        while True:
            if label == DARK_WALLET_LABEL:
                data = bytes([DARK_WALLET_MARKER]) + rng.randbytes(DARK_WALLET_LENGTH - 1)
            elif label == UNATTRIBUTED_LABEL:
                n = rng.randint(0, 80)
                data = rng.randbytes(n)
                if n and rng.random() < 0.05:
                    data = bytes([DARK_WALLET_MARKER]) + data[1:]
            else:
                prefix = by_name[label]
                data = prefix + rng.randbytes(rng.randint(0, 80 - len(prefix)))
            if _intended(data, prefixes) == label:
                break
        ts = start + timedelta(seconds=rng.randrange(span))
        out.append(LabeledPayload(OpReturnPayload(data, push(data).opcode, null_data_script(data)), ts, label))
    return out


# ---------------------------------------------------------------------------
# Shipped samples
# ---------------------------------------------------------------------------

_WORDS = ("hello", "proof", "doc", "hash", "note", "test", "msg", "id", "ts", "ref")


def _fake_txid(rng: random.Random) -> str:
    return hashlib.sha256(rng.randbytes(32)).hexdigest()


def sample_2013_records(count: int = 430, seed: int = 2013) -> list[MetadataRecord]:
    """OP_RETURN records spread from 2013-03-29 (block 228596) to year end.

    Mostly short ASCII notes plus some raw hashes; none is dark-wallet shaped.
    The first-record date is a convention for the earliest OP_RETURN, not
    verified against the chain.
    """
    rng = random.Random(seed)
    start = datetime(2013, 3, 29, 12, 0, tzinfo=timezone.utc)
    span = int((datetime(2014, 1, 1, tzinfo=timezone.utc) - start).total_seconds())
    offsets = sorted([0] + [rng.randrange(span) for _ in range(count - 1)])
    out = []
    for off in offsets:
        if rng.random() < 0.6:
            data = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(1, 6))).encode()
        else:
            data = rng.randbytes(rng.choice((20, 32, 40)))
        height = OBSERVED_FIRST_BLOCK + off // 600
        out.append(MetadataRecord.build(start + timedelta(seconds=off), height, _fake_txid(rng),
                                        null_data_script(data)))
    return out


@dataclass(frozen=True)
class StealthFixture:
    identity: StealthIdentity
    records: list[MetadataRecord]
    ours: frozenset[str]  # txids of payments made to ``identity``


def stealth_fixture(mine: int = 3, others: int = 7, seed: int = 7) -> StealthFixture:
    """Mixed stealth payments: *mine* to one identity, *others* to strangers."""
    rng = random.Random(seed)
    ident = keygen(rng.randbytes)
    strangers = [keygen(rng.randbytes) for _ in range(min(others, 8) or 1)]
    targets = [ident] * mine + [strangers[i % len(strangers)] for i in range(others)]
    rng.shuffle(targets)
    start = datetime(2014, 6, 1, tzinfo=timezone.utc)
    records, ours = [], set()
    for i, who in enumerate(targets):
        pay = send_stealth(None, who.view_public, who.spend_public, randbytes=rng.randbytes)
        kind = "p2pkh" if rng.random() < 0.8 else "p2pk"
        txid = _fake_txid(rng)
        if who is ident:
            ours.add(txid)
        records.append(MetadataRecord.build(start + timedelta(hours=i), 305000 + i, txid,
                                            pay.payload.raw_script, pay.output_script(kind)))
    return StealthFixture(ident, records, frozenset(ours))
