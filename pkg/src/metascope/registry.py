"""Meta-protocol registry and payload attribution.

A registry is a flat file of ``name,hex_prefix,category,notes`` rows. Each
payload gets exactly one verdict: DarkWallet, Attributed(protocol) via the
longest matching prefix, or Unattributed.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional, TypeVar

from .metadata import OpReturnPayload

log = logging.getLogger(__name__)

DARK_WALLET_MARKER = 0x06
DARK_WALLET_LENGTH = 38
DARK_WALLET_LABEL = "Dark Wallet"
UNATTRIBUTED_LABEL = "Unattributed"


class Category(Enum):
    NOTARY = "Notary/Doc"
    ASSETS = "Assets"
    DIGITAL_ARTS = "Digital Arts"
    KEY_VALUE = "Key-value store"
    MESSAGES = "Messages"
    PROOF_OF_OWNERSHIP = "Proof of ownership"
    NOT_IDENTIFIED = "Not identified"

    @classmethod
    def parse(cls, text: str) -> "Category":
        key = " ".join(text.replace("-", " ").split()).lower()
        for cat in cls:
            if " ".join(cat.value.replace("-", " ").split()).lower() == key:
                return cat
        if key in _CATEGORY_ALIASES:
            return _CATEGORY_ALIASES[key]
        raise ValueError(f"unknown category {text!r}")


_CATEGORY_ALIASES = {
    "any messages": Category.MESSAGES,
    "notary": Category.NOTARY,
    "key value": Category.KEY_VALUE,
}


class RegistryParseError(ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


class DuplicateEntry(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolEntry:
    name: str
    prefix: Optional[bytes]
    category: Category = Category.NOT_IDENTIFIED
    notes: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError("protocol name must be non-empty")
        if self.prefix is not None and len(self.prefix) == 0:
            raise ValueError(f"{self.name}: empty prefix; use None for unresolvable")

    @property
    def resolvable(self) -> bool:
        return self.prefix is not None


@dataclass(frozen=True)
class ProtocolRegistry:
    entries: tuple[ProtocolEntry, ...] = ()
    _by_prefix: dict = field(init=False, repr=False, compare=False)
    _lengths: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        names: set[str] = set()
        by_prefix: dict[bytes, ProtocolEntry] = {}
        for e in self.entries:
            if e.name in names:
                raise DuplicateEntry(f"duplicate protocol name {e.name!r}")
            names.add(e.name)
            if e.prefix is None:
                continue
            if e.prefix in by_prefix:
                raise DuplicateEntry(
                    f"prefix {e.prefix.hex()} shared by {by_prefix[e.prefix].name!r} and {e.name!r}"
                )
            by_prefix[e.prefix] = e
        object.__setattr__(self, "_by_prefix", by_prefix)
        object.__setattr__(self, "_lengths", tuple(sorted({len(p) for p in by_prefix}, reverse=True)))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ProtocolEntry]:
        return iter(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def get(self, name: str) -> Optional[ProtocolEntry]:
        return next((e for e in self.entries if e.name == name), None)

    def longest_match(self, data: bytes) -> Optional[ProtocolEntry]:
        for n in self._lengths:
            if n <= len(data):
                hit = self._by_prefix.get(bytes(data[:n]))
                if hit is not None:
                    return hit
        return None


def _parse_prefix(text: str, lineno: int) -> Optional[bytes]:
    text = text.strip().lower().removeprefix("0x")
    if not text:
        return None
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise RegistryParseError(lineno, f"bad hex prefix {text!r}") from None


def parse_registry(lines: Iterable[str], source: str = "<registry>") -> ProtocolRegistry:
    entries: list[ProtocolEntry] = []
    names: set[str] = set()
    prefixes: dict[bytes, str] = {}
    first = True
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        row = next(csv.reader([stripped], skipinitialspace=True))
        if first and [c.strip().lower() for c in row[:2]] == ["name", "hex_prefix"]:
            first = False
            continue
        first = False
        if not 3 <= len(row) <= 4:
            raise RegistryParseError(lineno, f"expected 3 or 4 fields, got {len(row)}")
        name = row[0].strip()
        if not name:
            raise RegistryParseError(lineno, "empty protocol name")
        prefix = _parse_prefix(row[1], lineno)
        try:
            category = Category.parse(row[2])
        except ValueError as exc:
            raise RegistryParseError(lineno, str(exc)) from None
        notes = row[3].strip() if len(row) == 4 else ""
        if name in names:
            raise DuplicateEntry(f"{source}:{lineno}: duplicate protocol name {name!r}")
        if prefix is not None:
            if prefix in prefixes:
                raise DuplicateEntry(
                    f"{source}:{lineno}: prefix {prefix.hex()} already used by {prefixes[prefix]!r}"
                )
            prefixes[prefix] = name
            if prefix[0] == DARK_WALLET_MARKER:
                log.warning("%s:%d: prefix %s overlaps the dark-wallet marker; "
                            "38-byte 0x06 payloads are classified DarkWallet first",
                            source, lineno, prefix.hex())
        names.add(name)
        entries.append(ProtocolEntry(name, prefix, category, notes))
    return ProtocolRegistry(tuple(entries))


def load_registry(path: str | Path) -> ProtocolRegistry:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_registry(fh, str(path))


def default_registry() -> ProtocolRegistry:
    """The shipped registry: 22 protocol names and categories, no prefixes."""
    text = resources.files("metascope.data").joinpath("default_registry.csv").read_text("utf-8")
    return parse_registry(text.splitlines(), "default_registry.csv")


class Verdict(Enum):
    ATTRIBUTED = "Attributed"
    DARK_WALLET = "DarkWallet"
    UNATTRIBUTED = "Unattributed"


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    protocol: Optional[str] = None

    @property
    def label(self) -> str:
        if self.verdict is Verdict.ATTRIBUTED:
            return self.protocol
        if self.verdict is Verdict.DARK_WALLET:
            return DARK_WALLET_LABEL
        return UNATTRIBUTED_LABEL


DARK_WALLET = Classification(Verdict.DARK_WALLET)
UNATTRIBUTED = Classification(Verdict.UNATTRIBUTED)


def is_dark_wallet_shaped(data: bytes) -> bool:
    return len(data) == DARK_WALLET_LENGTH and data[0] == DARK_WALLET_MARKER


def classify_payload(payload: OpReturnPayload | bytes, registry: ProtocolRegistry) -> Classification:
    data = payload.data if isinstance(payload, OpReturnPayload) else bytes(payload)
    if is_dark_wallet_shaped(data):
        return DARK_WALLET
    entry = registry.longest_match(data)
    if entry is None:
        return UNATTRIBUTED
    return Classification(Verdict.ATTRIBUTED, entry.name)


T = TypeVar("T")


def classify_corpus(records: Iterable[tuple[OpReturnPayload, T]],
                    registry: ProtocolRegistry) -> Iterator[tuple[Classification, T]]:
    for payload, stamp in records:
        yield classify_payload(payload, registry), stamp
