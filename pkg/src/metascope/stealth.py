"""Stealth addresses over secp256k1, from the naive DH variant up to view keys.

Notation: ``G`` generator, ``n`` group order, ``H(S)`` = SHA-256 of the
33-byte compressed point ``S`` read as a big-endian integer mod ``n``.

    basic        E = H(S)·G                  (sender can spend too)
    asymmetric   E = H(S)·G + B,  e = H(S) + b
    ephemeral    sender picks r, publishes R = r·G in an OP_RETURN output
    dual-key     S = r·V (sender) = v·R (receiver); E and e as asymmetric

Only the receiver's ``b`` turns ``E`` into a spendable key; ``v`` is enough
to find payments.

Group arithmetic is delegated to libsecp256k1 (via coincurve), which keeps
secret-scalar multiplications constant time.
"""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import coincurve

from .metadata import OpReturnPayload
from .registry import DARK_WALLET_LENGTH, DARK_WALLET_MARKER
from .script import OP_CHECKSIG, OP_DUP, OP_EQUALVERIFY, OP_HASH160, OP_RETURN

log = logging.getLogger(__name__)

P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8

NONCE_SIZE = 4
PAYLOAD_SIZE = 1 + NONCE_SIZE + 33
assert PAYLOAD_SIZE == DARK_WALLET_LENGTH


class InvalidPoint(ValueError):
    pass


class InvalidScalar(ValueError):
    pass


class DegenerateHash(ArithmeticError):
    """H(S) reduced to zero mod n."""


class ZeroResult(ArithmeticError):
    """A derived scalar came out as zero mod n."""


class EntropyUnavailable(RuntimeError):
    pass


def _check_scalar(k: int, what: str = "scalar") -> int:
    if not isinstance(k, int) or isinstance(k, bool):
        raise InvalidScalar(f"{what} must be an int")
    if not 1 <= k < N:
        raise InvalidScalar(f"{what} must lie in [1, n)")
    return k


def _scalar_bytes(k: int) -> bytes:
    return k.to_bytes(32, "big")


@dataclass(frozen=True)
class CurvePoint:
    """A non-identity secp256k1 point, held in compressed form."""

    compressed: bytes

    def __post_init__(self):
        try:
            pub = coincurve.PublicKey(bytes(self.compressed))
        except (ValueError, TypeError) as exc:
            raise InvalidPoint(f"not a curve point: {exc}") from None
        object.__setattr__(self, "compressed", pub.format(compressed=True))

    @classmethod
    def from_bytes(cls, data: bytes) -> "CurvePoint":
        """Accept 33-byte compressed or 65-byte uncompressed encodings."""
        return cls(bytes(data))

    @classmethod
    def from_hex(cls, text: str) -> "CurvePoint":
        try:
            return cls(bytes.fromhex(text.strip()))
        except ValueError as exc:
            raise InvalidPoint(str(exc)) from None

    @classmethod
    def from_xy(cls, x: int, y: int) -> "CurvePoint":
        return cls(b"\x04" + x.to_bytes(32, "big") + y.to_bytes(32, "big"))

    @property
    def _pub(self) -> coincurve.PublicKey:
        return coincurve.PublicKey(self.compressed)

    @property
    def uncompressed(self) -> bytes:
        return self._pub.format(compressed=False)

    @property
    def xy(self) -> tuple[int, int]:
        return self._pub.point()

    def hex(self) -> str:
        return self.compressed.hex()

    def __add__(self, other: "CurvePoint") -> "CurvePoint":
        try:
            pub = coincurve.PublicKey.combine_keys([self._pub, other._pub])
        except ValueError:
            raise InvalidPoint("sum is the point at infinity") from None
        return CurvePoint(pub.format())

    def __neg__(self) -> "CurvePoint":
        return CurvePoint(bytes([self.compressed[0] ^ 1]) + self.compressed[1:])

    def __sub__(self, other: "CurvePoint") -> "CurvePoint":
        return self + (-other)

    def __rmul__(self, k: int) -> "CurvePoint":
        return point_mul(k, self)

    def __str__(self) -> str:
        return self.hex()


G = CurvePoint.from_xy(GX, GY)


def base_mul(k: int) -> CurvePoint:
    """k·G"""
    if isinstance(k, bool) or not isinstance(k, int):
        raise InvalidScalar("scalar must be an int")
    k %= N
    if k == 0:
        raise InvalidScalar("scalar is zero mod n")
    return CurvePoint(coincurve.PublicKey.from_valid_secret(_scalar_bytes(k)).format())


def point_mul(k: int, point: CurvePoint) -> CurvePoint:
    """k·point; scalars are reduced mod n, zero results are rejected."""
    if isinstance(k, bool) or not isinstance(k, int):
        raise InvalidScalar("scalar must be an int")
    k %= N
    if k == 0:
        raise InvalidScalar("scalar is zero mod n; product would be the identity")
    return CurvePoint(point._pub.multiply(_scalar_bytes(k)).format())


def hash_to_scalar(point: CurvePoint) -> int:
    h = int.from_bytes(hashlib.sha256(point.compressed).digest(), "big") % N
    if h == 0:
        raise DegenerateHash("H(S) is zero mod n")
    return h


def hash160(data: bytes) -> bytes:
    sha = hashlib.sha256(data).digest()
    try:
        return hashlib.new("ripemd160", sha).digest()
    except ValueError:
        # OpenSSL 3 builds drop ripemd160 from hashlib
        from Crypto.Hash import RIPEMD160

        return RIPEMD160.new(sha).digest()


# ---------------------------------------------------------------------------
# Keys
# ---------------------------------------------------------------------------

RandBytes = Callable[[int], bytes]


def random_scalar(randbytes: RandBytes = os.urandom) -> int:
    """Uniform scalar in [1, n); out-of-range draws (including 0) are redrawn."""
    while True:
        try:
            raw = randbytes(32)
        except (OSError, NotImplementedError) as exc:
            raise EntropyUnavailable(str(exc)) from exc
        if not isinstance(raw, (bytes, bytearray)) or len(raw) != 32:
            raise EntropyUnavailable("random source returned the wrong number of bytes")
        k = int.from_bytes(raw, "big")
        if 1 <= k < N:
            return k


@dataclass(frozen=True)
class StealthAddress:
    """What a receiver publishes: view and spend public keys."""

    view_public: CurvePoint
    spend_public: CurvePoint

    def encode(self) -> str:
        return self.view_public.hex() + self.spend_public.hex()

    @classmethod
    def decode(cls, text: str) -> "StealthAddress":
        text = text.strip()
        if len(text) != 132:
            raise InvalidPoint("stealth address must be 132 hex chars (V || B)")
        return cls(CurvePoint.from_hex(text[:66]), CurvePoint.from_hex(text[66:]))


@dataclass(frozen=True)
class ViewKey:
    """Read-only wallet: detects payments, cannot derive spend keys."""

    view_private: int
    spend_public: CurvePoint

    def __post_init__(self):
        _check_scalar(self.view_private, "view key")


@dataclass(frozen=True)
class StealthIdentity:
    spend_private: int
    spend_public: CurvePoint
    view_private: Optional[int] = None
    view_public: Optional[CurvePoint] = None

    def __post_init__(self):
        _check_scalar(self.spend_private, "spend key")
        if base_mul(self.spend_private) != self.spend_public:
            raise ValueError("spend_public does not match spend_private")
        if (self.view_private is None) != (self.view_public is None):
            raise ValueError("view key pair must be given in full or not at all")
        if self.view_private is not None:
            _check_scalar(self.view_private, "view key")
            if base_mul(self.view_private) != self.view_public:
                raise ValueError("view_public does not match view_private")

    @classmethod
    def from_private(cls, spend_private: int, view_private: Optional[int] = None) -> "StealthIdentity":
        return cls(
            spend_private,
            base_mul(spend_private),
            view_private,
            None if view_private is None else base_mul(view_private),
        )

    @property
    def address(self) -> StealthAddress:
        if self.view_public is None:
            raise ValueError("identity has no view key")
        return StealthAddress(self.view_public, self.spend_public)

    def view_key(self) -> ViewKey:
        if self.view_private is None:
            raise ValueError("identity has no view key")
        return ViewKey(self.view_private, self.spend_public)


def keygen(randbytes: RandBytes = os.urandom, with_view_key: bool = True) -> StealthIdentity:
    b = random_scalar(randbytes)
    v = random_scalar(randbytes) if with_view_key else None
    return StealthIdentity.from_private(b, v)


# ---------------------------------------------------------------------------
# Shared secret and transfer addresses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SharedSecret:
    point: CurvePoint


def dh_shared_secret(private: int, other_public: CurvePoint) -> SharedSecret:
    _check_scalar(private, "private key")
    if not isinstance(other_public, CurvePoint):
        other_public = CurvePoint.from_bytes(other_public)
    return SharedSecret(point_mul(private, other_public))


def basic_transfer_address(secret: SharedSecret) -> CurvePoint:
    """E = H(S)·G.

    Insecure on purpose: the sender knows H(S) as well, so either party can
    spend. Kept as the first rung for comparison and tests.
    """
    return base_mul(hash_to_scalar(secret.point))


def asym_transfer_address(secret: SharedSecret, spend_public: CurvePoint) -> CurvePoint:
    """E = H(S)·G + B"""
    return base_mul(hash_to_scalar(secret.point)) + spend_public


def derive_spend_key(secret: SharedSecret, spend_private: int) -> int:
    """e = H(S) + b mod n, the private key for asym_transfer_address(S, b·G)."""
    _check_scalar(spend_private, "spend key")
    e = (hash_to_scalar(secret.point) + spend_private) % N
    if e == 0:
        raise ZeroResult("spend key is zero mod n")
    return e


# ---------------------------------------------------------------------------
# Ephemeral payments and their OP_RETURN payload
# ---------------------------------------------------------------------------

def encode_stealth_payload(ephemeral_public: CurvePoint, nonce: bytes) -> bytes:
    """0x06 | nonce (4) | compressed R (33)"""
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    return bytes([DARK_WALLET_MARKER]) + bytes(nonce) + ephemeral_public.compressed


def decode_stealth_payload(data: bytes) -> tuple[bytes, CurvePoint]:
    """Return ``(nonce, R)``; InvalidPoint if R is not on the curve."""
    if len(data) != PAYLOAD_SIZE or data[0] != DARK_WALLET_MARKER:
        raise ValueError("not a stealth payload")
    return bytes(data[1:1 + NONCE_SIZE]), CurvePoint(bytes(data[1 + NONCE_SIZE:]))


def p2pkh_script(point: CurvePoint, compressed: bool = True) -> bytes:
    key = point.compressed if compressed else point.uncompressed
    return bytes([OP_DUP, OP_HASH160, 20]) + hash160(key) + bytes([OP_EQUALVERIFY, OP_CHECKSIG])


def p2pk_script(point: CurvePoint, compressed: bool = True) -> bytes:
    key = point.compressed if compressed else point.uncompressed
    return bytes([len(key)]) + key + bytes([OP_CHECKSIG])


def paying_scripts(point: CurvePoint) -> frozenset[bytes]:
    """Every P2PK/P2PKH locking script that pays *point*."""
    return frozenset(
        f(point, c) for f in (p2pkh_script, p2pk_script) for c in (True, False)
    )


@dataclass(frozen=True)
class StealthPayment:
    transfer_address: CurvePoint
    ephemeral_public: CurvePoint
    payload: OpReturnPayload

    def output_script(self, kind: str = "p2pkh") -> bytes:
        if kind == "p2pkh":
            return p2pkh_script(self.transfer_address)
        if kind == "p2pk":
            return p2pk_script(self.transfer_address)
        raise ValueError(f"unknown output kind {kind!r}")


def send_stealth(r: Optional[int], view_public: CurvePoint, spend_public: CurvePoint, *,
                 nonce: Optional[bytes] = None, randbytes: RandBytes = os.urandom) -> StealthPayment:
    """Build a one-time payment to (V, B) with ephemeral key *r*.

    Passing ``r=None`` draws a fresh one. Never reuse ``r`` across payments.
    """
    r = random_scalar(randbytes) if r is None else _check_scalar(r, "ephemeral key")
    if nonce is None:
        try:
            nonce = randbytes(NONCE_SIZE)
        except (OSError, NotImplementedError) as exc:
            raise EntropyUnavailable(str(exc)) from exc
    secret = dh_shared_secret(r, view_public)
    transfer = asym_transfer_address(secret, spend_public)
    ephemeral = base_mul(r)
    data = encode_stealth_payload(ephemeral, nonce)
    raw = bytes([OP_RETURN, len(data)]) + data
    return StealthPayment(transfer, ephemeral, OpReturnPayload(data, len(data), raw))


# ---------------------------------------------------------------------------
# Scanning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateOutput:
    script: bytes
    ref: object = None


@dataclass(frozen=True)
class Detection:
    output: CandidateOutput
    transfer_address: CurvePoint
    payload: OpReturnPayload
    spend_key: Optional[int] = None


ScanItem = tuple[OpReturnPayload, Sequence[CandidateOutput]]


def _scan(stream: Iterable[ScanItem], view_private: int, spend_public: CurvePoint):
    _check_scalar(view_private, "view key")
    for payload, candidates in stream:
        data = payload.data
        if len(data) != PAYLOAD_SIZE or data[:1] != bytes([DARK_WALLET_MARKER]):
            continue
        try:
            _, ephemeral = decode_stealth_payload(data)
            secret = dh_shared_secret(view_private, ephemeral)
            transfer = asym_transfer_address(secret, spend_public)
        except (InvalidPoint, InvalidScalar, DegenerateHash) as exc:
            log.warning("skipping payload %s: %s", payload.txid or data.hex(), exc)
            continue
        targets = paying_scripts(transfer)
        for cand in candidates:
            if bytes(cand.script) in targets:
                yield cand, payload, secret, transfer


def scan_payments(stream: Iterable[ScanItem], identity: StealthIdentity) -> list[Detection]:
    if identity.view_private is None:
        raise ValueError("scanning needs an identity with a view key")
    found = []
    for cand, payload, secret, transfer in _scan(stream, identity.view_private, identity.spend_public):
        e = derive_spend_key(secret, identity.spend_private)
        found.append(Detection(cand, transfer, payload, e))
    return found


def view_only_scan(stream: Iterable[ScanItem], view_private: int,
                   spend_public: CurvePoint) -> list[Detection]:
    return [
        Detection(cand, transfer, payload)
        for cand, payload, _secret, transfer in _scan(stream, view_private, spend_public)
    ]


# ---------------------------------------------------------------------------
# Key files
# ---------------------------------------------------------------------------

def format_keys(identity: StealthIdentity | ViewKey | StealthAddress) -> str:
    """Serialize to ``tag: hex`` lines.

    Private scalars use ``spend:``/``view:`` (32-byte big-endian). Public
    points use ``spend_pub:``/``view_pub:`` (33-byte compressed).
    """
    lines = []
    if isinstance(identity, StealthIdentity):
        lines.append(f"spend: {_scalar_bytes(identity.spend_private).hex()}")
        if identity.view_private is not None:
            lines.append(f"view: {_scalar_bytes(identity.view_private).hex()}")
    elif isinstance(identity, ViewKey):
        lines.append(f"view: {_scalar_bytes(identity.view_private).hex()}")
        lines.append(f"spend_pub: {identity.spend_public.hex()}")
    else:
        lines.append(f"view_pub: {identity.view_public.hex()}")
        lines.append(f"spend_pub: {identity.spend_public.hex()}")
    return "\n".join(lines) + "\n"


def parse_keys(text: str) -> StealthIdentity | ViewKey | StealthAddress:
    fields: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tag, sep, value = line.partition(":")
        tag = tag.strip().lower()
        if not sep or tag not in ("spend", "view", "spend_pub", "view_pub"):
            raise ValueError(f"line {lineno}: expected spend:/view:/spend_pub:/view_pub:")
        if tag in fields:
            raise ValueError(f"line {lineno}: duplicate {tag}: entry")
        fields[tag] = value.strip()

    def scalar(tag):
        value = fields[tag]
        if len(value) != 64:
            raise ValueError(f"{tag}: expected 64 hex chars")
        return _check_scalar(int(value, 16), tag)

    if "spend" in fields:
        ident = StealthIdentity.from_private(scalar("spend"), scalar("view") if "view" in fields else None)
        for tag, point in (("spend_pub", ident.spend_public), ("view_pub", ident.view_public)):
            if tag in fields and CurvePoint.from_hex(fields[tag]) != point:
                raise ValueError(f"{tag} does not match the private key")
        return ident
    if "view" in fields and "spend_pub" in fields:
        return ViewKey(scalar("view"), CurvePoint.from_hex(fields["spend_pub"]))
    if "view_pub" in fields and "spend_pub" in fields:
        return StealthAddress(CurvePoint.from_hex(fields["view_pub"]), CurvePoint.from_hex(fields["spend_pub"]))
    raise ValueError("key file needs spend:, view:+spend_pub:, or view_pub:+spend_pub:")


def read_keys(path: str | Path) -> StealthIdentity | ViewKey | StealthAddress:
    return parse_keys(Path(path).read_text(encoding="utf-8"))


def write_keys(identity: StealthIdentity | ViewKey | StealthAddress, path: str | Path) -> None:
    Path(path).write_text(format_keys(identity), encoding="utf-8")
