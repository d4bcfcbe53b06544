"""Metadata corpora: CSV files and explorer-API sources.

Corpus files are UTF-8 CSV with the header ``timestamp,block,txid,script_hex``
(RFC 3339 UTC timestamps, display-order txids, null-data script as hex). A
fifth ``output_script_hex`` column, used by the stealth scanner, holds the
locking script of the output paying alongside the OP_RETURN.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional, Protocol

from .metadata import OpReturnPayload, decode_ascii, payload_from_script
from .script import MalformedScript

log = logging.getLogger(__name__)

CORPUS_HEADER = ["timestamp", "block", "txid", "script_hex"]
SCAN_COLUMN = "output_script_hex"

# informational: first and last block of the 2013-2017 observation window
OBSERVED_FIRST_BLOCK = 228596
OBSERVED_LAST_BLOCK = 474451


class CorpusParseError(ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


class SourceError(Exception):
    """Transient failure talking to a data source; retried."""


class SourceUnreachable(SourceError):
    """Retries exhausted."""


class RangeTooLarge(Exception):
    pass


class MalformedResponse(Exception):
    pass


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no UTC offset")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class MetadataRecord:
    timestamp: datetime
    block_height: int
    txid: str
    script: bytes
    output_script: Optional[bytes] = None
    lineno: Optional[int] = field(default=None, compare=False)

    @property
    def payload(self) -> OpReturnPayload:
        return payload_from_script(self.script, self.txid)

    @property
    def ascii(self) -> str:
        return decode_ascii(self.payload)

    @classmethod
    def build(cls, timestamp: datetime | str, block_height: int, txid: str, script: bytes | str,
              output_script: bytes | str | None = None, lineno: Optional[int] = None) -> "MetadataRecord":
        """Validate and normalise one row; raises ValueError on bad fields."""
        if isinstance(timestamp, str):
            timestamp = parse_timestamp(timestamp)
        elif timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware")
        block_height = int(block_height)
        if block_height < 0:
            raise ValueError("negative block height")
        txid = txid.strip().lower()
        if len(txid) != 64 or not all(c in "0123456789abcdef" for c in txid):
            raise ValueError(f"txid must be 64 hex chars, got {txid!r}")
        if isinstance(script, str):
            script = bytes.fromhex(script.strip())
        if isinstance(output_script, str):
            output_script = bytes.fromhex(output_script.strip()) if output_script.strip() else None
        payload_from_script(script)  # 0x6a check and push decoding
        return cls(timestamp.astimezone(timezone.utc), block_height, txid, bytes(script),
                   output_script, lineno)


def read_corpus(path: str | Path) -> Iterator[MetadataRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        yield from parse_corpus(fh)


def parse_corpus(lines: Iterable[str]) -> Iterator[MetadataRecord]:
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        return
    header = [h.strip() for h in header]
    if header not in (CORPUS_HEADER, CORPUS_HEADER + [SCAN_COLUMN]):
        raise CorpusParseError(1, f"unexpected header {','.join(header)!r}")
    width = len(header)
    for row in reader:
        lineno = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise CorpusParseError(lineno, f"expected {width} fields, got {len(row)}")
        try:
            yield MetadataRecord.build(*row, lineno=lineno)
        except (ValueError, MalformedScript) as exc:
            raise CorpusParseError(lineno, str(exc)) from None


def format_corpus(records: Iterable[MetadataRecord]) -> str:
    records = list(records)
    scan = any(r.output_script is not None for r in records)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CORPUS_HEADER + ([SCAN_COLUMN] if scan else []))
    for r in records:
        row = [format_timestamp(r.timestamp), r.block_height, r.txid, r.script.hex()]
        if scan:
            row.append(r.output_script.hex() if r.output_script else "")
        writer.writerow(row)
    return buf.getvalue()


def write_corpus(records: Iterable[MetadataRecord], path: str | Path) -> int:
    """Write records in corpus format; returns the row count."""
    records = list(records)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_corpus(records))
    return len(records)


# ---------------------------------------------------------------------------
# Data sources
# ---------------------------------------------------------------------------

@dataclass
class Page:
    records: list[MetadataRecord]
    next_cursor: Optional[Any] = None


class DataSource(Protocol):
    def latest_block(self) -> int: ...

    def fetch_page(self, from_block: int, to_block: int, cursor: Optional[Any] = None) -> Page: ...


class FileSource:
    """Serves a local corpus file as if it were an API, in pages."""

    def __init__(self, path: str | Path, page_size: int = 1000):
        self.path = Path(path)
        self.page_size = page_size

    def _records(self) -> list[MetadataRecord]:
        return sorted(read_corpus(self.path), key=lambda r: r.block_height)

    def latest_block(self) -> int:
        return max((r.block_height for r in self._records()), default=0)

    def fetch_page(self, from_block: int, to_block: int, cursor: Optional[int] = None) -> Page:
        rows = [r for r in self._records() if from_block <= r.block_height <= to_block]
        start = cursor or 0
        chunk = rows[start:start + self.page_size]
        more = start + self.page_size < len(rows)
        return Page(chunk, start + self.page_size if more else None)


@dataclass
class RetryPolicy:
    max_retries: int = 5
    base_delay: float = 0.5
    factor: float = 2.0

    def delay(self, attempt: int) -> float:
        return self.base_delay * self.factor ** attempt


class RateLimiter:
    """Spaces calls at least ``1/rate`` seconds apart."""

    def __init__(self, rate: float = 1.0, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next is not None and now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


def call_with_retry(fn: Callable[[], Any], policy: RetryPolicy, *,
                    limiter: Optional[RateLimiter] = None,
                    sleep: Callable[[float], None] = time.sleep, what: str = "request") -> Any:
    for attempt in range(policy.max_retries + 1):
        if limiter is not None:
            limiter.wait()
        try:
            return fn()
        except SourceError as exc:
            if attempt == policy.max_retries:
                raise SourceUnreachable(f"{what} failed after {attempt + 1} attempts: {exc}") from exc
            delay = policy.delay(attempt)
            log.warning("retry %d/%d for %s in %.2fs: %s",
                        attempt + 1, policy.max_retries, what, delay, exc)
            sleep(delay)


def latest_block(source: DataSource, policy: Optional[RetryPolicy] = None, *,
                 limiter: Optional[RateLimiter] = None,
                 sleep: Callable[[float], None] = time.sleep) -> int:
    height = call_with_retry(source.latest_block, policy or RetryPolicy(),
                             limiter=limiter, sleep=sleep, what="latest block")
    if not isinstance(height, int) or isinstance(height, bool) or height < 0:
        raise MalformedResponse(f"bad block height {height!r}")
    return height


def fetch_range(source: DataSource, from_block: int, to_block: int,
                policy: Optional[RetryPolicy] = None, *,
                limiter: Optional[RateLimiter] = None,
                sleep: Callable[[float], None] = time.sleep) -> Iterator[MetadataRecord]:
    """Yield every OP_RETURN record in ``[from_block, to_block]`` in block order."""
    if from_block > to_block:
        raise ValueError(f"from_block {from_block} > to_block {to_block}")
    policy = policy or RetryPolicy()
    cursor = None
    last_height = from_block
    seen_cursors = set()
    while True:
        page = call_with_retry(lambda: source.fetch_page(from_block, to_block, cursor), policy,
                               limiter=limiter, sleep=sleep,
                               what=f"blocks {from_block}-{to_block} page {cursor}")
        for rec in page.records:
            if not from_block <= rec.block_height <= to_block:
                raise MalformedResponse(f"record at block {rec.block_height} outside requested range")
            if rec.block_height < last_height:
                raise MalformedResponse(
                    f"block order violated: {rec.block_height} after {last_height}")
            last_height = rec.block_height
            yield rec
        if page.next_cursor is None:
            return
        if page.next_cursor in seen_cursors:
            raise MalformedResponse(f"pagination cursor {page.next_cursor!r} repeated")
        seen_cursors.add(page.next_cursor)
        cursor = page.next_cursor


# ---------------------------------------------------------------------------
# Generic HTTP JSON source
# ---------------------------------------------------------------------------

@dataclass
class HttpSourceConfig:
    """Endpoint layout of an explorer API; everything is configuration.

    ``range_path`` may use ``{from_block}``, ``{to_block}`` and ``{cursor}``.
    ``fields`` maps record attributes to response keys.
    """

    base_url: str
    latest_path: str = "/latest"
    range_path: str = "/op_returns?from={from_block}&to={to_block}&cursor={cursor}"
    height_key: str = "height"
    records_key: str = "records"
    cursor_key: str = "next"
    fields: dict = field(default_factory=lambda: {
        "timestamp": "timestamp", "block": "block", "txid": "txid", "script_hex": "script_hex",
    })
    auth_header: Optional[str] = None
    auth_value: Optional[str] = None
    max_range: Optional[int] = None
    timeout: float = 30.0

    @classmethod
    def from_dict(cls, d: dict) -> "HttpSourceConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class HttpSource:
    def __init__(self, config: HttpSourceConfig, session=None):
        import requests

        self.config = config
        self._requests = requests
        self.session = session or requests.Session()
        if config.auth_header:
            self.session.headers[config.auth_header] = config.auth_value or ""

    def _get(self, path: str) -> Any:
        url = self.config.base_url.rstrip("/") + path
        try:
            resp = self.session.get(url, timeout=self.config.timeout)
        except self._requests.RequestException as exc:
            raise SourceError(str(exc)) from exc
        if resp.status_code == 413:
            raise RangeTooLarge(f"{url}: source refused the range")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise SourceError(f"{url}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise MalformedResponse(f"{url}: HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"{url}: body is not JSON") from exc

    def latest_block(self) -> int:
        body = self._get(self.config.latest_path)
        try:
            return int(body[self.config.height_key] if isinstance(body, dict) else body)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"no height in response: {exc}") from None

    def fetch_page(self, from_block: int, to_block: int, cursor: Optional[Any] = None) -> Page:
        cfg = self.config
        if cfg.max_range is not None and to_block - from_block + 1 > cfg.max_range:
            raise RangeTooLarge(f"range of {to_block - from_block + 1} blocks exceeds {cfg.max_range}")
        body = self._get(cfg.range_path.format(
            from_block=from_block, to_block=to_block, cursor="" if cursor is None else cursor))
        try:
            items = body[cfg.records_key]
            f = cfg.fields
            records = [
                MetadataRecord.build(it[f["timestamp"]], it[f["block"]], it[f["txid"]], it[f["script_hex"]])
                for it in items
            ]
        except (KeyError, TypeError, ValueError, MalformedScript) as exc:
            raise MalformedResponse(f"bad range response: {exc}") from None
        return Page(records, body.get(cfg.cursor_key) or None)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

CONFIG_ENV = "METASCOPE_CONFIG"


def load_config(path: str | Path | None = None) -> dict:
    """Load the JSON config from *path*, else ``$METASCOPE_CONFIG``, else ``{}``."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def source_from_config(cfg: dict) -> DataSource:
    src = cfg.get("source") or {}
    kind = src.get("type", "http" if "base_url" in src else "file")
    if kind == "file":
        if "path" not in src:
            raise ValueError("file source needs 'path'")
        return FileSource(src["path"], int(src.get("page_size", 1000)))
    if kind == "http":
        return HttpSource(HttpSourceConfig.from_dict(src))
    raise ValueError(f"unknown source type {kind!r}")


def retry_from_config(cfg: dict) -> RetryPolicy:
    r = cfg.get("retry") or {}
    return RetryPolicy(int(r.get("max_retries", 5)), float(r.get("base_delay", 0.5)),
                       float(r.get("factor", 2.0)))
