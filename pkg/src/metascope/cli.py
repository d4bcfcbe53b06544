"""``metascope`` command line.

Data goes to stdout (or ``--out``); diagnostics go to stderr. Exit status is
0 on success, 1 on a domain error, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence, TextIO

from . import __version__
from .analytics import aggregate, render_report, share_report
from .ingest import (
    FileSource,
    RateLimiter,
    fetch_range,
    format_corpus,
    format_timestamp,
    load_config,
    read_corpus,
    retry_from_config,
    source_from_config,
    write_corpus,
)
from .metadata import DEFAULT_PROFILES, decode_ascii, extract_op_return, load_profiles, validate_payload_size
from .registry import classify_payload, default_registry, load_registry
from .script import classify_script_bytes, parse_script, parse_transaction, MalformedScript
from .stealth import (
    CandidateOutput,
    StealthAddress,
    StealthIdentity,
    ViewKey,
    keygen,
    read_keys,
    scan_payments,
    send_stealth,
    view_only_scan,
    write_keys,
)

log = logging.getLogger("metascope")


class UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config (default: $METASCOPE_CONFIG)")
    common.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), help="output format (default: csv)")

    parser = argparse.ArgumentParser(prog="metascope", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common], allow_abbrev=False)

    p = add("parse", "decode raw transactions (hex, one per line)")
    p.add_argument("--input", metavar="PATH", required=True, help="hex transactions, '-' for stdin")

    p = add("extract", "list OP_RETURN payloads of raw transactions")
    p.add_argument("--input", metavar="PATH", required=True, help="hex transactions, '-' for stdin")
    p.add_argument("--profile", metavar="NAME", help="size profile (default: btc)")
    p.add_argument("--profiles", metavar="PATH", help="size-profile file")

    for name, help_ in (("classify", "attribute each corpus record to a protocol"),
                        ("report", "time-evolution or share report of a corpus")):
        p = add(name, help_)
        p.add_argument("--registry", metavar="PATH", help="registry file (default: shipped registry)")
        p.add_argument("--corpus", metavar="PATH", required=True)
    p.add_argument("--period", choices=("year", "month"))
    p.add_argument("--plotdata", action="store_true", help="emit one (x, y) series per verdict")
    p.add_argument("--shares", action="store_true", help="protocol share report instead of time series")

    p = add("stealth-keygen", "create a stealth identity")
    p.add_argument("--keys", metavar="PATH", required=True, help="where to write the private key file")

    p = add("stealth-send", "derive a one-time address and OP_RETURN payload")
    p.add_argument("--keys", metavar="PATH", required=True, help="recipient key file (public keys suffice)")

    p = add("stealth-scan", "find stealth payments to an identity in a scanner corpus")
    p.add_argument("--keys", metavar="PATH", required=True)
    p.add_argument("--corpus", metavar="PATH", required=True)

    p = add("fetch", "download OP_RETURN records for a block range")
    p.add_argument("--from-block", metavar="N", type=int, required=True)
    p.add_argument("--to-block", metavar="N", type=int, required=True)
    p.add_argument("--corpus", metavar="PATH", help="serve this corpus file instead of the configured source")
    return parser


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _table(header: list[str], rows: list[Sequence], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([dict(zip(header, r)) for r in rows], indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_hex_lines(path: str, stdin: TextIO) -> list[bytes]:
    text = stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(bytes.fromhex(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not hex") from None
    return out


def _registry(args, cfg):
    path = args.registry or cfg.get("registry")
    return load_registry(path) if path else default_registry()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _script_asm(raw: bytes) -> str:
    try:
        return str(parse_script(raw))
    except MalformedScript:
        return "<malformed>"


def cmd_parse(args, cfg, stdin):
    txs = [parse_transaction(raw) for raw in _read_hex_lines(args.input, stdin)]
    if args.format == "csv":
        rows = [(tx.txid, i, o.value, classify_script_bytes(o.script_pubkey).value, o.script_pubkey.hex())
                for tx in txs for i, o in enumerate(tx.outputs)]
        return _table(["txid", "vout", "value", "type", "script_hex"], rows, "csv")
    docs = [{
        "txid": tx.txid,
        "version": tx.version,
        "locktime": tx.locktime,
        "inputs": [{"prev_txid": i.prev_txid[::-1].hex(), "prev_index": i.prev_index,
                    "script_hex": i.script_sig.hex(), "sequence": i.sequence} for i in tx.inputs],
        "outputs": [{"value": o.value, "script_hex": o.script_pubkey.hex(),
                     "type": classify_script_bytes(o.script_pubkey).value,
                     "asm": _script_asm(o.script_pubkey)} for o in tx.outputs],
    } for tx in txs]
    return json.dumps(docs, indent=2, sort_keys=True) + "\n"


def cmd_extract(args, cfg, stdin):
    profiles = dict(DEFAULT_PROFILES)
    if args.profiles or cfg.get("profiles"):
        profiles.update(load_profiles(args.profiles or cfg["profiles"]))
    name = args.profile or cfg.get("profile", "btc")
    if name not in profiles:
        raise UsageError(f"unknown profile {name!r} (known: {', '.join(sorted(profiles))})")
    profile = profiles[name]
    rows = []
    for raw in _read_hex_lines(args.input, stdin):
        for p in extract_op_return(parse_transaction(raw)):
            check = validate_payload_size(p, profile)
            rows.append((p.txid, p.output_index, "" if p.push_opcode is None else f"{p.push_opcode:02x}",
                         len(p.data), "accept" if check else "reject", p.data.hex(), decode_ascii(p)))
    return _table(["txid", "vout", "push_opcode", "size", profile.name, "data_hex", "ascii"], rows,
                  args.format or "csv")


def cmd_classify(args, cfg, stdin):
    registry = _registry(args, cfg)
    rows = []
    for rec in read_corpus(args.corpus):
        c = classify_payload(rec.payload, registry)
        rows.append((format_timestamp(rec.timestamp), rec.block_height, rec.txid, c.verdict.value, c.label))
    return _table(["timestamp", "block", "txid", "verdict", "protocol"], rows, args.format or "csv")


def cmd_report(args, cfg, stdin):
    registry = _registry(args, cfg)
    classified = [(classify_payload(r.payload, registry), r.timestamp) for r in read_corpus(args.corpus)]
    if args.shares:
        if args.plotdata:
            raise UsageError("--plotdata applies to time series, not --shares")
        report = share_report(classified)
    else:
        report = aggregate(classified, args.period or cfg.get("period", "year"))
    return render_report(report, args.format or "csv", args.plotdata)


def cmd_stealth_keygen(args, cfg, stdin):
    ident = keygen()
    path = Path(args.keys)
    write_keys(ident, path)
    write_keys(ident.address, path.with_name(path.name + ".pub"))
    log.info("wrote %s and %s.pub", path, path)
    return _table(["view_pub", "spend_pub", "stealth_address"],
                  [(ident.view_public.hex(), ident.spend_public.hex(), ident.address.encode())],
                  args.format or "csv")


def _recipient(keys) -> StealthAddress:
    if isinstance(keys, StealthAddress):
        return keys
    if isinstance(keys, StealthIdentity):
        return keys.address
    raise UsageError("recipient key file needs view_pub: and spend_pub: (or the private keys)")


def cmd_stealth_send(args, cfg, stdin):
    if not args.out:
        raise UsageError("stealth-send needs --out DIR for the payload and address files")
    to = _recipient(read_keys(args.keys))
    pay = send_stealth(None, to.view_public, to.spend_public)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "payload.hex").write_text(pay.payload.raw_script.hex() + "\n", encoding="utf-8")
    (out / "address.hex").write_text(
        f"transfer_address: {pay.transfer_address.hex()}\n"
        f"p2pkh_script: {pay.output_script('p2pkh').hex()}\n", encoding="utf-8")
    log.info("wrote %s/payload.hex and %s/address.hex", out, out)
    return None


def cmd_stealth_scan(args, cfg, stdin):
    keys = read_keys(args.keys)
    stream = []
    for rec in read_corpus(args.corpus):
        cands = [CandidateOutput(rec.output_script, rec.txid)] if rec.output_script else []
        stream.append((rec.payload, cands))
    if isinstance(keys, StealthIdentity) and keys.view_private is not None:
        found = scan_payments(stream, keys)
    elif isinstance(keys, StealthIdentity):
        raise UsageError("key file has no view: key; scanning needs one")
    elif isinstance(keys, ViewKey):
        found = view_only_scan(stream, keys.view_private, keys.spend_public)
    else:
        raise UsageError("public keys alone cannot scan; need view: (and spend: to derive spend keys)")
    rows = [(d.output.ref, d.output.script.hex(), d.transfer_address.hex(),
             "" if d.spend_key is None else f"{d.spend_key:064x}") for d in found]
    log.info("%d detections", len(found))
    return _table(["txid", "output_script_hex", "transfer_address", "spend_key"], rows, args.format or "csv")


def cmd_fetch(args, cfg, stdin):
    if args.from_block > args.to_block:
        raise UsageError("--from-block must not exceed --to-block")
    source = FileSource(args.corpus) if args.corpus else source_from_config(cfg)
    limiter = RateLimiter(float(cfg.get("rate_limit", 1.0)))
    records = list(fetch_range(source, args.from_block, args.to_block, retry_from_config(cfg), limiter=limiter))
    if args.out:
        write_corpus(records, args.out)
        log.info("wrote %d records to %s", len(records), args.out)
        return None
    return format_corpus(records)


COMMANDS = {
    "parse": cmd_parse,
    "extract": cmd_extract,
    "classify": cmd_classify,
    "report": cmd_report,
    "stealth-keygen": cmd_stealth_keygen,
    "stealth-send": cmd_stealth_send,
    "stealth-scan": cmd_stealth_scan,
    "fetch": cmd_fetch,
}


def run(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None,
        stderr: Optional[TextIO] = None, stdin: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    stdin = stdin or sys.stdin
    parser = _build_parser()
    handler = logging.StreamHandler(stderr)
    handler.setFormatter(logging.Formatter("metascope: %(levelname)s: %(message)s"))
    log.addHandler(handler)
    old_level = log.level
    log.setLevel(logging.INFO)
    try:
        try:
            real_out, real_err = sys.stdout, sys.stderr
            sys.stdout, sys.stderr = stdout, stderr  # argparse prints help/usage here
            try:
                args = parser.parse_args(argv)
            finally:
                sys.stdout, sys.stderr = real_out, real_err
        except SystemExit as exc:
            return int(exc.code or 0)
        try:
            cfg = load_config(args.config)
            text = COMMANDS[args.command](args, cfg, stdin)
        except UsageError as exc:
            parser.print_usage(stderr)
            print(f"metascope: error: {exc}", file=stderr)
            return 2
        except Exception as exc:  # domain errors of every module; never a traceback
            print(f"metascope: error: {exc}", file=stderr)
            return 1
        if text is not None:
            if args.out and args.command != "fetch":
                with open(args.out, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
            else:
                stdout.write(text)
        return 0
    finally:
        log.removeHandler(handler)
        log.setLevel(old_level)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
