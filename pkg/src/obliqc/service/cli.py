"""``obliqc`` command line: server, client pipeline and benchmarks."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..codec import DEFAULT_CONFIG, decode_raw
from ..errors import (
    ObliqcError,
    ShapeMismatch,
    StaleKeyEpoch,
    WidthMismatch,
)
from ..oblivious import BACKENDS, get_backend
from ..protocol import Capabilities, MsgKind, read_capture, unpack_envelope, write_capture
from ..rules import RULE_IDS, RuleSpec
from .client import (
    ConnectionFailed,
    QCClient,
    QCResult,
    ServerError,
    decrypt_response,
    eval_request_message,
    hello_message,
    load_keys,
    save_keys,
    setup_messages,
)
from .samples import read_samples
from .server import QCServer, ServerConfig, load_catalog, parse_addr, server_run

EXIT_OK, EXIT_ERROR, EXIT_CONNECTION, EXIT_EPOCH, EXIT_SHAPE = 0, 1, 2, 3, 4

# Catalog used by an embedded server when none is given: one target for every rule.
DEFAULT_CATALOG = {r: RuleSpec(r, "50.00", "2.00") for r in RULE_IDS}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConnectionError):
        return EXIT_CONNECTION
    if isinstance(exc, StaleKeyEpoch):
        return EXIT_EPOCH
    if isinstance(exc, (ShapeMismatch, WidthMismatch)):
        return EXIT_SHAPE
    if isinstance(exc, ServerError):
        return {"stale_epoch": EXIT_EPOCH, "shape_mismatch": EXIT_SHAPE}.get(exc.code, EXIT_ERROR)
    return EXIT_ERROR


def format_result(r: QCResult) -> str:
    if r.rule_id == "R3":
        flags = ",".join(str(f) for f in r.row_flags)
        return f"SCORE:{decode_raw(r.score_raw, DEFAULT_CONFIG)} FLAGS:{flags}"
    return f"FAIL:{r.rule_id}" if r.flag else "PASS"


def result_json(r: QCResult, index: int) -> dict:
    if r.rule_id == "R3":
        return {"index": index, "score": str(decode_raw(r.score_raw, DEFAULT_CONFIG)),
                "row_flags": list(r.row_flags)}
    return {"index": index, "verdict": format_result(r)}


def render(results, rule_id: str, as_json: bool) -> str:
    if as_json:
        return json.dumps({"rule": rule_id,
                           "results": [result_json(r, i) for i, r in enumerate(results)]})
    return "\n".join(format_result(r) for r in results)


def _widths(args, rule_id):
    if args.width:
        return (args.width,)
    # R3 dispersion sums need the wider register for any useful matrix size
    return (32,) if rule_id == "R3" else (16, 32)


# -- commands ---------------------------------------------------------------

def cmd_server(args) -> int:
    cfg = ServerConfig(addr=args.addr, backend=args.backend, catalog=args.catalog,
                       workers=args.workers or (os.cpu_count() or 1),
                       key_modes=tuple(args.key_mode.split(",")),
                       widths=tuple(int(w) for w in args.widths.split(",")),
                       cadence=args.cadence,
                       rule_specs=None if args.catalog else DEFAULT_CATALOG)

    def ready(addr):
        print(f"listening on {addr}", flush=True)

    return server_run(cfg, ready)


def cmd_keygen(args) -> int:
    backend = get_backend(args.backend)
    keys = backend.keygen(args.width or 16)
    save_keys(args.out, keys)
    print(f"keys written to {args.out} (session {keys.session_id:#x})")
    return EXIT_OK


def cmd_encrypt(args) -> int:
    backend = get_backend(args.backend)
    keys = load_keys(args.keys, backend)
    cfg = DEFAULT_CONFIG.with_width(keys.width)
    raw = read_samples(args.input, args.rule, cfg)
    caps = Capabilities((backend.name,), (keys.width,), ("same",), None)
    msgs = [hello_message(caps), *setup_messages(keys)]
    step = args.batch_size or raw.shape[0]
    for start in range(0, raw.shape[0], step):
        msgs.append(eval_request_message(backend, keys, cfg, args.rule, raw[start:start + step]))
    n = write_capture(args.out, msgs)
    print(f"{len(msgs)} frames ({n} bytes) written to {args.out}")
    return EXIT_OK


def cmd_submit(args) -> int:
    import socket

    from ..protocol import TransferLedger, UP, Channel

    frames = read_capture(args.input)
    if not frames or frames[0].kind != MsgKind.HELLO:
        raise ObliqcError(f"{args.input}: request capture must start with HELLO")
    try:
        sock = socket.create_connection(parse_addr(args.addr), timeout=60)
    except OSError as exc:
        raise ConnectionFailed(f"cannot reach {args.addr}: {exc}") from exc
    chan = Channel(sock, TransferLedger(), outgoing=UP)
    replies = []
    try:
        for msg in frames:
            chan.send(msg)
            if msg.kind in (MsgKind.HELLO, MsgKind.EVAL_REQUEST):
                reply = chan.recv()
                if reply is None:
                    raise ConnectionFailed("server closed the connection")
                replies.append(reply)
                if reply.kind == MsgKind.ERROR:
                    meta, _ = unpack_envelope(reply.payload)
                    write_capture(args.out, replies)
                    raise ServerError(meta["code"], meta["message"])
    except OSError as exc:
        raise ConnectionFailed(f"connection lost: {exc}") from exc
    finally:
        chan.close()
    write_capture(args.out, replies)
    print(f"{len(replies) - 1} responses written to {args.out}")
    return EXIT_OK


def cmd_decrypt(args) -> int:
    backend = get_backend(args.backend)
    keys = load_keys(args.keys, backend)
    results, rule_id = [], None
    for msg in read_capture(args.input):
        if msg.kind == MsgKind.HELLO:
            continue
        part = decrypt_response(backend, keys, msg)
        rule_id = part[0].rule_id if part else rule_id
        results += part
    print(render(results, rule_id or "", args.json))
    return EXIT_OK


def run_qc(addr, rule_id, raw, backend="reference", widths=(16, 32), key_mode="same",
           batch_size=None, capture=None, cadence=None):
    with QCClient(addr, backend, widths, key_mode, cadence, capture) as client:
        return client.evaluate(rule_id, raw, batch_size)


def cmd_qc_run(args) -> int:
    widths = _widths(args, args.rule)
    cfg = DEFAULT_CONFIG.with_width(widths[0])
    raw = read_samples(args.input, args.rule, cfg)
    capture = open(args.capture, "wb") if args.capture else None
    embedded = None
    try:
        addr = args.addr
        if addr is None:
            catalog = load_catalog(args.catalog) if args.catalog else DEFAULT_CATALOG
            embedded = QCServer(ServerConfig(addr="127.0.0.1:0", backend=args.backend,
                                             rule_specs=catalog, workers=1)).start()
            addr = embedded.address
        results = run_qc(addr, args.rule, raw, args.backend, widths, args.key_mode,
                         args.batch_size, capture, args.cadence)
    finally:
        if capture is not None:
            capture.close()
        if embedded is not None:
            embedded.shutdown()
    print(render(results, args.rule, args.json))
    return EXIT_OK


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def cmd_bench(args) -> int:
    from .. import bench

    def out_dir() -> Path:
        return Path(args.out_dir) if getattr(args, "out_dir", None) else bench.run_dir()

    if args.bench_cmd == "sweep-batch":
        recs = bench.sweep_batch(args.rule, _ints(args.sizes), args.backend,
                                 length=args.length, repetitions=args.reps,
                                 gate_cost_us=args.gate_cost_us, lane_cost_us=args.lane_cost_us)
        path = bench.report(recs, "csv", out_dir() / f"sweep-batch-{args.rule}.csv")
        for b, t in bench.amortized_per_item(recs).items():
            print(f"batch {b}: {t / 1e3:.2f} us/item")
    elif args.bench_cmd == "abs":
        recs = bench.sweep_abs_variants(samples=args.samples, repetitions=args.reps,
                                        gate_cost_us=args.gate_cost_us)
        path = bench.report(recs, "csv", out_dir() / "abs-variants.csv")
        for r in sorted(recs, key=lambda r: r.median_ns):
            print(f"{r.variant}: {r.gates} gates, median {r.median_ns / 1e3:.1f} us")
    elif args.bench_cmd == "parallel":
        shapes = [tuple(int(d) for d in s.split("x")) for s in args.shapes.split(",")]
        recs = bench.sweep_parallel(shapes, _ints(args.workers), args.gate_cost_us, args.reps)
        path = bench.report(recs, "csv", out_dir() / "parallel.csv")
        for r in recs:
            print(f"{r.rows}x{r.cols} workers={r.workers}: speedup {r.speedup:.2f} "
                  f"cpu {r.cpu_percent}%")
    else:
        recs = bench.from_csv(Path(args.input).read_text())
        suffix = "md" if args.format == "markdown" else "csv"
        target = args.out or out_dir() / f"{Path(args.input).stem}.{suffix}"
        path = bench.report(recs, args.format, target)
    print(f"wrote {path}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obliqc", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, addr=True):
        if addr:
            sp.add_argument("--addr", default=None, help="server host:port")
        sp.add_argument("--backend", choices=sorted(BACKENDS), default="reference")
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    s = sub.add_parser("server", help="run the evaluation server")
    s.add_argument("--addr", default="127.0.0.1:7878")
    s.add_argument("--backend", choices=sorted(BACKENDS), default="reference")
    s.add_argument("--catalog", help="rule catalog JSON (default: built-in targets)")
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--key-mode", default="same,diff", help="accepted key modes, preferred first")
    s.add_argument("--widths", default="16,32", help="accepted widths, preferred first")
    s.add_argument("--cadence", type=int, default=None, help="diff-key requests per epoch")
    s.set_defaults(fn=cmd_server)

    s = sub.add_parser("keygen", help="generate a session key set")
    common(s, addr=False)
    s.add_argument("--width", type=int, choices=(16, 32), default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_keygen)

    s = sub.add_parser("encrypt", help="encrypt samples into a request capture")
    common(s, addr=False)
    s.add_argument("--keys", required=True)
    s.add_argument("--rule", choices=RULE_IDS, required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--batch-size", type=int, default=None)
    s.set_defaults(fn=cmd_encrypt)

    s = sub.add_parser("submit", help="send a request capture, save the responses")
    s.add_argument("--addr", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_submit)

    s = sub.add_parser("decrypt", help="decrypt a response capture")
    common(s, addr=False)
    s.add_argument("--keys", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.set_defaults(fn=cmd_decrypt)

    qc = sub.add_parser("qc", help="one-shot QC pipeline").add_subparsers(dest="qc_cmd",
                                                                         required=True)
    s = qc.add_parser("run", help="keygen, encrypt, submit, decrypt and print verdicts")
    common(s)
    s.add_argument("--rule", choices=RULE_IDS, required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--width", type=int, choices=(16, 32), default=None)
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--key-mode", choices=("same", "diff"), default="same")
    s.add_argument("--cadence", type=int, default=None)
    s.add_argument("--capture", default=None, help="write every frame to this .oblq file")
    s.add_argument("--catalog", default=None, help="catalog for the embedded server")
    s.set_defaults(fn=cmd_qc_run)

    b = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="bench_cmd", required=True)
    for name in ("sweep-batch", "abs", "parallel", "report"):
        s = b.add_parser(name)
        s.add_argument("--out-dir", default=None)
        s.add_argument("--reps", type=int, default=5)
        s.set_defaults(fn=cmd_bench)
        if name == "sweep-batch":
            s.add_argument("--rule", choices=RULE_IDS, default="R1")
            s.add_argument("--sizes", default="1,64,128,1024")
            s.add_argument("--length", type=int, default=8)
            s.add_argument("--backend", choices=sorted(BACKENDS), default="reference")
            s.add_argument("--gate-cost-us", type=float, default=100.0)
            s.add_argument("--lane-cost-us", type=float, default=25.0)
        elif name == "abs":
            s.add_argument("--samples", type=int, default=64)
            s.add_argument("--gate-cost-us", type=float, default=20.0)
        elif name == "parallel":
            s.add_argument("--shapes", default="16x64")
            s.add_argument("--workers", default="1,2,4,8,16")
            s.add_argument("--gate-cost-us", type=float, default=10.0)
        else:
            s.add_argument("--in", dest="input", required=True)
            s.add_argument("--format", choices=("csv", "markdown"), default="markdown")
            s.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("OBLIQC_LOG", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ObliqcError, OSError, ValueError) as exc:
        print(f"obliqc: {exc}", file=sys.stderr)
        return exit_code(exc)
