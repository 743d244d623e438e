import io
import json
import logging
import re
import signal
import socket
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from obliqc import oracle
from obliqc.codec import DEFAULT_CONFIG
from obliqc.errors import UnknownSession
from obliqc.oblivious import ReferenceBackend
from obliqc.protocol import Capabilities, MsgKind, read_frame, serialize, write_capture
from obliqc.rules import RuleSpec
from obliqc.service import QCClient, QCServer, ServerConfig, ServerError, read_samples, write_samples
from obliqc.service.cli import DEFAULT_CATALOG, main
from obliqc.service.client import (
    decrypt_response,
    eval_request_message,
    hello_message,
    rotate_message,
    setup_messages,
)

CATALOG = {"R1": RuleSpec("R1", "50.00", "2.00"), "R2": RuleSpec("R2", "50.00", "2.00"),
           "R3": RuleSpec("R3", "50.00", "2.00")}


@pytest.fixture
def server():
    with QCServer(ServerConfig(addr="127.0.0.1:0", rule_specs=CATALOG, workers=2)) as srv:
        yield srv


@pytest.fixture
def masked_server():
    with QCServer(ServerConfig(addr="127.0.0.1:0", backend="masked", rule_specs=CATALOG,
                               workers=1)) as srv:
        yield srv


def windows(rng, b, n, lo=4300, hi=5700):
    return rng.integers(lo, hi, (b, n))


def expected(rule_id, raw):
    return [oracle.evaluate(rule_id, row / 100, 50.0, 2.0) for row in raw]


def test_server_process_start_hello_shutdown():
    p = subprocess.Popen([sys.executable, "-m", "obliqc", "server", "--addr", "127.0.0.1:0"],
                         stdout=subprocess.PIPE, text=True)
    try:
        line = p.stdout.readline()
        host, port = re.search(r"listening on ([\d.]+):(\d+)", line).groups()
        with socket.create_connection((host, int(port))) as s:
            s.sendall(serialize(hello_message(Capabilities(("reference",), (16,)))))
            reply = read_frame(s.makefile("rb"))
            assert reply.kind == MsgKind.HELLO
        p.send_signal(signal.SIGTERM)
        assert p.wait(timeout=10) == 0
    finally:
        p.kill()


def test_port_busy_exits_nonzero(server, capsys):
    assert main(["server", "--addr", server.address]) == 1
    assert "obliqc:" in capsys.readouterr().err


def test_bad_config():
    with pytest.raises(ValueError):
        ServerConfig(workers=0)


def test_unknown_rule_keeps_session(server):
    with QCClient(server.address) as c:
        c._chan.send(eval_request_message(c.backend, c.keys, c.codec, "R1",
                                          np.array([[5000, 5000]])))
        ok = c._recv()
        assert ok.kind == MsgKind.EVAL_RESPONSE
        srv_catalog = server.catalog
        server.catalog = {"R2": srv_catalog["R2"]}
        try:
            with pytest.raises(ServerError) as e:
                c.evaluate("R1", [[5000, 5000]])
            assert e.value.code == "unknown_rule"
        finally:
            server.catalog = srv_catalog
        assert [r.flag for r in c.evaluate("R1", [[5000, 5601]])] == [1]


def test_round_trip_all_rules(server):
    rng = np.random.default_rng(0)
    with QCClient(server.address, widths=(32,)) as c:
        for rule in ("R1", "R2"):
            raw = windows(rng, 40, 6)
            assert [r.flag for r in c.evaluate(rule, raw, batch_size=16)] == expected(rule, raw)
        m = rng.integers(4000, 6000, (7, 3, 5))
        got = c.evaluate("R3", m)
        for r, mat in zip(got, m):
            score, flags = oracle.rule3(mat / 100, 50.0, 2.0)
            assert (r.score_raw, list(r.row_flags)) == (round(score * 100), flags)


def test_concurrent_sessions_match_oracle(server):
    def session(seed):
        rng = np.random.default_rng(seed)
        with QCClient(server.address) as c:
            for _ in range(10):
                raw = windows(rng, 8, 5)
                if [r.flag for r in c.evaluate("R2", raw)] != expected("R2", raw):
                    return False
        return True

    with ThreadPoolExecutor(100) as ex:
        assert all(ex.map(session, range(100)))
    assert server.open_sessions == 0


def test_diff_key_mode_rotates_every_request(server):
    rng = np.random.default_rng(1)
    raw = windows(rng, 12, 4)
    with QCClient(server.address, key_mode="diff") as c:
        assert c.agreement.cadence == 1
        got = c.evaluate("R1", raw, batch_size=3)
        assert c.keys.key_epoch == 3
    assert [r.flag for r in got] == expected("R1", raw)


def test_server_rejects_exhausted_epoch(server):
    with QCClient(server.address, key_mode="diff") as c:
        c.evaluate("R1", [[5000]])
        c._chan.send(eval_request_message(c.backend, c.keys, c.codec, "R1", np.array([[5000]])))
        with pytest.raises(ServerError) as e:
            decrypt_response(c.backend, c.keys, c._recv())
        assert e.value.code == "stale_epoch"


def test_ledger_report_and_capture_oracle(server):
    capture = io.BytesIO()
    with QCClient(server.address, capture=capture) as c:
        c.evaluate("R1", [[5000, 5100]])
        sid = c.keys.session_id
        report = server.ledger_report(sid)
        summary = c.ledger.summary()
        assert report["total_up"] == summary["total_up"]
        assert report["total_down"] == summary["total_down"]
        assert summary["total_up"] + summary["total_down"] == len(capture.getvalue())
    deadline = time.monotonic() + 5
    while server.open_sessions and time.monotonic() < deadline:
        time.sleep(0.01)
    with pytest.raises(UnknownSession):
        server.ledger_report(sid)


def test_idle_session_memory_is_reclaimed(server):
    import psutil

    proc = psutil.Process()
    for _ in range(200):
        QCClient(server.address).connect().close()
    before = proc.memory_info().rss
    cycles = 10**4
    for _ in range(cycles):
        QCClient(server.address).connect().close()
    grown = max(0, proc.memory_info().rss - before)
    assert grown / cycles < 1 << 20
    deadline = time.time() + 5
    while server.open_sessions and time.time() < deadline:
        time.sleep(0.01)
    assert server.open_sessions == 0


def test_info_logs_hold_no_thresholds_or_samples(masked_server, caplog):
    sentinel = 5713
    with caplog.at_level(logging.DEBUG, logger="obliqc"):
        with QCClient(masked_server.address, backend="masked") as c:
            c.evaluate("R1", [[sentinel, sentinel]])
    text = "\n".join(r.getMessage() for r in caplog.records if r.levelno >= logging.INFO)
    for needle in ("5600", "4400", "56.00", "44.00", str(sentinel), "57.13"):
        assert not re.search(rf"\b{re.escape(needle)}\b", text)


# -- command line -----------------------------------------------------------

def test_qc_run_pass_fail_and_json(tmp_path, capsys):
    f = write_samples(tmp_path / "in.csv", [[50.0] * 8, [50.0] * 7 + [56.01]], "R1")
    assert main(["qc", "run", "--rule", "R1", "--in", str(f)]) == 0
    plain = capsys.readouterr().out.split()
    assert plain == ["PASS", "FAIL:R1"]
    assert main(["qc", "run", "--rule", "R1", "--in", str(f), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [r["verdict"] for r in doc["results"]] == plain


def test_qc_run_r3_score_format(tmp_path, capsys):
    f = write_samples(tmp_path / "m.csv", [[[50, 52, 48], [50, 50.5, 50.2]]], "R3")
    assert main(["qc", "run", "--rule", "R3", "--in", str(f)]) == 0
    assert capsys.readouterr().out.strip() == "SCORE:4.00 FLAGS:0,0"
    assert main(["qc", "run", "--rule", "R3", "--in", str(f), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["results"][0] == {"index": 0, "score": "4.00", "row_flags": [0, 0]}


def test_exit_code_connection(tmp_path):
    f = write_samples(tmp_path / "in.csv", [[50.0] * 2], "R1")
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    assert main(["qc", "run", "--rule", "R1", "--in", str(f), "--addr", f"127.0.0.1:{port}"]) == 2


def test_exit_code_shape(tmp_path):
    cat = tmp_path / "cat.json"
    cat.write_text(json.dumps({"rules": [{"rule": "R1", "mean": "50", "sd": "2", "window": 8}]}))
    f = write_samples(tmp_path / "in.csv", [[50.0] * 4], "R1")
    assert main(["qc", "run", "--rule", "R1", "--in", str(f), "--catalog", str(cat)]) == 4
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x3\n1,2\n")
    assert main(["qc", "run", "--rule", "R1", "--in", str(bad)]) == 4


def test_split_pipeline_and_stale_epoch(tmp_path, server, capsys):
    keys, req, resp = tmp_path / "k.json", tmp_path / "req.oblq", tmp_path / "resp.oblq"
    f = write_samples(tmp_path / "in.csv", [[50.0] * 3, [60.0, 50, 50]], "R1")
    assert main(["keygen", "--out", str(keys)]) == 0
    assert main(["encrypt", "--keys", str(keys), "--rule", "R1", "--in", str(f),
                 "--out", str(req), "--batch-size", "1"]) == 0
    assert main(["submit", "--addr", server.address, "--in", str(req), "--out", str(resp)]) == 0
    capsys.readouterr()
    assert main(["decrypt", "--keys", str(keys), "--in", str(resp)]) == 0
    assert capsys.readouterr().out.split() == ["PASS", "FAIL:R1"]

    b = ReferenceBackend()
    k = b.keygen(16)
    old = eval_request_message(b, k, DEFAULT_CONFIG, "R1", np.array([[5000]]))
    k1 = b.rotate_keys(k)
    stale = tmp_path / "stale.oblq"
    write_capture(stale, [hello_message(Capabilities(("reference",), (16,))),
                          *setup_messages(k), rotate_message(k1), old])
    assert main(["submit", "--addr", server.address, "--in", str(stale),
                 "--out", str(tmp_path / "r2.oblq")]) == 3


def test_samples_round_trip(tmp_path):
    m = np.array([[[1.5, 2.25], [3, 4]], [[5, 6], [7, 8]]])
    f = write_samples(tmp_path / "m.csv", m, "R3")
    assert read_samples(f, "R3").tolist() == (m * 100).astype(int).tolist()
    w = write_samples(tmp_path / "w.csv", [[1, 2, 3]], "R1")
    assert read_samples(w, "R1").tolist() == [[100, 200, 300]]


def test_default_catalog_covers_rules():
    assert set(DEFAULT_CATALOG) == {"R1", "R2", "R3"}
