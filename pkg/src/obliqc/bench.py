"""Measurement harness: phase timings, batch sweeps, abs variants, parallel speedup.

Every timed path is checked against the floating-point oracle in the same
process right before it is timed.  Statistics are min / median / p95 over at
least five repetitions after one warm-up run.  Peak RSS is sampled every
50 ms on a monitor thread; CPU utilisation is process CPU time over wall time.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import psutil

from . import oracle, rules
from .codec import DEFAULT_CONFIG, FixedPointConfig, decode_raw
from .kernels import ABS_VARIANTS
from .oblivious import ReferenceBackend, TraceBackend, encrypt_lanes, get_backend

SCHEMA_VERSION = 1
PHASES = ("keygen", "context", "encrypt", "compute", "decrypt")
MIN_REPS = 5

# Reference magnitudes for one CKKS deployment; backend-specific, never asserted.
CKKS_REFERENCE_SIZES = {
    "CKKS CryptoContext": "1.1 KB",
    "FHEW CryptoContext": "0.2 KB",
    "CKKS Public Key": "18.9 MB",
    "CKKS Multiplication Key": "56.6 MB",
    "One Batch of CKKS Ciphertext": "13.6 MB",
}


@dataclass(frozen=True)
class BenchRecord:
    backend: str
    rule: str
    phase: str
    batch_size: int
    input_vector_length: int
    repetitions: int
    min_ns: int
    median_ns: int
    p95_ns: int
    peak_rss_bytes: int
    cpu_percent: float
    serialized_bytes: int

    def __post_init__(self):
        if self.repetitions < MIN_REPS:
            raise ValueError(f"need at least {MIN_REPS} repetitions")
        if self.median_ns > self.p95_ns:
            raise ValueError("median above p95")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")

    @property
    def amortized_ns(self) -> float:
        return self.median_ns / self.batch_size


@dataclass(frozen=True)
class AbsRecord:
    variant: str
    gates: int
    median_ns: int
    p95_ns: int


@dataclass(frozen=True)
class ParallelRecord:
    rows: int
    cols: int
    workers: int
    median_ns: int
    p95_ns: int
    speedup: float
    cpu_percent: float


class RssMonitor:
    """Samples this process's RSS on a daemon thread; ``peak`` is the maximum seen."""

    def __init__(self, interval: float = 0.05):
        self.interval = interval
        self.peak = 0
        self._proc = psutil.Process()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        while True:
            rss = self._proc.memory_info().rss
            if rss > self.peak:
                self.peak = rss
            if self._stop.wait(self.interval):
                return

    def __enter__(self):
        self.peak = self._proc.memory_info().rss
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self.peak = max(self.peak, self._proc.memory_info().rss)


@dataclass
class Timing:
    samples_ns: list
    cpu_percent: float
    peak_rss: int

    @property
    def min_ns(self) -> int:
        return int(min(self.samples_ns))

    @property
    def median_ns(self) -> int:
        return int(np.median(self.samples_ns))

    @property
    def p95_ns(self) -> int:
        return int(np.percentile(self.samples_ns, 95))


def time_phase(fn: Callable[[], object], repetitions: int = MIN_REPS, warmup: int = 1) -> Timing:
    if repetitions < MIN_REPS:
        raise ValueError(f"need at least {MIN_REPS} repetitions")
    for _ in range(warmup):
        fn()
    proc = psutil.Process()
    samples = []
    with RssMonitor() as mon:
        cpu0, wall0 = proc.cpu_times(), time.perf_counter()
        for _ in range(repetitions):
            t0 = time.perf_counter_ns()
            fn()
            samples.append(time.perf_counter_ns() - t0)
        cpu1, wall1 = proc.cpu_times(), time.perf_counter()
    cpu = max(0.0, cpu1.user + cpu1.system - cpu0.user - cpu0.system) / max(wall1 - wall0, 1e-9) * 100
    ceiling = 100.0 * (os.cpu_count() or 1)
    return Timing(samples, min(cpu, ceiling), mon.peak)


def _record(backend, rule, phase, batch, n, reps, t: Timing, nbytes) -> BenchRecord:
    return BenchRecord(backend, rule, phase, batch, n, reps, t.min_ns, t.median_ns, t.p95_ns,
                       t.peak_rss, round(t.cpu_percent, 1), nbytes)


# -- workloads --------------------------------------------------------------

DEFAULT_SPEC = {"R1": ("50.00", "2.00"), "R2": ("50.00", "2.00"), "R3": ("50.00", "2.00")}


def make_windows(rule_id: str, batch: int, length: int, seed: int = 0,
                 cfg: FixedPointConfig = DEFAULT_CONFIG, rows: int = 4) -> np.ndarray:
    """Raw encoded control data around the default target: (B, n) or (B, r, c)."""
    rng = np.random.default_rng(seed)
    shape = (batch, rows, length) if rule_id == "R3" else (batch, length)
    x = np.clip(np.rint(rng.normal(5000, 300, shape)), cfg.raw_lo, cfg.raw_hi)
    return x.astype(np.int64)


def _oracle_check(rule_id, spec, raw, verdict_values, cfg):
    mean, sd = float(spec.target_mean), float(spec.target_sd)
    x = raw / cfg.scale
    for k in range(raw.shape[0]):
        want = oracle.evaluate(rule_id, x[k], mean, sd)
        got = verdict_values[k]
        if rule_id == "R3":
            want = (round(want[0] * cfg.scale), want[1])
        if got != want:
            raise AssertionError(f"{rule_id} lane {k}: engine {got} != oracle {want}")


def _run_rule(backend, keys, spec, raw, cfg):
    shape, cols = _columns(spec.rule_id, raw)
    handles = encrypt_lanes(backend, keys, cols)
    return shape, handles


def _columns(rule_id, raw):
    if rule_id == "R3":
        _, r, c = raw.shape
        return (r, c), [raw[:, i, j] for i in range(r) for j in range(c)]
    return (raw.shape[1],), [raw[:, j] for j in range(raw.shape[1])]


def _inputs(rule_id, shape, handles):
    if rule_id == "R3":
        r, c = shape
        return [handles[i * c:(i + 1) * c] for i in range(r)]
    return handles


def _decrypt_verdict(backend, keys, rule_id, v):
    if rule_id == "R3":
        score = np.atleast_1d(backend.decrypt(v.score, keys))
        flags = [np.atleast_1d(backend.decrypt(f, keys)) for f in v.row_flags]
        return [(int(score[k]), [int(f[k]) for f in flags]) for k in range(score.shape[0])]
    return [int(b) for b in np.atleast_1d(backend.decrypt(v.flag, keys))]


def bench_phases(rule_id: str, batch: int, length: int = 8, backend_name: str = "reference",
                 repetitions: int = MIN_REPS, cfg: FixedPointConfig = DEFAULT_CONFIG,
                 gate_cost_us: float = 0.0, lane_cost_us: float = 0.0, seed: int = 0,
                 workers: int = 1, rows: int = 4) -> list[BenchRecord]:
    """Time keygen, context serialisation, encryption, computation and decryption."""
    backend = get_backend(backend_name, gate_cost_us=gate_cost_us, lane_cost_us=lane_cost_us)
    mean, sd = DEFAULT_SPEC[rule_id]
    raw = make_windows(rule_id, batch, length, seed, cfg, rows)
    shape, cols = _columns(rule_id, raw)
    spec = rules.RuleSpec(rule_id, mean, sd).shaped(shape)
    rules.plan(spec, cfg)
    keys = backend.keygen(cfg.width)
    handles = encrypt_lanes(backend, keys, cols)
    inputs = _inputs(rule_id, shape, handles)
    verdict = rules.evaluate(spec, inputs, cfg, workers)
    _oracle_check(rule_id, spec, raw, _decrypt_verdict(backend, keys, rule_id, verdict), cfg)

    name = backend.name
    n = length
    out = []

    def keygen():
        k = backend.keygen(cfg.width)
        backend.drop_session(k.session_id)

    t = time_phase(keygen, repetitions)
    out.append(_record(name, rule_id, "keygen", batch, n, repetitions, t,
                       sum(keys.serialized_sizes.values())))
    t = time_phase(lambda: [bytes(b) for b in keys.upload_blobs.values()], repetitions)
    out.append(_record(name, rule_id, "context", batch, n, repetitions, t,
                       keys.serialized_sizes.get("context", 0)))
    t = time_phase(lambda: [backend.serialize(h) for h in encrypt_lanes(backend, keys, cols)],
                   repetitions)
    out.append(_record(name, rule_id, "encrypt", batch, n, repetitions, t,
                       sum(backend.nbytes(h) for h in handles)))
    t = time_phase(lambda: rules.evaluate(spec, inputs, cfg, workers), repetitions)
    out.append(_record(name, rule_id, "compute", batch, n, repetitions, t, 0))
    outs = [verdict.flag] if rule_id != "R3" else [verdict.score, *verdict.row_flags]
    t = time_phase(lambda: [backend.decrypt(h, keys) for h in outs], repetitions)
    out.append(_record(name, rule_id, "decrypt", batch, n, repetitions, t,
                       sum(backend.nbytes(h) for h in outs)))
    return out


def sweep_batch(rule_id: str, sizes: Sequence[int], backend_name: str = "reference",
                **kw) -> list[BenchRecord]:
    if list(sizes) != sorted(sizes):
        raise ValueError("batch sizes must be ascending")
    records = []
    for b in sizes:
        records += bench_phases(rule_id, b, backend_name=backend_name, **kw)
    return records


def amortized_per_item(records: Sequence[BenchRecord],
                       phases: Sequence[str] = ("encrypt", "compute", "decrypt")) -> dict:
    """Per-item time of the daily path (sum of phase medians / batch size) per batch size."""
    totals: dict = {}
    for r in records:
        if r.phase in phases:
            totals[r.batch_size] = totals.get(r.batch_size, 0) + r.median_ns
    return {b: t / b for b, t in sorted(totals.items())}


def sweep_abs_variants(samples: int = 64, width: int = 16, repetitions: int = MIN_REPS,
                       gate_cost_us: float = 20.0, seed: int = 0) -> list[AbsRecord]:
    """Gate counts from the trace backend and timings under synthetic gate cost."""
    rng = np.random.default_rng(seed)
    values = rng.integers(-10000, 10001, samples)
    tracer = TraceBackend()
    tkeys = tracer.keygen(width)
    th = tracer.encrypt(values, tkeys)
    timed = ReferenceBackend(gate_cost_us=gate_cost_us)
    keys = timed.keygen(width)
    h = timed.encrypt(values, keys)
    out = []
    for name, fn in ABS_VARIANTS.items():
        got = timed.decrypt(fn(h), keys)
        if not np.array_equal(got, np.abs(values)):
            raise AssertionError(f"abs variant {name} disagrees with native abs")
        gates = len(tracer.trace_program(fn, th))
        t = time_phase(lambda: fn(h), repetitions)
        out.append(AbsRecord(name, gates, t.median_ns, t.p95_ns))
    return out


def sweep_parallel(shapes: Sequence[tuple] = ((16, 64),), workers: Sequence[int] = (1, 2, 4, 8, 16),
                   gate_cost_us: float = 10.0, repetitions: int = MIN_REPS,
                   cfg: FixedPointConfig = FixedPointConfig(width=32), seed: int = 0,
                   lanes: int = 1) -> list[ParallelRecord]:
    """R3 speedup curve; verdicts are cross-checked across worker counts."""
    from concurrent.futures import ThreadPoolExecutor

    out = []
    for r, c in shapes:
        backend = ReferenceBackend(gate_cost_us=gate_cost_us)
        keys = backend.keygen(cfg.width)
        raw = make_windows("R3", lanes, c, seed, cfg, rows=r)
        shape, cols = _columns("R3", raw)
        spec = rules.RuleSpec("R3", *DEFAULT_SPEC["R3"]).shaped(shape)
        rules.plan(spec, cfg)
        matrix = _inputs("R3", shape, encrypt_lanes(backend, keys, cols))
        reference = None
        base = None
        for w in workers:
            pool = ThreadPoolExecutor(max_workers=w) if w > 1 else None
            try:
                run = lambda: rules.rule3_eval_parallel(matrix, spec, w, cfg, pool)  # noqa: E731
                got = _decrypt_verdict(backend, keys, "R3", run())
                if reference is None:
                    _oracle_check("R3", spec, raw, got, cfg)
                    reference = got
                elif got != reference:
                    raise AssertionError(f"workers={w} verdict differs from workers={workers[0]}")
                t = time_phase(run, repetitions)
            finally:
                if pool is not None:
                    pool.shutdown()
            base = base or t.median_ns
            out.append(ParallelRecord(r, c, w, t.median_ns, t.p95_ns,
                                      round(base / t.median_ns, 3), round(t.cpu_percent, 1)))
    return out


# -- reports ----------------------------------------------------------------

_KINDS = {"phases": BenchRecord, "abs": AbsRecord, "parallel": ParallelRecord}


def _kind_of(records) -> str:
    for k, cls in _KINDS.items():
        if isinstance(records[0], cls):
            return k
    raise TypeError(f"not a bench record: {type(records[0]).__name__}")


def to_csv(records: Sequence) -> str:
    if not records:
        raise ValueError("no records to report")
    kind = _kind_of(records)
    cols = [f.name for f in dataclasses.fields(_KINDS[kind])]
    buf = io.StringIO()
    buf.write(f"# obliqc-bench schema={SCHEMA_VERSION} kind={kind}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        w.writerow([getattr(r, c) for c in cols])
    return buf.getvalue()


def from_csv(text: str) -> list:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# obliqc-bench"):
        raise ValueError("missing obliqc-bench schema line")
    fields_ = dict(p.split("=", 1) for p in lines[0][2:].split()[1:])
    if int(fields_["schema"]) != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema {fields_['schema']}")
    cls = _KINDS[fields_["kind"]]
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = []
    for row in csv.DictReader(lines[1:]):
        conv = {k: (float(v) if types[k] in ("float", float) else
                    int(v) if types[k] in ("int", int) else v) for k, v in row.items()}
        out.append(cls(**conv))
    return out


def to_markdown(records: Sequence[BenchRecord]) -> str:
    if not records:
        raise ValueError("no records to report")
    if _kind_of(records) != "phases":
        cols = [f.name for f in dataclasses.fields(type(records[0]))]
        lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        lines += ["| " + " | ".join(str(getattr(r, c)) for c in cols) + " |" for r in records]
        return "\n".join(lines) + "\n"
    lines = [
        "## Phase timings", "",
        "| backend | rule | phase | batch | n | median ms | p95 ms | per item us | peak RSS MiB | CPU % |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for r in records:
        lines.append(
            f"| {r.backend} | {r.rule} | {r.phase} | {r.batch_size} | {r.input_vector_length} "
            f"| {r.median_ns / 1e6:.3f} | {r.p95_ns / 1e6:.3f} | {r.amortized_ns / 1e3:.3f} "
            f"| {r.peak_rss_bytes / 2**20:.1f} | {r.cpu_percent} |")
    lines += ["", "## Serialized sizes", "", "| backend | phase | batch | bytes |", "|---|---|---|---|"]
    for r in records:
        if r.phase in ("keygen", "context", "encrypt", "decrypt"):
            lines.append(f"| {r.backend} | {r.phase} | {r.batch_size} | {r.serialized_bytes} |")
    if any(r.backend == "external" for r in records):
        lines += ["", "Reference magnitudes (one CKKS deployment):", "",
                  "| artifact | size |", "|---|---|"]
        lines += [f"| {k} | {v} |" for k, v in CKKS_REFERENCE_SIZES.items()]
    return "\n".join(lines) + "\n"


def report(records: Sequence, fmt: str = "csv", path=None) -> Path:
    if not records:
        raise ValueError("no records to report; refusing to write an empty file")
    text = to_csv(records) if fmt == "csv" else to_markdown(records)
    path = Path(path) if path else run_dir() / f"report.{'csv' if fmt == 'csv' else 'md'}"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def run_dir(root="bench-out") -> Path:
    d = Path(root) / datetime.now().strftime("%Y%m%d-%H%M%S")
    d.mkdir(parents=True, exist_ok=True)
    return d


def describe_score(raw: int, cfg: FixedPointConfig = DEFAULT_CONFIG) -> str:
    return str(decode_raw(raw, cfg))
