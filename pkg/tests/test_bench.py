import csv
import io

import pytest

from obliqc import bench
from obliqc.bench import BenchRecord
from obliqc.service.cli import main


def rec(**kw):
    base = dict(backend="reference", rule="R1", phase="compute", batch_size=4,
                input_vector_length=8, repetitions=5, min_ns=1, median_ns=2, p95_ns=3,
                peak_rss_bytes=10, cpu_percent=50.0, serialized_bytes=0)
    base.update(kw)
    return BenchRecord(**base)


def test_record_invariants():
    with pytest.raises(ValueError):
        rec(repetitions=4)
    with pytest.raises(ValueError):
        rec(median_ns=5, p95_ns=4)
    with pytest.raises(ValueError):
        rec(phase="warmup")
    assert rec(median_ns=8, p95_ns=9).amortized_ns == 2


def test_single_size_sweep_one_record_per_phase():
    recs = bench.sweep_batch("R1", [1])
    assert [r.phase for r in recs] == list(bench.PHASES)
    assert all(r.batch_size == 1 and r.repetitions >= 5 for r in recs)
    assert all(r.min_ns <= r.median_ns <= r.p95_ns for r in recs)


def test_sweep_requires_sorted_sizes():
    with pytest.raises(ValueError):
        bench.sweep_batch("R1", [64, 1])


def test_sweep_shapes_for_every_rule():
    for rule in ("R1", "R2", "R3"):
        cfg = bench.FixedPointConfig(width=32)
        recs = bench.sweep_batch(rule, [1, 3], length=4, cfg=cfg)
        assert {(r.batch_size, r.phase) for r in recs} == {
            (b, p) for b in (1, 3) for p in bench.PHASES}


def test_cpu_never_exceeds_thread_ceiling():
    import os

    for r in bench.sweep_batch("R2", [2], gate_cost_us=5):
        assert 0 <= r.cpu_percent <= 100 * (os.cpu_count() or 1)


def test_amortized_non_increasing_with_synthetic_cost():
    recs = bench.sweep_batch("R1", [1, 8, 32], length=4, gate_cost_us=200, lane_cost_us=1)
    a = bench.amortized_per_item(recs)
    sizes = sorted(a)
    assert all(a[b] <= a[s] * 1.15 for s, b in zip(sizes, sizes[1:]))


def test_abs_variants_csv_contract():
    recs = bench.sweep_abs_variants(samples=16, gate_cost_us=5)
    g = {r.variant: r.gates for r in recs}
    assert g["branchless"] < g["select"]
    text = bench.to_csv(recs)
    header = next(csv.reader(io.StringIO(text.splitlines()[1])))
    assert header == ["variant", "gates", "median_ns", "p95_ns"]


def test_parallel_baseline_and_determinism():
    recs = bench.sweep_parallel([(3, 6)], [1, 2, 4], gate_cost_us=0, repetitions=5)
    assert recs[0].workers == 1 and recs[0].speedup == 1.0
    assert [r.workers for r in recs] == [1, 2, 4]


def test_report_round_trip_and_rows(tmp_path):
    recs = bench.sweep_batch("R1", [1, 2], length=3)
    text = bench.to_csv(recs)
    assert text.startswith("# obliqc-bench schema=1 kind=phases")
    assert bench.to_csv(bench.from_csv(text)) == text
    md = bench.to_markdown(recs)
    rows = [ln for ln in md.split("## Serialized")[0].splitlines() if ln.startswith("| reference")]
    assert len(rows) == len({(r.rule, r.phase, r.batch_size) for r in recs})
    assert "CKKS" not in md
    ext = [rec(backend="external", phase="keygen")]
    assert "18.9 MB" in bench.to_markdown(ext)
    p = bench.report(recs, "markdown", tmp_path / "r.md")
    assert p.read_text() == md


def test_report_is_deterministic():
    recs = [rec(batch_size=b) for b in (1, 2, 3)]
    assert bench.to_csv(recs) == bench.to_csv(list(recs))
    assert bench.to_markdown(recs) == bench.to_markdown(list(recs))


def test_empty_report_is_an_error(tmp_path):
    with pytest.raises(ValueError):
        bench.report([], "csv", tmp_path / "x.csv")
    assert not (tmp_path / "x.csv").exists()


def test_bad_schema_rejected():
    with pytest.raises(ValueError):
        bench.from_csv("variant,gates\n")
    with pytest.raises(ValueError):
        bench.from_csv("# obliqc-bench schema=9 kind=abs\nvariant,gates,median_ns,p95_ns\n")


def test_cli_bench_commands(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["bench", "abs", "--out-dir", str(out), "--gate-cost-us", "1"]) == 0
    assert main(["bench", "sweep-batch", "--out-dir", str(out), "--sizes", "1,2",
                 "--gate-cost-us", "0", "--lane-cost-us", "0"]) == 0
    assert main(["bench", "parallel", "--out-dir", str(out), "--shapes", "2x4",
                 "--workers", "1,2", "--gate-cost-us", "0"]) == 0
    csv_path = out / "sweep-batch-R1.csv"
    assert main(["bench", "report", "--in", str(csv_path), "--out", str(out / "r.md")]) == 0
    assert "## Phase timings" in (out / "r.md").read_text()


def test_run_dir_is_timestamped(tmp_path):
    d = bench.run_dir(tmp_path / "bench-out")
    assert d.parent.name == "bench-out" and d.is_dir()
