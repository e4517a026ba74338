import numpy as np
import pytest

from maresu.bench import (
    CSV_HEADER,
    RunConfig,
    fit_loglog_slope,
    read_bench_csv,
    run_bench,
    time_median_ns,
)
from maresu.errors import FormatError, ParameterError


@pytest.fixture(scope="module")
def small_result():
    return run_bench(RunConfig(seed=3, sizes=(64, 128, 256, 512), d_k=8, d_v=8, repeats=5, softmax_max_n=256))


def test_records_and_cap(small_result):
    soft = [r.n for r in small_result.records if r.method == "softmax"]
    lam = [r.n for r in small_result.records if r.method == "lam"]
    assert soft == [64, 128, 256]
    assert lam == [64, 128, 256, 512]
    assert set(small_result.slopes) == {"softmax", "lam"}


def test_aux_and_flops(small_result):
    lam = [r for r in small_result.records if r.method == "lam"]
    assert {r.peak_aux_floats for r in lam} == {8 * 8 + 8 + 8}
    assert all(r.flops == 4 * r.n * 64 + 3 * r.n * 16 for r in lam)
    soft = [r for r in small_result.records if r.method == "softmax"]
    assert [r.peak_aux_floats for r in soft] == [64 * 64, 128 * 128, 256 * 256]


def test_csv_schema(small_result, tmp_path):
    text = small_result.to_csv()
    lines = text.split("\n")
    assert lines[0] == "method,n,d_k,d_v,wall_ns,flops,peak_aux_floats"
    assert "\r" not in text and text.endswith("\n")
    slope_rows = [ln for ln in lines if ln.startswith("slope,")]
    assert [ln.split(",")[1] for ln in slope_rows] == ["softmax", "lam"]
    path = tmp_path / "b.csv"
    path.write_text(text)
    back = read_bench_csv(path)
    assert back.records == small_result.records
    assert back.slopes == small_result.slopes


def test_deterministic_apart_from_timing(small_result):
    again = run_bench(RunConfig(seed=3, sizes=(64, 128, 256, 512), d_k=8, d_v=8, softmax_max_n=256))
    strip = lambda recs: [(r.method, r.n, r.flops, r.peak_aux_floats) for r in recs]  # noqa: E731
    assert strip(again.records) == strip(small_result.records)


def test_writes_out(tmp_path):
    out = tmp_path / "x.csv"
    run_bench(RunConfig(sizes=(32, 64), d_k=4, d_v=4, methods=("lam",), out=out))
    assert out.read_text().splitlines()[0] == ",".join(CSV_HEADER)


def test_slope_fit():
    ns = [2**p for p in range(8, 14)]
    assert fit_loglog_slope(ns, [3.0 * n**2 for n in ns]) == pytest.approx(2.0)
    assert fit_loglog_slope(ns, [7.0 * n for n in ns]) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        fit_loglog_slope([4], [1.0])


def test_median_timer_counts_calls():
    calls = []
    assert time_median_ns(lambda: calls.append(1), repeats=5) >= 1
    assert len(calls) == 6


@pytest.mark.parametrize(
    "kw",
    [dict(sizes=(128, 64)), dict(sizes=()), dict(repeats=3), dict(d_k=0), dict(methods=("flash",))],
)
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        RunConfig(**kw)


def test_bad_csv(tmp_path):
    path = tmp_path / "b.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_bench_csv(path)


def test_single_thread_matches_numpy_result():
    # benchmarking under a thread cap must not change the numbers
    from threadpoolctl import threadpool_limits

    from maresu.attention import linear_attention_vectorized
    from maresu.numerics import Rng, seeded_fill

    r = Rng(0)
    q, k, v = (seeded_fill(r, 300, 16) for _ in range(3))
    with threadpool_limits(limits=1):
        capped = linear_attention_vectorized(q, k, v)
    np.testing.assert_allclose(capped, linear_attention_vectorized(q, k, v), atol=1e-13)
