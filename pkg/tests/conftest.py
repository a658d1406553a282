import pytest

from v2xpki import crypto, service

FIXED_TIME = 700_000_000_000_000  # Time64, early 2026


def fixed_clock(value: int = FIXED_TIME):
    return lambda: value


@pytest.fixture(scope="session")
def ieee_material():
    return service.build_topology(
        "ieee", rand=crypto.deterministic_rand(101), clock=fixed_clock())


@pytest.fixture(scope="session")
def etsi_material():
    return service.build_topology(
        "etsi", rand=crypto.deterministic_rand(202), clock=fixed_clock())


@pytest.fixture(scope="session")
def timing_report():
    """One full 100-iteration timing run shared by the bench and acceptance
    tests; it is the expensive fixture of the suite."""
    from v2xpki import bench

    params = bench.BenchParams(iterations=100, warmup=10)
    report = bench.BenchReport(params)
    report.length_rows = bench.measure_lengths(params)
    report.timing_rows = bench.measure_timings(params)
    bench.check_orderings(report)
    return report
