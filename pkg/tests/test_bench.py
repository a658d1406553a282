import csv

import pytest
from click.testing import CliRunner

from v2xpki import bench, cli, plots
from v2xpki.bench import BenchParams, BenchReport


@pytest.fixture(scope="module")
def lengths_report():
    params = BenchParams()
    report = BenchReport(params, length_rows=bench.measure_lengths(params))
    bench.check_orderings(report)
    return report


class TestLengths:
    def test_all_ten_canonical_rows_present(self, lengths_report):
        canonical = [row.message for row in lengths_report.length_rows if not row.extra]
        assert canonical == [
            "EeEcaCertRequestSpdu", "EcaEeCertResponseSpdu", "EeRaCertRequestSpdu",
            "RaEeCertInfoSpdu", "AcaResponse", "CertBatchArchive",
            "EnrolmentRequest", "EnrolmentResponse",
            "AuthorizationRequest", "AuthorizationResponse",
        ]
        assert all(row.measured_bytes > 0 for row in lengths_report.length_rows)

    def test_reference_values_attached(self, lengths_report):
        refs = {row.message: row.reference_bytes for row in lengths_report.length_rows}
        assert refs["EeEcaCertRequestSpdu"] == 151
        assert refs["EcaEeCertResponseSpdu"] == 957
        assert refs["EeRaCertRequestSpdu"] == 369
        assert refs["RaEeCertInfoSpdu"] == 26
        assert refs["AcaResponse"] == 464
        assert refs["EnrolmentRequest"] == 424
        assert refs["EnrolmentResponse"] == 562
        assert refs["AuthorizationRequest"] == 590
        assert refs["AuthorizationResponse"] == 627

    def test_deterministic_given_seed(self):
        params = BenchParams(seed=9)
        assert bench.measure_lengths(params) == bench.measure_lengths(params)

    def test_plaintext_variant_reported(self, lengths_report):
        extras = {row.message for row in lengths_report.length_rows if row.extra}
        assert "EeRaCertRequestSpdu (plaintext)" in extras

    def test_degenerate_batch_archive(self):
        rows = bench.measure_lengths(BenchParams(cert_count=0))
        by_name = {row.message: row for row in rows}
        assert "AcaResponse" not in by_name
        info_only = by_name["CertBatchArchive"].measured_bytes
        full = bench.measure_lengths(BenchParams(cert_count=1))
        full_by_name = {row.message: row for row in full}
        assert info_only < full_by_name["CertBatchArchive"].measured_bytes
        # info entry plus zip structures only
        assert info_only < 250

    def test_chain_depth_monotonicity(self):
        shallow = bench.measure_lengths(BenchParams(chain_depth=3))
        deep = bench.measure_lengths(BenchParams(chain_depth=4))
        pick = lambda rows: next(r.measured_bytes for r in rows
                                 if r.message == "EcaEeCertResponseSpdu")
        assert pick(deep) > pick(shallow)

    def test_length_orderings_pass(self, lengths_report):
        assert all(v.passed for v in lengths_report.verdicts if v.kind == "length")

    def test_padding_hook_fails_the_check(self):
        params = BenchParams(pad_ieee_request=1000)
        report = BenchReport(params, length_rows=bench.measure_lengths(params))
        verdicts = {v.name: v for v in bench.check_orderings(report)}
        assert not verdicts["len:EnrolmentRequest>EeEcaCertRequestSpdu"].passed
        assert not verdicts["len:AuthorizationRequest>EeRaCertRequestSpdu"].passed


class TestTimings:
    def test_row_bookkeeping(self, timing_report):
        assert len(timing_report.timing_rows) == 10
        for row in timing_report.timing_rows:
            assert len(row.samples_ns) == 100
            assert row.p10_ms <= row.median_ms <= row.p90_ms

    def test_grouped_and_separate_download_rows(self, timing_report):
        names = {(row.message, row.phase) for row in timing_report.timing_rows}
        assert ("RaEeCertInfoSpdu", "process") in names
        assert ("AcaResponse", "process") in names
        assert ("RaEeCertInfoSpdu and AcaResponse", "process") in names

    def test_timing_orderings_pass(self, timing_report):
        timing_verdicts = [v for v in timing_report.verdicts if v.kind == "timing"]
        assert len(timing_verdicts) == 3
        assert all(v.passed for v in timing_verdicts)

    def test_iteration_floor_enforced(self):
        with pytest.raises(ValueError):
            bench.measure_timings(BenchParams(iterations=10))

    def test_concurrent_load_refused(self):
        with pytest.raises(ValueError):
            bench.measure_timings(BenchParams(), parallel=2)


class TestVerdicts:
    def test_every_named_check_present_exactly_once(self, timing_report):
        names = [v.name for v in timing_report.verdicts]
        assert len(names) == len(set(names)) == 7

    def test_verdicts_carry_both_values(self, timing_report):
        for verdict in timing_report.verdicts:
            assert verdict.lhs_value > 0 and verdict.rhs_value > 0
            assert verdict.lhs_label and verdict.rhs_label


class TestEmission:
    def test_csv_row_count(self, lengths_report, tmp_path):
        path = bench.emit(lengths_report, "csv", tmp_path / "report.csv")
        with path.open() as handle:
            rows = list(csv.reader(handle))
        expected = 1 + len(lengths_report.length_rows) + len(lengths_report.verdicts)
        assert len(rows) == expected
        assert rows[0] == bench._CSV_COLUMNS

    def test_emit_deterministic(self, lengths_report, tmp_path):
        first = bench.emit(lengths_report, "csv", tmp_path / "a.csv").read_bytes()
        second = bench.emit(lengths_report, "csv", tmp_path / "b.csv").read_bytes()
        assert first == second

    def test_markdown_renders_side_by_side(self, timing_report, tmp_path):
        path = bench.emit(timing_report, "md", tmp_path / "report.md")
        text = path.read_text()
        assert "| IEEE message | measured | reference | ETSI message" in text
        line = next(line for line in text.splitlines() if "EeEcaCertRequestSpdu" in line
                    and "EnrolmentRequest" in line)
        assert line.count("|") == 7
        assert "## Computation times" in text
        assert "## Ordering checks" in text

    def test_unknown_format_rejected(self, lengths_report, tmp_path):
        with pytest.raises(ValueError):
            bench.emit(lengths_report, "xml", tmp_path / "report.xml")


class TestFigures:
    def test_length_figure_written(self, lengths_report, tmp_path):
        path = plots.render_length_figure(lengths_report.length_rows, tmp_path / "lengths.png")
        assert path.stat().st_size > 1000
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_timing_figure_written(self, timing_report, tmp_path):
        path = plots.render_timing_figure(timing_report.timing_rows, tmp_path / "timings.png")
        assert path.stat().st_size > 1000

    def test_report_figures(self, timing_report, tmp_path):
        written = plots.render_report_figures(timing_report, tmp_path)
        assert [p.name for p in written] == ["bench_lengths.png", "bench_timings.png"]


class TestCli:
    def test_lengths_writes_report_and_figure(self, tmp_path):
        runner = CliRunner()
        out = tmp_path / "lengths.csv"
        result = runner.invoke(cli.main, ["bench", "lengths", "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert out.exists()
        assert (tmp_path / "lengths.png").exists()

    def test_lengths_no_figure_flag(self, tmp_path):
        runner = CliRunner()
        out = tmp_path / "lengths.md"
        result = runner.invoke(cli.main, [
            "bench", "lengths", "--out", str(out), "--format", "md", "--no-figure"])
        assert result.exit_code == 0, result.output
        assert out.exists()
        assert not (tmp_path / "lengths.png").exists()

    def test_check_passes_by_default(self):
        result = CliRunner().invoke(cli.main, ["bench", "check"])
        assert result.exit_code == 0, result.output
        assert result.output.count("PASS") == 4

    def test_check_padded_request_fails_nonzero(self):
        result = CliRunner().invoke(cli.main, [
            "bench", "check", "--pad-ieee-request", "1000"])
        assert result.exit_code == 1
        assert "FAIL" in result.output

    def test_timings_iteration_floor_maps_to_error(self):
        result = CliRunner().invoke(cli.main, ["bench", "timings", "--iterations", "5"])
        assert result.exit_code != 0
        assert "100" in result.output

    def test_stdout_markdown_when_no_out(self):
        result = CliRunner().invoke(cli.main, ["bench", "lengths", "--cert-count", "1"])
        assert result.exit_code == 0, result.output
        assert "## Message lengths" in result.output
