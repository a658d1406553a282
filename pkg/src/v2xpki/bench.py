"""Benchmark harness: message lengths, client-side timings, ordering checks.

The published reference byte counts and millisecond figures for these
flows come from COER-encoded messages measured on a vehicular Android
device; neither is reproducible with this toolkit's compact encoding on
desk hardware. What is reproducible, and what this harness asserts, is
the orderings those figures exhibit and the structure behind them: the
double-signed ETSI requests outweigh and outcost the single-signed IEEE
requests, while the chain-carrying IEEE enrollment response outweighs
and outcosts the ETSI one.

Runs are deterministic: a seed drives every keypair and nonce, and the
injected clock is fixed, so two runs with the same parameters produce
identical length rows.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import ccms, crypto, scms, service
from .cert import PsidSsp
from .codec import AckResult, RaEeCertInfo, Unsecured, encode
from .scms import ACA_ENTRY_FORMAT, DEFAULT_APP_PERMISSIONS, INFO_ENTRY_NAME, FlowError

# Fixed Time64 instant used for every benchmark run (early 2026).
BENCH_TIME64 = 700_000_000_000_000

IEEE = "ieee"
ETSI = "etsi"
GENERATE = "generate"
PROCESS = "process"

# Published reference values (bytes / milliseconds) from a prior
# device-based comparison of the two standards; display-only.
REFERENCE_LENGTHS = {
    "EeEcaCertRequestSpdu": 151,
    "EcaEeCertResponseSpdu": 957,
    "EeRaCertRequestSpdu": 369,
    "RaEeCertInfoSpdu": 26,
    "AcaResponse": 464,
    "EnrolmentRequest": 424,
    "EnrolmentResponse": 562,
    "AuthorizationRequest": 590,
    "AuthorizationResponse": 627,
}
REFERENCE_TIMINGS_MS = {
    ("EeEcaCertRequestSpdu", GENERATE): 46,
    ("EcaEeCertResponseSpdu", PROCESS): 396,
    ("EeRaCertRequestSpdu", GENERATE): 161,
    ("RaEeCertInfoSpdu and AcaResponse", PROCESS): 348,
    ("EnrolmentRequest", GENERATE): 244,
    ("EnrolmentResponse", PROCESS): 171,
    ("AuthorizationRequest", GENERATE): 345,
    ("AuthorizationResponse", PROCESS): 171,
}


@dataclass
class BenchParams:
    permissions: tuple[PsidSsp, ...] = DEFAULT_APP_PERMISSIONS
    chain_depth: int = 3
    cert_count: int = 5
    seed: int = 1
    iterations: int = 100
    warmup: int = 10
    # Falsifiability hook: inflate the recorded IEEE request lengths so the
    # corresponding ordering checks can be driven to failure on purpose.
    pad_ieee_request: int = 0


@dataclass
class LengthRow:
    message: str
    standard: str
    measured_bytes: int
    reference_bytes: Optional[int] = None
    extra: bool = False  # informational rows excluded from ordering checks


@dataclass
class TimingRow:
    message: str
    standard: str
    phase: str
    samples_ns: list[int]
    reference_ms: Optional[int] = None

    @property
    def median_ms(self) -> float:
        return statistics.median(self.samples_ns) / 1e6

    @property
    def p10_ms(self) -> float:
        return statistics.quantiles(self.samples_ns, n=10, method="inclusive")[0] / 1e6

    @property
    def p90_ms(self) -> float:
        return statistics.quantiles(self.samples_ns, n=10, method="inclusive")[8] / 1e6


@dataclass
class Verdict:
    name: str
    kind: str  # length | timing
    passed: bool
    lhs_label: str
    lhs_value: float
    rhs_label: str
    rhs_value: float
    relation: str = ">"  # the claimed strict relation between lhs and rhs

    def describe(self) -> str:
        op = self.relation if self.passed else f"!{self.relation}"
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: "
                f"{self.lhs_label}={self.lhs_value:g} {op} {self.rhs_label}={self.rhs_value:g}")


@dataclass
class BenchReport:
    params: BenchParams
    length_rows: list[LengthRow] = field(default_factory=list)
    timing_rows: list[TimingRow] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)


@dataclass
class _World:
    """Both topologies plus clients, with one completed flow per standard so
    process-phase operations have consistent state to repeat against."""

    ieee: service.PkiMaterial
    etsi: service.PkiMaterial
    eca: scms.EnrollmentCa
    ra: scms.RegistrationAuthority
    aca: scms.AuthorizationCa
    ea: ccms.EnrolmentAuthority
    aa: ccms.AuthorizationAuthority
    ee_gen: scms.EndEntity
    ee_proc: scms.EndEntity
    its_gen: ccms.ItsStation
    its_proc: ccms.ItsStation
    ieee_enroll_request: bytes
    ieee_enroll_response: bytes
    ieee_auth_request: bytes
    ieee_auth_plaintext_len: int
    ack_bytes: bytes
    archive: bytes
    info_entry: bytes
    aca_entries: list[bytes]
    current_i: int
    etsi_enroll_request: bytes
    etsi_enroll_response: bytes
    etsi_auth_request: bytes
    etsi_auth_response: bytes


def _build_world(params: BenchParams) -> _World:
    rand = crypto.deterministic_rand(params.seed)
    clock = lambda: BENCH_TIME64  # noqa: E731
    cert_count = max(1, params.cert_count)

    ieee = service.build_topology(IEEE, chain_depth=params.chain_depth, rand=rand, clock=clock)
    etsi = service.build_topology(ETSI, rand=rand, clock=clock)
    eca, ra, aca = service.make_ieee_authorities(ieee, clock=clock, rand=rand)
    ea, aa = service.make_etsi_authorities(etsi, clock=clock, rand=rand)

    ee_proc = scms.EndEntity(ieee.anchor, clock=clock, rand=rand, app_permissions=params.permissions)
    ieee_enroll_request = ee_proc.build_enrollment_request()
    ieee_enroll_response = eca.process_enrollment_request(ieee_enroll_request)
    ee_proc.process_enrollment_response(ieee_enroll_response)
    ra.register_enrollment_cert(ee_proc.enrollment_certificate)
    ieee_auth_request = ee_proc.build_auth_cert_request(ieee.cert("ra"), cert_count)
    ack_bytes = ra.process_auth_request(ieee_auth_request)
    ack = ee_proc.process_cert_ack(ack_bytes)
    if ack.result != AckResult.OK:
        raise FlowError(f"benchmark flow rejected: {ack.result.name}")
    archive = ra.handle_download(ee_proc.auth_request_hash)
    with zipfile.ZipFile(io.BytesIO(archive)) as zf:
        info_entry = zf.read(INFO_ENTRY_NAME)
        aca_entries = [zf.read(ACA_ENTRY_FORMAT.format(j)) for j in range(cert_count)]
    current_i = ee_proc.process_cert_info(info_entry).current_i

    ee_gen = scms.EndEntity(ieee.anchor, clock=clock, rand=rand, app_permissions=params.permissions)
    gen_response = eca.process_enrollment_request(ee_gen.build_enrollment_request())
    ee_gen.process_enrollment_response(gen_response)

    its_proc = ccms.ItsStation(etsi.anchor, b"bench-proc", clock=clock, rand=rand,
                               app_permissions=params.permissions)
    ea.register(its_proc.its_id, its_proc.canonical_public)
    etsi_enroll_request = its_proc.build_enrolment_request(etsi.cert("ea"))
    etsi_enroll_response = ea.process_enrolment_request(etsi_enroll_request)
    its_proc.process_enrolment_response(etsi_enroll_response)
    etsi_auth_request = its_proc.build_authorization_request(etsi.cert("aa"), etsi.cert("ea"))
    etsi_auth_response = aa.process_authorization_request(etsi_auth_request)
    its_proc.process_authorization_response(etsi_auth_response)

    its_gen = ccms.ItsStation(etsi.anchor, b"bench-gen", clock=clock, rand=rand,
                              app_permissions=params.permissions)
    ea.register(its_gen.its_id, its_gen.canonical_public)
    ccms.run_enrolment(its_gen, ea, etsi.cert("ea"))

    return _World(
        ieee, etsi, eca, ra, aca, ea, aa, ee_gen, ee_proc, its_gen, its_proc,
        ieee_enroll_request, ieee_enroll_response, ieee_auth_request,
        ee_proc.last_auth_request_plaintext_len, ack_bytes, archive, info_entry,
        aca_entries, current_i,
        etsi_enroll_request, etsi_enroll_response, etsi_auth_request, etsi_auth_response)


def _degenerate_archive(params: BenchParams) -> bytes:
    """Info-only batch: what the RA serves when a period holds no certificates."""
    from .wire import WEEK_MICROS

    current_i = BENCH_TIME64 // WEEK_MICROS
    info = RaEeCertInfo(b"\x00" * 8, BENCH_TIME64, current_i, (current_i + 1) * WEEK_MICROS)
    return scms.build_archive([(INFO_ENTRY_NAME, encode(Unsecured(encode(info))))])


def measure_lengths(params: BenchParams) -> list[LengthRow]:
    """Run both flows once with deterministic keys and record every message
    length alongside its published reference value."""
    world = _build_world(params)
    pad = params.pad_ieee_request

    def ref(name: str) -> Optional[int]:
        return REFERENCE_LENGTHS.get(name)

    if params.cert_count == 0:
        archive = _degenerate_archive(params)
        aca_rows = []
    else:
        archive = world.archive
        aca_rows = [LengthRow("AcaResponse", IEEE, len(world.aca_entries[0]), ref("AcaResponse"))]

    rows = [
        LengthRow("EeEcaCertRequestSpdu", IEEE, len(world.ieee_enroll_request) + pad,
                  ref("EeEcaCertRequestSpdu")),
        LengthRow("EcaEeCertResponseSpdu", IEEE, len(world.ieee_enroll_response),
                  ref("EcaEeCertResponseSpdu")),
        LengthRow("EeRaCertRequestSpdu", IEEE, len(world.ieee_auth_request) + pad,
                  ref("EeRaCertRequestSpdu")),
        LengthRow("RaEeCertInfoSpdu", IEEE, len(world.info_entry), ref("RaEeCertInfoSpdu")),
        *aca_rows,
        LengthRow("CertBatchArchive", IEEE, len(archive)),
        LengthRow("EnrolmentRequest", ETSI, len(world.etsi_enroll_request), ref("EnrolmentRequest")),
        LengthRow("EnrolmentResponse", ETSI, len(world.etsi_enroll_response), ref("EnrolmentResponse")),
        LengthRow("AuthorizationRequest", ETSI, len(world.etsi_auth_request), ref("AuthorizationRequest")),
        LengthRow("AuthorizationResponse", ETSI, len(world.etsi_auth_response), ref("AuthorizationResponse")),
        LengthRow("EeRaCertRequestSpdu (plaintext)", IEEE, world.ieee_auth_plaintext_len, extra=True),
        LengthRow("RaEeCertAck", IEEE, len(world.ack_bytes), extra=True),
    ]
    return rows


def measure_timings(params: BenchParams, iterations: Optional[int] = None,
                    warmup: Optional[int] = None, parallel: int = 1) -> list[TimingRow]:
    """Time the client-side generate and process phase of every message.

    Medians over at least 100 iterations are the contract; single samples
    are never reported. The harness is single-threaded by design and
    refuses concurrent runs outright.
    """
    if parallel != 1:
        raise ValueError("timing runs are single-threaded by contract; parallel must be 1")
    iterations = params.iterations if iterations is None else iterations
    warmup = params.warmup if warmup is None else warmup
    if iterations < 100:
        raise ValueError("timing medians need at least 100 iterations")
    if warmup < 0:
        raise ValueError("warmup cannot be negative")
    world = _build_world(params)
    cert_count = max(1, params.cert_count)

    operations = [
        ("EeEcaCertRequestSpdu", IEEE, GENERATE,
         lambda: world.ee_gen.build_enrollment_request()),
        ("EcaEeCertResponseSpdu", IEEE, PROCESS,
         lambda: world.ee_proc.process_enrollment_response(world.ieee_enroll_response)),
        ("EeRaCertRequestSpdu", IEEE, GENERATE,
         lambda: world.ee_gen.build_auth_cert_request(world.ieee.cert("ra"), cert_count)),
        ("RaEeCertInfoSpdu", IEEE, PROCESS,
         lambda: world.ee_proc.process_cert_info(world.info_entry)),
        ("AcaResponse", IEEE, PROCESS,
         lambda: world.ee_proc.process_aca_response(0, world.current_i, world.aca_entries[0])),
        ("RaEeCertInfoSpdu and AcaResponse", IEEE, PROCESS,
         lambda: world.ee_proc.download_and_unpack(world.archive)),
        ("EnrolmentRequest", ETSI, GENERATE,
         lambda: world.its_gen.build_enrolment_request(world.etsi.cert("ea"))),
        ("EnrolmentResponse", ETSI, PROCESS,
         lambda: world.its_proc.process_enrolment_response(world.etsi_enroll_response)),
        ("AuthorizationRequest", ETSI, GENERATE,
         lambda: world.its_gen.build_authorization_request(world.etsi.cert("aa"), world.etsi.cert("ea"))),
        ("AuthorizationResponse", ETSI, PROCESS,
         lambda: world.its_proc.process_authorization_response(world.etsi_auth_response)),
    ]

    rows = []
    for message, standard, phase, op in operations:
        for _ in range(warmup):
            op()
        samples = []
        for _ in range(iterations):
            start = time.perf_counter_ns()
            op()
            samples.append(time.perf_counter_ns() - start)
        rows.append(TimingRow(message, standard, phase, samples,
                              REFERENCE_TIMINGS_MS.get((message, phase))))
    return rows


# --- ordering checks ---------------------------------------------------------


def _length(report: BenchReport, message: str) -> int:
    for row in report.length_rows:
        if row.message == message and not row.extra:
            return row.measured_bytes
    raise KeyError(f"no length row for {message}")


def _median(report: BenchReport, message: str, phase: str) -> float:
    for row in report.timing_rows:
        if row.message == message and row.phase == phase:
            return row.median_ms
    raise KeyError(f"no timing row for {message}/{phase}")


def check_orderings(report: BenchReport) -> list[Verdict]:
    """Evaluate the named ordering claims; strict inequality throughout.

    Length checks always run; timing checks run when the report carries
    timing rows. Each verdict records both compared values.
    """
    verdicts = []

    def length_check(name: str, lhs: str, rhs: str) -> None:
        lhs_value, rhs_value = _length(report, lhs), _length(report, rhs)
        verdicts.append(Verdict(name, "length", lhs_value > rhs_value,
                                f"len({lhs})", lhs_value, f"len({rhs})", rhs_value))

    length_check("len:EnrolmentRequest>EeEcaCertRequestSpdu",
                 "EnrolmentRequest", "EeEcaCertRequestSpdu")
    length_check("len:AuthorizationRequest>EeRaCertRequestSpdu",
                 "AuthorizationRequest", "EeRaCertRequestSpdu")
    length_check("len:EcaEeCertResponseSpdu>EnrolmentResponse",
                 "EcaEeCertResponseSpdu", "EnrolmentResponse")

    info_len = _length(report, "RaEeCertInfoSpdu")
    others = [(row.message, row.measured_bytes) for row in report.length_rows
              if not row.extra and row.message != "RaEeCertInfoSpdu"]
    smallest_other = min(others, key=lambda pair: pair[1])
    verdicts.append(Verdict(
        "len:RaEeCertInfoSpdu-is-minimum", "length", info_len < smallest_other[1],
        "len(RaEeCertInfoSpdu)", info_len, f"min(len({smallest_other[0]}))", smallest_other[1],
        relation="<"))

    if report.timing_rows:
        def timing_check(name: str, lhs: str, rhs: str, phase_lhs: str, phase_rhs: str) -> None:
            lhs_value = _median(report, lhs, phase_lhs)
            rhs_value = _median(report, rhs, phase_rhs)
            verdicts.append(Verdict(
                name, "timing", lhs_value > rhs_value,
                f"t_{phase_lhs[:3]}({lhs})", round(lhs_value, 3),
                f"t_{phase_rhs[:3]}({rhs})", round(rhs_value, 3)))

        timing_check("time:gen:EnrolmentRequest>EeEcaCertRequestSpdu",
                     "EnrolmentRequest", "EeEcaCertRequestSpdu", GENERATE, GENERATE)
        timing_check("time:gen:AuthorizationRequest>EeRaCertRequestSpdu",
                     "AuthorizationRequest", "EeRaCertRequestSpdu", GENERATE, GENERATE)
        timing_check("time:proc:EcaEeCertResponseSpdu>EnrolmentResponse",
                     "EcaEeCertResponseSpdu", "EnrolmentResponse", PROCESS, PROCESS)

    report.verdicts = verdicts
    return verdicts


def build_report(params: BenchParams, with_timings: bool = True) -> BenchReport:
    report = BenchReport(params)
    report.length_rows = measure_lengths(params)
    if with_timings:
        report.timing_rows = measure_timings(params)
    check_orderings(report)
    return report


# --- emission ----------------------------------------------------------------

_CSV_COLUMNS = ["kind", "name", "standard", "phase", "value", "unit",
                "p10", "p90", "reference", "detail"]


def emit(report: BenchReport, format: str, path: Path | str) -> Path:
    """Write the report as csv or markdown with a stable layout; emitting the
    same report twice produces identical bytes."""
    path = Path(path)
    if format == "csv":
        text = _render_csv(report)
    elif format == "md":
        text = _render_markdown(report)
    else:
        raise ValueError(f"unknown format {format!r}; expected csv or md")
    path.write_text(text)
    return path


def _render_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for row in report.length_rows:
        writer.writerow(["length", row.message, row.standard, "", row.measured_bytes, "B",
                         "", "", row.reference_bytes if row.reference_bytes is not None else "",
                         "informational" if row.extra else ""])
    for row in report.timing_rows:
        writer.writerow(["timing", row.message, row.standard, row.phase,
                         f"{row.median_ms:.3f}", "ms", f"{row.p10_ms:.3f}", f"{row.p90_ms:.3f}",
                         row.reference_ms if row.reference_ms is not None else "", ""])
    for verdict in report.verdicts:
        writer.writerow(["verdict", verdict.name, "", "", "pass" if verdict.passed else "fail",
                         "", verdict.lhs_value, verdict.rhs_value, "",
                         f"{verdict.lhs_label} vs {verdict.rhs_label}"])
    return buf.getvalue()


_LENGTH_PAIRS = [
    ("EeEcaCertRequestSpdu", "EnrolmentRequest"),
    ("EcaEeCertResponseSpdu", "EnrolmentResponse"),
    ("EeRaCertRequestSpdu", "AuthorizationRequest"),
    ("RaEeCertInfoSpdu", "AuthorizationResponse"),
    ("AcaResponse", None),
    ("CertBatchArchive", None),
]

_TIMING_PAIRS = [
    (("EeEcaCertRequestSpdu", GENERATE), ("EnrolmentRequest", GENERATE)),
    (("EcaEeCertResponseSpdu", PROCESS), ("EnrolmentResponse", PROCESS)),
    (("EeRaCertRequestSpdu", GENERATE), ("AuthorizationRequest", GENERATE)),
    (("RaEeCertInfoSpdu and AcaResponse", PROCESS), ("AuthorizationResponse", PROCESS)),
    (("RaEeCertInfoSpdu", PROCESS), (None, None)),
    (("AcaResponse", PROCESS), (None, None)),
]


def _render_markdown(report: BenchReport) -> str:
    lengths = {row.message: row for row in report.length_rows}
    timings = {(row.message, row.phase): row for row in report.timing_rows}
    lines = ["# Provisioning message comparison", ""]

    if report.length_rows:
        lines += ["## Message lengths (bytes)", ""]
        lines.append("| IEEE message | measured | reference | ETSI message | measured | reference |")
        lines.append("|---|---:|---:|---|---:|---:|")

        def length_cells(name: Optional[str]) -> list[str]:
            if name is None or name not in lengths:
                return ["", "", ""]
            row = lengths[name]
            return [row.message, str(row.measured_bytes),
                    str(row.reference_bytes) if row.reference_bytes is not None else "-"]

        for ieee_name, etsi_name in _LENGTH_PAIRS:
            lines.append("| " + " | ".join(length_cells(ieee_name) + length_cells(etsi_name)) + " |")
        extras = [row for row in report.length_rows if row.extra]
        if extras:
            lines += ["", "Informational: " + ", ".join(
                f"{row.message} = {row.measured_bytes} B" for row in extras)]

    if report.timing_rows:
        iterations = len(report.timing_rows[0].samples_ns)
        lines += ["", f"## Computation times (ms, median of {iterations} runs)", ""]
        lines.append("| IEEE message | phase | median | reference | ETSI message | phase | median | reference |")
        lines.append("|---|---|---:|---:|---|---|---:|---:|")

        def timing_cells(key: tuple[Optional[str], Optional[str]]) -> list[str]:
            if key[0] is None or key not in timings:
                return ["", "", "", ""]
            row = timings[key]
            return [row.message, row.phase, f"{row.median_ms:.3f}",
                    str(row.reference_ms) if row.reference_ms is not None else "-"]

        for ieee_key, etsi_key in _TIMING_PAIRS:
            lines.append("| " + " | ".join(timing_cells(ieee_key) + timing_cells(etsi_key)) + " |")

    if report.verdicts:
        lines += ["", "## Ordering checks", ""]
        for verdict in report.verdicts:
            lines.append(f"- {verdict.describe()}")
    lines.append("")
    return "\n".join(lines)
