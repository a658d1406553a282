"""Command-line interface: PKI bootstrap, authority services, benchmarks.

`bench lengths` and `bench timings` write the delimited report to the
requested path and render the matching figure next to it. `bench check`
evaluates the ordering claims and exits nonzero when one fails; by
default only the deterministic length checks run, `--strict` adds the
machine-sensitive timing checks.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import bench as bench_mod
from . import golden as golden_mod
from . import service as service_mod


def _parse_address(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"expected HOST:PORT, got {value!r}")
    return host, int(port)


@click.group()
@click.version_option()
def main():
    """Dual-standard vehicular PKI toolkit."""


@main.command("pki-init")
@click.argument("topology", type=click.Choice(["ieee", "etsi"]))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path),
              help="Directory for the generated keys and certificates.")
@click.option("--chain-depth", default=3, show_default=True,
              help="Authority chain length for the ieee topology.")
@click.option("--force", is_flag=True, help="Overwrite existing files.")
def pki_init_cmd(topology: str, out_dir: Path, chain_depth: int, force: bool):
    """Generate a certificate hierarchy on disk."""
    try:
        written = service_mod.pki_init(topology, out_dir, chain_depth=chain_depth, force=force)
    except FileExistsError as exc:
        raise click.ClickException(str(exc)) from exc
    for path in written:
        click.echo(str(path))


@main.command()
@click.option("--role", required=True, type=click.Choice(service_mod.ROLES))
@click.option("--listen", default="127.0.0.1:0", show_default=True,
              help="HOST:PORT to bind.")
@click.option("--keys-dir", envvar="V2X_KEYS_DIR", required=True,
              type=click.Path(path_type=Path),
              help="Hierarchy directory (defaults to $V2X_KEYS_DIR).")
@click.option("--init", "init_", is_flag=True,
              help="Initialise the hierarchy first if files are missing.")
@click.option("--force", is_flag=True, help="With --init, overwrite existing files.")
@click.option("--upstream-ea", default=None, help="HOST:PORT of the EA (required for aa).")
@click.option("--upstream-aca", default=None, help="HOST:PORT of the ACA (required for ra).")
@click.option("--download-delay-ms", default=0, show_default=True,
              help="Delay advertised in authorization acks.")
@click.option("--chain-depth", default=3, show_default=True,
              help="Chain depth used with --init on the ieee side.")
def serve(role: str, listen: str, keys_dir: Path, init_: bool, force: bool,
          upstream_ea: str | None, upstream_aca: str | None,
          download_delay_ms: int, chain_depth: int):
    """Run one authority as a framed-TCP service until interrupted."""
    try:
        config = service_mod.AuthorityConfig(
            role=role,
            listen=_parse_address(listen),
            keys_dir=keys_dir,
            upstream_ea=_parse_address(upstream_ea) if upstream_ea else None,
            upstream_aca=_parse_address(upstream_aca) if upstream_aca else None,
            download_delay_ms=download_delay_ms,
            chain_depth=chain_depth,
            init=init_,
            force=force,
        )
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    try:
        service_mod.serve(config)
    except (service_mod.ServiceError, OSError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc)) from exc


def _bench_params(chain_depth: int, cert_count: int, seed: int, **extra) -> bench_mod.BenchParams:
    return bench_mod.BenchParams(chain_depth=chain_depth, cert_count=cert_count,
                                 seed=seed, **extra)


def _emit_with_figure(report: bench_mod.BenchReport, out: Path | None, format: str,
                      figure: bool, render) -> None:
    if out is None:
        click.echo(bench_mod._render_markdown(report))
        return
    bench_mod.emit(report, format, out)
    click.echo(f"wrote {out}")
    if figure:
        from . import plots

        figure_path = out.with_suffix(".png")
        render(plots, figure_path)
        click.echo(f"wrote {figure_path}")


_shared_bench_options = [
    click.option("--chain-depth", default=3, show_default=True),
    click.option("--cert-count", default=5, show_default=True),
    click.option("--seed", default=1, show_default=True),
]


def _apply(options, command):
    for option in reversed(options):
        command = option(command)
    return command


@main.group()
def bench():
    """Message-length and computation-time comparison."""


@bench.command("lengths")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Report file; rendered to stdout as markdown when omitted.")
@click.option("--format", "format_", type=click.Choice(["csv", "md"]), default="csv",
              show_default=True)
@click.option("--figure/--no-figure", default=True, show_default=True,
              help="Render a bar-chart figure next to the report file.")
def bench_lengths(out: Path | None, format_: str, figure: bool,
                  chain_depth: int, cert_count: int, seed: int):
    """Measure the encoded length of every flow message."""
    params = _bench_params(chain_depth, cert_count, seed)
    report = bench_mod.BenchReport(params, length_rows=bench_mod.measure_lengths(params))
    bench_mod.check_orderings(report)
    _emit_with_figure(report, out, format_, figure,
                      lambda plots, path: plots.render_length_figure(report.length_rows, path))


bench_lengths = _apply(_shared_bench_options, bench_lengths)


@bench.command("timings")
@click.option("--iterations", default=100, show_default=True,
              help="Samples per message; the contract minimum is 100.")
@click.option("--warmup", default=10, show_default=True,
              help="Discarded warm-up runs per message.")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--format", "format_", type=click.Choice(["csv", "md"]), default="csv",
              show_default=True)
@click.option("--figure/--no-figure", default=True, show_default=True)
def bench_timings(iterations: int, warmup: int, out: Path | None, format_: str,
                  figure: bool, chain_depth: int, cert_count: int, seed: int):
    """Measure client-side generate and process times per message."""
    params = _bench_params(chain_depth, cert_count, seed,
                           iterations=iterations, warmup=warmup)
    try:
        rows = bench_mod.measure_timings(params)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    report = bench_mod.BenchReport(params, timing_rows=rows)
    _emit_with_figure(report, out, format_, figure,
                      lambda plots, path: plots.render_timing_figure(report.timing_rows, path))


bench_timings = _apply(_shared_bench_options, bench_timings)


@bench.command("check")
@click.option("--strict", is_flag=True,
              help="Also run and enforce the machine-sensitive timing checks.")
@click.option("--iterations", default=100, show_default=True)
@click.option("--warmup", default=10, show_default=True)
@click.option("--pad-ieee-request", default=0, hidden=True,
              help="Falsifiability hook: inflate recorded IEEE request lengths.")
def bench_check(strict: bool, iterations: int, warmup: int, pad_ieee_request: int,
                chain_depth: int, cert_count: int, seed: int):
    """Evaluate the ordering claims; exit nonzero on any failed verdict."""
    params = _bench_params(chain_depth, cert_count, seed,
                           iterations=iterations, warmup=warmup,
                           pad_ieee_request=pad_ieee_request)
    report = bench_mod.BenchReport(params, length_rows=bench_mod.measure_lengths(params))
    if strict:
        try:
            report.timing_rows = bench_mod.measure_timings(params)
        except ValueError as exc:
            raise click.ClickException(str(exc)) from exc
    verdicts = bench_mod.check_orderings(report)
    failed = 0
    for verdict in verdicts:
        click.echo(verdict.describe())
        failed += 0 if verdict.passed else 1
    if failed:
        click.echo(f"{failed} ordering check(s) failed", err=True)
        sys.exit(1)


bench_check = _apply(_shared_bench_options, bench_check)


@main.group()
def golden():
    """Golden-vector corpus management."""


@golden.command("regen")
@click.option("--dir", "directory", type=click.Path(path_type=Path),
              default=golden_mod.DEFAULT_DIR, show_default=True)
def golden_regen(directory: Path):
    """Rebuild every golden-vector file (the only way they change)."""
    for path in golden_mod.write_corpus(directory):
        click.echo(str(path))


@golden.command("check")
@click.option("--dir", "directory", type=click.Path(path_type=Path),
              default=golden_mod.DEFAULT_DIR, show_default=True)
def golden_check(directory: Path):
    """Verify the stored vectors match a fresh build; exit nonzero otherwise."""
    mismatches = golden_mod.check_corpus(directory)
    if mismatches:
        for name in mismatches:
            click.echo(f"mismatch: {name}", err=True)
        sys.exit(1)
    click.echo(f"{len(golden_mod.BUILDERS)} golden vectors match")


if __name__ == "__main__":
    main()
