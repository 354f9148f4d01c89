"""
mixkin_cli — Entry point for the ``mixkin`` console command.

    mixkin <scenario> [--config PATH] [--threads N] [--emit-plot-data]
                      [--resume SNAPSHOT] [--output-dir DIR] [--verbose]

Exit status: 0 success, 2 configuration error, 3 numerical / solver /
geometry failure, 4 disk I/O failure.
"""
from __future__ import annotations

import logging
import sys
from typing import List, Optional

import click

from mixkin.app import EXIT_CONFIG, Scenario, exit_code_for, load_config, run

logger = logging.getLogger("mixkin")


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("scenario", type=click.Choice([s.value for s in Scenario]))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="TOML configuration file (defaults to the desk preset).")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker threads for slice-parallel sweeps and solves.")
@click.option("--emit-plot-data", is_flag=True, default=False,
              help="Also write gnuplot-ready matrices of 2D slices.")
@click.option("--resume", type=click.Path(dir_okay=False), default=None,
              help="Continue from a snapshot written by an earlier run.")
@click.option("--output-dir", default=None,
              help="Output root (overrides $MIXKIN_OUTPUT_ROOT and [run].output_dir).")
@click.option("--verbose", "-v", is_flag=True, default=False, help="Debug logging.")
@click.pass_context
def cli(ctx: click.Context, scenario: str, config_path: Optional[str], threads: Optional[int],
        emit_plot_data: bool, resume: Optional[str], output_dir: Optional[str], verbose: bool) -> None:
    """Run one mixkin scenario: steady, gc-persist, gc-perturb or dk-itg."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
    )
    try:
        config = load_config(config_path, scenario)
        if threads is not None:
            config.run.threads = threads
        run(config, output_root=output_dir, emit_plot_data=emit_plot_data, resume=resume)
    except Exception as exc:
        code = exit_code_for(exc)
        if code is None:
            raise
        logger.error(f"{type(exc).__name__}: {exc}")
        click.echo(f"error: {exc}", err=True)
        ctx.exit(code)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="mixkin", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG if isinstance(exc, click.UsageError) else exc.exit_code
    return int(rv or 0)


if __name__ == "__main__":
    sys.exit(main())
