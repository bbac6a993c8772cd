"""CLI: chromafield-colorize INPUT_DIR OUTPUT_DIR --model identity"""

from __future__ import annotations

import sys

import click

from .models import MODELS, get_model
from .run import colorize_dir


@click.command()
@click.argument("input_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--model", "selector", default="identity",
              type=click.Choice(sorted(MODELS)), show_default=True)
def main(input_dir, output_dir, selector) -> None:
    """Colorize every PNG frame in INPUT_DIR into a teacher directory."""
    try:
        manifest = colorize_dir(input_dir, get_model(selector), output_dir)
    except (FileNotFoundError, ValueError) as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"{len(manifest.outputs)} frames colorized with {manifest.model}; "
        f"worst luma divergence "
        f"{max(manifest.luma_divergence.values(), default=0.0):.5f}"
    )
    if manifest.failures:
        for vid, err in manifest.failures.items():
            click.echo(f"FAILED {vid}: {err}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
