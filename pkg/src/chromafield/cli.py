"""Command-line interface: one verb per pipeline stage plus a composite.

    chromafield gen-scene SPEC OUT_DIR
    chromafield train-luma --config cfg.toml
    chromafield distill --config cfg.toml
    chromafield render --config cfg.toml
    chromafield evaluate --config cfg.toml [--renders DIR]
    chromafield pipeline --config cfg.toml

Config files are TOML (JSON accepted). CHROMA_LOG sets the log level.
"""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import click

from .config import PipelineConfig, load_structured
from .grid import load_grid
from .pipeline import (
    STAGE1_CHECKPOINT,
    run_distill,
    run_evaluate,
    run_pipeline,
    run_render,
    run_train,
)
from .scenegen import bake_dataset, desk_scene, scene_from_dict

log = logging.getLogger("chromafield")


def _setup_logging() -> None:
    level = os.environ.get("CHROMA_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _apply_threads(threads: int | None) -> None:
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, threads))


def _load_config(path: str, seed: int | None) -> PipelineConfig:
    cfg = PipelineConfig.load(path)
    if not cfg.dataset_dir or not cfg.output_dir:
        raise click.ClickException(
            f"{path}: config must set dataset_dir and output_dir"
        )
    if not Path(cfg.dataset_dir).is_dir():
        raise click.ClickException(f"dataset_dir does not exist: {cfg.dataset_dir}")
    if seed is not None:
        cfg.seed = seed
        cfg.train.seed = seed
        cfg.distill.seed = seed
    return cfg


config_opt = click.option("--config", "config_path", required=True,
                          type=click.Path(exists=True, dir_okay=False))
threads_opt = click.option("--threads", type=int, default=None,
                           help="cap worker threads")
seed_opt = click.option("--seed", type=int, default=None,
                        help="override every configured seed")
resume_opt = click.option("--resume/--no-resume", default=True,
                          help="skip stages whose artifacts already exist")


@click.group()
def main() -> None:
    """Grayscale radiance fields with teacher-distilled chroma."""
    _setup_logging()


@main.command("gen-scene")
@click.argument("spec", type=click.Path(dir_okay=False), required=False)
@click.argument("out_dir", type=click.Path(file_okay=False), required=False)
@click.option("--preset", type=click.Choice(["desk"]), default=None,
              help="use a built-in scene instead of a spec file")
@seed_opt
def cmd_gen_scene(spec, out_dir, preset, seed) -> None:
    """Bake a synthetic scene spec (JSON/TOML) into a dataset directory."""
    if out_dir is None:
        # just one positional: it is the output directory (preset mode)
        spec, out_dir = None, spec
    if out_dir is None:
        raise click.ClickException("missing OUT_DIR argument")
    try:
        if preset == "desk":
            scene = desk_scene(seed=seed or 0)
        elif spec is None:
            raise click.ClickException("either SPEC or --preset is required")
        else:
            scene = scene_from_dict(load_structured(spec))
    except (ValueError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc))
    bake_dataset(scene, out_dir)
    click.echo(f"baked {scene.rig.view_count}+{scene.rig.test_view_count} views to {out_dir}")


@main.command("train-luma")
@config_opt
@threads_opt
@seed_opt
@resume_opt
def cmd_train_luma(config_path, threads, seed, resume) -> None:
    """Stage 1: fit the luma field to the grayscale views."""
    _apply_threads(threads)
    cfg = _load_config(config_path, seed)
    try:
        run_train(cfg, resume=resume)
    except (ValueError, FileNotFoundError) as exc:
        raise click.ClickException(f"train-luma failed: {exc}")


@main.command("distill")
@config_opt
@threads_opt
@seed_opt
@resume_opt
def cmd_distill(config_path, threads, seed, resume) -> None:
    """Stage 2: distill teacher chroma into the trained field."""
    _apply_threads(threads)
    cfg = _load_config(config_path, seed)
    ckpt = Path(cfg.output_dir) / STAGE1_CHECKPOINT
    if not ckpt.exists():
        raise click.ClickException(
            f"distill needs a stage-1 checkpoint at {ckpt}; run train-luma first"
        )
    try:
        run_distill(cfg, load_grid(ckpt), resume=resume)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        raise click.ClickException(f"distill failed: {exc}")


@main.command("render")
@config_opt
@threads_opt
@resume_opt
def cmd_render(config_path, threads, resume) -> None:
    """Render the configured pose trajectory from the colorized field."""
    _apply_threads(threads)
    cfg = _load_config(config_path, None)
    from .pipeline import COLOR_CHECKPOINT

    ckpt = Path(cfg.output_dir) / COLOR_CHECKPOINT
    if not ckpt.exists():
        raise click.ClickException(
            f"render needs a colorized checkpoint at {ckpt}; run distill first"
        )
    run_render(cfg, load_grid(ckpt), resume=resume)


@main.command("evaluate")
@config_opt
@click.option("--renders", "renders_dir", type=click.Path(file_okay=False),
              default=None, help="frame directory (default: <output_dir>/renders)")
@resume_opt
def cmd_evaluate(config_path, renders_dir, resume) -> None:
    """Cross-view consistency report for a rendered sequence."""
    cfg = _load_config(config_path, None)
    renders = Path(renders_dir) if renders_dir else Path(cfg.output_dir) / "renders"
    if not (renders / "poses.json").exists():
        raise click.ClickException(f"no poses.json under {renders}")
    try:
        run_evaluate(cfg, renders, resume=resume)
    except ValueError as exc:
        raise click.ClickException(f"evaluate failed: {exc}")


@main.command("pipeline")
@config_opt
@threads_opt
@seed_opt
@resume_opt
def cmd_pipeline(config_path, threads, seed, resume) -> None:
    """Run train -> distill -> render -> evaluate end to end."""
    _apply_threads(threads)
    cfg = _load_config(config_path, seed)
    try:
        stages = run_pipeline(cfg, resume=resume)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        raise click.ClickException(f"pipeline failed: {exc}")
    for name, path in stages.items():
        click.echo(f"{name}: {path}")


if __name__ == "__main__":
    sys.exit(main())
