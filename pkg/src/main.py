"""
SVD Attack Workbench - Main Entry Point

Command-line driver: train -> attack -> eval -> sweep -> cka -> cam.
"""

import logging
import sys
from typing import Optional, Tuple

import click
from pythonjsonlogger import jsonlogger

from .config import RunConfig, load_run_config, settings
from .core.exceptions import WorkbenchError
from .core.models import SweepAxis

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None) -> None:
    """Stdout handler plus an optional file handler, text or JSON"""
    formatter = (
        jsonlogger.JsonFormatter(LOG_FORMAT) if settings.log_json else logging.Formatter(LOG_FORMAT)
    )
    stream = logging.StreamHandler(sys.stdout)
    stream.setFormatter(formatter)
    handlers = [stream]

    if settings.log_full_path:
        try:
            file_handler = logging.FileHandler(settings.log_full_path)
            file_handler.setFormatter(formatter)
            handlers.append(file_handler)
        except Exception as e:
            logging.warning(f"Could not set up file logging: {e}")

    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper()),
        handlers=handlers,
        force=True,
    )


def _parse_sets(pairs: Tuple[str, ...]) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.BadParameter(f"expected key=value, got '{pair}'", param_hint="--set")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _run(ctx: click.Context, command, *args):
    """Invoke a harness command, turning expected failures into one-line errors"""
    config: RunConfig = ctx.obj["config"]
    try:
        return command(config, *args)
    except WorkbenchError as e:
        raise click.ClickException(str(e)) from e
    except FileNotFoundError as e:
        raise click.ClickException(f"file not found: {e.filename}") from e
    except Exception as e:
        logger.error(f"Unhandled exception: {e}", exc_info=True)
        raise


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Run config file (key = value lines)")
@click.option("--seed", type=int, default=None, help="Global seed")
@click.option("--out", "output_dir", type=click.Path(file_okay=False), default=None, help="Output directory")
@click.option("--threads", type=int, default=None, help="Worker threads")
@click.option("--set", "sets", multiple=True, help="Override a config key, e.g. --set epsilon=8")
@click.option("--log-level", default=None, help="Override the logging level")
@click.pass_context
def cli(ctx: click.Context, config_path, seed, output_dir, threads, sets, log_level):
    """SVD feature-decomposition transfer-attack workbench."""
    overrides = _parse_sets(sets)
    overrides.update({"seed": seed, "output_dir": output_dir, "threads": threads})
    try:
        config = load_run_config(config_path, overrides)
    except WorkbenchError as e:
        raise click.ClickException(str(e)) from e
    try:
        settings.ensure_directories(config.output_dir)
    except OSError as e:
        raise click.ClickException(f"cannot create output directory {config.output_dir}: {e}") from e
    setup_logging(log_level)
    ctx.obj = {"config": config}


@cli.command("gen-data")
@click.pass_context
def gen_data(ctx):
    """Generate the synthetic-shapes train and test splits."""
    from .harness.commands import cmd_gen_data

    for split, (images, labels) in _run(ctx, cmd_gen_data).items():
        click.echo(f"{split}: {images} {labels}")


@cli.command()
@click.pass_context
def train(ctx):
    """Train every configured architecture."""
    from .harness.commands import cmd_train

    for name, path in _run(ctx, cmd_train).items():
        click.echo(f"{name}: {path}")


@cli.command()
@click.pass_context
def attack(ctx):
    """Craft adversarial batches on each source model."""
    from .harness.commands import cmd_attack

    for path in _run(ctx, cmd_attack):
        click.echo(str(path))


@cli.command("eval")
@click.pass_context
def evaluate(ctx):
    """Transfer matrix for every preset, with and without the SVD hook."""
    from .harness.commands import cmd_eval

    for name, path in _run(ctx, cmd_eval).items():
        click.echo(f"{name}: {path}")


@cli.command()
@click.option("--axis", type=click.Choice([a.value for a in SweepAxis]), required=True,
              help="Parameter swept")
@click.pass_context
def sweep(ctx, axis):
    """Ablation over beta, k or the hooked layer."""
    from .harness.commands import cmd_sweep

    for name, path in _run(ctx, cmd_sweep, SweepAxis(axis)).items():
        click.echo(f"{name}: {path}")


@cli.command()
@click.pass_context
def cka(ctx):
    """Layerwise and cross-model linear CKA reports."""
    from .harness.commands import cmd_cka

    for name, path in _run(ctx, cmd_cka).items():
        click.echo(f"{name}: {path}")


@cli.command()
@click.pass_context
def cam(ctx):
    """Eigen-CAM saliency maps for clean and adversarial images."""
    from .harness.commands import cmd_cam

    paths = _run(ctx, cmd_cam)
    click.echo(f"wrote {len(paths)} saliency maps")


def run():
    cli(obj={})


if __name__ == "__main__":
    run()
