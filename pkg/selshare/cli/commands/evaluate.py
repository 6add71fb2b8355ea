from pathlib import Path

import click

from selshare.core.exceptions import ConfigurationError
from selshare.data.loader import load_dataset
from selshare.engine.mtmodel import load_checkpoint
from selshare.models.enums import Split
from selshare.schemas.config import load_config
from selshare.services.evaluation import evaluate_split, mean_score
from selshare.services.traces import CONFIG_FILE


@click.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", type=click.Choice([s.value for s in Split]), default=Split.TEST.value)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Defaults to config.json of the run the checkpoint belongs to.")
def eval_checkpoint(checkpoint_path, split, config_path):
    """Score a saved checkpoint on one split."""
    checkpoint_path = Path(checkpoint_path)
    if config_path is None:
        config_path = checkpoint_path.parent.parent / CONFIG_FILE
        if not config_path.is_file():
            raise ConfigurationError(f"no --config given and no {CONFIG_FILE} next to {checkpoint_path.parent}")
    config = load_config(config_path)
    model, epoch = load_checkpoint(checkpoint_path)
    data = load_dataset(config.dataset, config.seed)
    metrics = evaluate_split(model, data, Split(split))

    click.echo(f"checkpoint epoch: {epoch} | split: {split}")
    for m in metrics:
        click.echo(f"task {m.task_id}: {m.metric_name}={m.metric!r} loss={m.loss!r}")
    click.echo(f"score: {mean_score(model, metrics)!r}")
