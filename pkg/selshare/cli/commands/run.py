import click

from selshare.models.enums import SharingCriterion
from selshare.schemas.config import load_config
from selshare.services.trainer import run_experiment

CRITERIA = [c.value for c in SharingCriterion]


@click.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Experiment config (JSON).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Run directory.")
@click.option("--criterion", type=click.Choice(CRITERIA), default=None, help="Override the sharing criterion.")
@click.option("--capture", type=click.Choice(["on", "off"]), default=None, help="Gradient tap on/off.")
@click.option("--epochs", type=int, default=None, help="Override the number of epochs.")
def run(config_path, seed, out_dir, criterion, capture, epochs):
    """Train one experiment and write its run directory."""
    config = load_config(config_path).with_overrides(**{
        "seed": seed,
        "output_dir": out_dir,
        "sharing.criterion": criterion,
        "capture.enabled": None if capture is None else capture == "on",
        "epochs": epochs,
    })
    result = run_experiment(config)
    summary = result.summary
    click.echo(f"run directory: {result.out_dir}")
    click.echo(f"best epoch: {summary.best_epoch} (val score {summary.best_val_score:.6f})")
    click.echo(f"test score: {summary.test_score:.6f}")
    click.echo(f"branches: {summary.final_branches} | params: {summary.initial_params} -> {summary.final_params}")
    click.echo(f"lock epoch: {'-' if summary.lock_epoch is None else summary.lock_epoch}")
