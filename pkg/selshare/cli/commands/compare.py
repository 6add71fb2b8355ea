import click

from selshare.models.enums import SharingCriterion
from selshare.schemas.config import load_config
from selshare.services.compare import COMPARISON_FILE, compare_criteria


@click.command("compare")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--criterion", "criteria", multiple=True, type=click.Choice([c.value for c in SharingCriterion]),
              help="Repeatable; defaults to every criterion plus the none baseline.")
@click.option("--seed", type=int, default=None)
def compare(config_path, out_dir, criteria, seed):
    """Run one config under several sharing criteria."""
    config = load_config(config_path).with_overrides(seed=seed)
    results = compare_criteria(config, [SharingCriterion(c) for c in criteria] or None, out_dir)
    for criterion, result in results.items():
        s = result.summary
        click.echo(f"{criterion.value:>14}: test {s.test_score:.6f} | branches {s.final_branches} | "
                   f"params {s.final_params}")
    click.echo(f"written: {COMPARISON_FILE}")
