import click

from selshare.data.planted import save_planted_spec
from selshare.schemas.planted import PlantedSpec


@click.command("planted-spec")
@click.argument("out_path", type=click.Path(dir_okay=False))
@click.option("--n-tasks", type=int, default=6)
@click.option("--n-groups", type=int, default=2)
@click.option("--noise", type=float, default=0.1)
@click.option("--n-samples", type=int, default=1024)
@click.option("--kind", type=click.Choice(["regression", "ranking"]), default="regression")
@click.option("--seed", type=int, default=0)
def planted_spec(out_path, n_tasks, n_groups, noise, n_samples, kind, seed):
    """Write a seeded planted-group task set spec (JSON)."""
    spec = PlantedSpec(n_tasks=n_tasks, n_groups=n_groups, noise=noise, n_samples=n_samples,
                       kind=kind, seed=seed)
    path = save_planted_spec(spec, out_path)
    click.echo(f"planted spec written to {path}")
