import click

from selshare.services.traces import inspect_trace


@click.command("inspect-trace")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Also write the per-epoch parameter/branch curve as CSV.")
def inspect_trace_cmd(run_dir, csv_path):
    """Summarize group formation and parameter curves of a run."""
    summary = inspect_trace(run_dir, csv_path)
    click.echo(f"epochs: {summary.epochs}")
    click.echo(f"lock epoch: {'-' if summary.lock_epoch is None else summary.lock_epoch}")
    click.echo(f"final branches: {summary.final_branches}")
    click.echo(f"final params: {summary.final_params}")
    for epoch, tasks in summary.groups:
        click.echo(f"epoch {epoch}: merged {tasks}")
    click.echo(f"branch groups: {summary.final_groups}")
    click.echo("param curve: " + " ".join(str(p) for p in summary.param_curve))
