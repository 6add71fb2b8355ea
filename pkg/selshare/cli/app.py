import click
from pydantic import ValidationError

from selshare import __version__
from selshare.cli.commands import compare, evaluate, inspect, planted, run
from selshare.core.exceptions import ConfigurationError, SelShareError
from selshare.core.logger import logger


class HandledGroup(click.Group):
    """Maps domain errors to their exit codes, like HTTP exception handlers map them to status codes"""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except SelShareError as exc:
            logger.error(f"❌ {type(exc).__name__}: {exc.detail}")
            click.echo(f"Error: {exc.detail}", err=True)
            ctx.exit(exc.exit_code)
        except ValidationError as exc:
            errors = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
            logger.error(f"❌ Validation error: {errors}")
            click.echo(f"Error: {errors}", err=True)
            ctx.exit(ConfigurationError.exit_code)
        except Exception as exc:
            logger.exception(f"💥 Unexpected error: {exc!r}")
            click.echo(f"Error: {exc!r}", err=True)
            ctx.exit(1)


@click.group(cls=HandledGroup)
@click.version_option(__version__, prog_name="selshare")
def cli():
    """Selective Sharing: multi-task training that merges related branches on the fly."""


cli.add_command(run.run)
cli.add_command(evaluate.eval_checkpoint)
cli.add_command(inspect.inspect_trace_cmd)
cli.add_command(compare.compare)
cli.add_command(planted.planted_spec)
