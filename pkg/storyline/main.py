import logging
import os

import click
from dotenv import load_dotenv
from pydantic import ValidationError

from storyline import __version__
from storyline.commands import evaluate, export_graph, gen, nsweep, predict, storyline, summarize, train
from storyline.exceptions import StorylineError

load_dotenv()

# Setup logging
logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


class StorylineGroup(click.Group):
    """
    Maps failures to exit codes: 1 for usage and validation errors, the error's own
    code for domain errors, 2 for anything unexpected.
    """

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except click.exceptions.Exit:
            raise
        except click.UsageError as e:
            e.show()
            raise click.exceptions.Exit(1)
        except StorylineError as e:
            logger.warning(f"{e.code}: {e.detail}")
            click.echo(f"Error [{e.code}]: {e.detail}", err=True)
            raise click.exceptions.Exit(e.exit_code)
        except ValidationError as e:
            logger.warning(f"Validation failed: {e}")
            click.echo(f"Error [validation_error]: {e}", err=True)
            raise click.exceptions.Exit(1)
        except Exception as e:
            logger.error(f"Unexpected error: {e}", exc_info=True)
            click.echo("Error: an unexpected error occurred, see the log for details", err=True)
            raise click.exceptions.Exit(2)


@click.group(cls=StorylineGroup)
@click.version_option(__version__, prog_name="storyline")
@click.option("--verbose", is_flag=True, help="Debug logging")
def cli(verbose):
    """Storyline extraction and album summarization with skipping RNNs."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


cli.add_command(gen)
cli.add_command(train)
cli.add_command(nsweep)
cli.add_command(storyline)
cli.add_command(summarize)
cli.add_command(export_graph)
cli.add_command(predict)
cli.add_command(evaluate)


def main():
    cli(prog_name="storyline")
