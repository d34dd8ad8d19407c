import logging

import click

from src.config import Config
from src.commands.analysis import ablate, attn_viz, gradcheck, mask_probe_command
from src.commands.data import synth
from src.commands.evaluation import evaluate
from src.commands.training import infer, train

# Configure logging
Config.setup_logging()
logger = logging.getLogger(__name__)

# Validate environment variables
Config.validate_env_vars()


@click.group()
@click.version_option("1.0.0", prog_name="pairguide")
def cli():
    """Pair-guided cross-attention decoder for two-stage HOI detection."""


# Register commands
cli.add_command(synth)
cli.add_command(train)
cli.add_command(infer)
cli.add_command(evaluate)
cli.add_command(attn_viz)
cli.add_command(mask_probe_command)
cli.add_command(gradcheck)
cli.add_command(ablate)


if __name__ == "__main__":
    cli()
