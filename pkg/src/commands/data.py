import os
import json
import logging

import click

from src.config import Config
from src.decorators.cli_errors import handle_cli_errors
from src.decorators.config_options import with_run_config
from src.services.synthesis_service import SynthesisService

logger = logging.getLogger(__name__)


@click.command("synth")
@handle_cli_errors
@with_run_config
def synth(run_config):
    """Generate a synthetic HOI dataset into --output (or --dataset)."""
    out_dir = run_config.paths.output or run_config.paths.dataset or os.path.join(Config.DATA_DIR, "synthetic")
    Config.setup_directories(out_dir)
    summary = SynthesisService(run_config).emit_dataset(out_dir)
    click.echo(json.dumps({"dataset": out_dir, **summary}))
