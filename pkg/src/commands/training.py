import os
import json
import logging

import click

from src.commands.common import open_dataset, require_path
from src.config import Config
from src.decorators.cli_errors import handle_cli_errors
from src.decorators.config_options import with_run_config
from src.services.trainer_service import TrainerService, infer as run_inference

logger = logging.getLogger(__name__)


@click.command("train")
@handle_cli_errors
@with_run_config
@click.option("--resume", "resume_from", type=click.Path(dir_okay=False), default=None,
              help="Continue from a checkpoint written by an earlier run.")
def train(run_config, resume_from):
    """Train on the dataset's train split; writes checkpoint, metrics and config into --output."""
    dataset = open_dataset(run_config)
    trainer = TrainerService(run_config, dataset)
    Config.setup_directories(trainer.out_dir)
    if resume_from:
        trainer.resume(resume_from)
    checkpoint = trainer.train()
    click.echo(json.dumps({"checkpoint": checkpoint, "metrics": trainer.metrics_path, "steps": trainer.step}))


@click.command("infer")
@handle_cli_errors
@with_run_config
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
def infer(run_config, split):
    """Score every pair of a split with --checkpoint; writes a results file to --output."""
    checkpoint = require_path(run_config, "checkpoint")
    dataset = open_dataset(run_config)
    out_path = run_config.paths.output or os.path.join(os.path.dirname(os.path.abspath(checkpoint)),
                                                       f"results_{split}.jsonl")
    count = run_inference(run_config, checkpoint, dataset, out_path, split)
    click.echo(json.dumps({"results": out_path, "records": count}))
