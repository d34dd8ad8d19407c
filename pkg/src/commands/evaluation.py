import json
import logging

import click

from src.commands.common import open_dataset
from src.decorators.cli_errors import handle_cli_errors
from src.decorators.config_options import with_run_config
from src.repositories.record_repository import RecordRepository
from src.services.evaluation_service import EvaluationService
from src.utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)


@click.command("eval")
@handle_cli_errors
@with_run_config
@click.option("--results", "results_path", type=click.Path(dir_okay=False), required=True)
@click.option("--setting", type=click.Choice(["default", "known-objects"]), default="default", show_default=True)
@click.option("--protocol", type=click.Choice(["hico", "vcoco"]), default="hico", show_default=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
def evaluate(run_config, results_path, setting, protocol, split):
    """Score a results file against the dataset's ground truth (mAP in percent)."""
    dataset = open_dataset(run_config)
    records = RecordRepository().load_results(results_path)
    gts = dataset.gt(split)
    service = EvaluationService(run_config.inference.iou_thresh)
    if protocol == "hico":
        summary = service.evaluate_hico(records, gts, dataset.split(), dataset.action_table(), setting).to_dict()
    else:
        summary = {"protocol": "vcoco", **service.evaluate_vcoco(records, gts)}
    text = json.dumps(summary, indent=2)
    if run_config.paths.output:
        atomic_write_text(run_config.paths.output, text + "\n")
    click.echo(text)
