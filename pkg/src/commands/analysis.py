import os
import json
import logging

import click

from src.commands.common import open_dataset, require_path
from src.config import Config
from src.decorators.cli_errors import handle_cli_errors
from src.decorators.config_options import with_run_config
from src.exceptions import ConfigError
from src.services.ablation_service import SUITES, run_ablation
from src.services.probe_service import DEFAULT_RANDOM_TRIALS, mask_probe, probe_positives, write_attention_maps
from src.services.trainer_service import gradient_check, load_model
from src.utils.helpers import atomic_write_text, parse_int_list

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-5


def _load(run_config, split, image_id):
    dataset = open_dataset(run_config)
    table = dataset.action_table()
    model = load_model(run_config, require_path(run_config, "checkpoint"), table.n_actions)
    images = dataset.detections(split)
    if image_id is not None and image_id not in images:
        raise click.BadParameter(f"unknown image id {image_id!r} in split {split}", param_hint="--image-id")
    return dataset, table, model, images


@click.command("attn-viz")
@handle_cli_errors
@with_run_config
@click.option("--image-id", required=True)
@click.option("--pair", type=int, default=0, show_default=True)
@click.option("--layer", type=int, default=0, show_default=True)
@click.option("--head", type=int, default=0, show_default=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
def attn_viz(run_config, image_id, pair, layer, head, split):
    """Write the five attention-term heatmaps (raw and softmax) and an overlay into --output."""
    out_dir = require_path(run_config, "output")
    Config.setup_directories(out_dir)
    dataset, _, model, images = _load(run_config, split, image_id)
    try:
        paths = write_attention_maps(model, images[image_id], dataset.feature_map(split, image_id),
                                     pair, layer, head, out_dir)
    except IndexError as e:
        raise click.BadParameter(str(e), param_hint="--pair/--layer/--head")
    click.echo(json.dumps({"files": paths}))


@click.command("mask-probe")
@handle_cli_errors
@with_run_config
@click.option("--image-id", default=None, help="Probe one image; without it, probe positive pairs of the split.")
@click.option("--pair", type=int, default=0, show_default=True)
@click.option("--fraction", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.1,
              show_default=True)
@click.option("--random-trials", type=click.IntRange(min=0), default=DEFAULT_RANDOM_TRIALS, show_default=True,
              help="Seeded random masks of the same size scored per probe.")
@click.option("--positives", type=click.IntRange(min=1), default=100, show_default=True,
              help="Number of positive pairs to probe when --image-id is omitted.")
@click.option("--min-action", type=click.IntRange(min=0), default=None,
              help="Only probe positives whose action id is at least this value "
                   "(default: the dataset's first blob-decidable action).")
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
def mask_probe_command(run_config, image_id, pair, fraction, random_trials, positives, min_action, split):
    """Zero the most-attended feature cells of a pair and report the fused-score change."""
    dataset, table, model, images = _load(run_config, split, image_id)
    seed = run_config.train.seed
    if image_id is None:
        if min_action is None:
            min_action = dataset.config().synth.n_geometry_actions if os.path.isfile(dataset.config_path) else 0
        summary = probe_positives(model, dataset, split, fraction, min_action, positives, random_trials, seed)
        payload = summary.to_dict()
    else:
        try:
            payload = mask_probe(model, images[image_id], dataset.feature_map(split, image_id), table, pair,
                                 fraction, random_trials, seed).to_dict()
        except IndexError as e:
            raise click.BadParameter(str(e), param_hint="--pair")
    text = json.dumps(payload)
    if run_config.paths.output:
        atomic_write_text(run_config.paths.output, text + "\n")
    click.echo(text)


@click.command("gradcheck")
@handle_cli_errors
@with_run_config
@click.option("--max-coords", type=click.IntRange(min=1), default=None,
              help="Check at most this many random coordinates per parameter tensor.")
def gradcheck(run_config, max_coords):
    """Finite-difference check of the configured variant on a tiny instance."""
    worst = gradient_check(run_config, run_config.train.seed, max_coords_per_param=max_coords)
    passed = worst < GRADCHECK_TOLERANCE
    click.echo(json.dumps({"max_rel_error": worst, "tolerance": GRADCHECK_TOLERANCE, "passed": bool(passed)}))
    if not passed:
        click.get_current_context().exit(1)


@click.command("ablate")
@handle_cli_errors
@with_run_config
@click.option("--suite", type=click.Choice(sorted(SUITES)), required=True)
@click.option("--seeds", default="0,1,2", show_default=True, help="Comma-separated training seeds.")
def ablate(run_config, suite, seeds):
    """Train every variant of a suite and write the comparison table into --output."""
    try:
        seed_list = parse_int_list(seeds)
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {seeds!r}") from None
    open_dataset(run_config)
    report = run_ablation(suite, run_config, run_config.paths.dataset, require_path(run_config, "output"), seed_list)
    click.echo(json.dumps({"suite": suite, "passed": report.passed,
                           "means": {r.variant.name: r.mean_full for r in report.results}}))
