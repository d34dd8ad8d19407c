"""
One command-line option per RunConfig key.

Options are `--<key>` in kebab case, or `--<section>-<key>` when the key
name appears in more than one section (e.g. `--train-seed`, `--synth-seed`).
Precedence: defaults < config file < PVIC_SEED < explicit options.
"""

import os
import logging
from collections import Counter
from dataclasses import fields
from functools import wraps
from typing import Dict, Tuple

import click

from src.config import (
    ACTIVATIONS, FEATURE_HEADS, LOSS_NORMS, PE_MODES, SECTIONS, SWITCHES, Config, RunConfig,
)

logger = logging.getLogger(__name__)

CHOICES = {
    "activation": ACTIVATIONS,
    "pe_mode": PE_MODES,
    "cross_attn": SWITCHES,
    "self_attn": SWITCHES,
    "feature_head": FEATURE_HEADS,
    "loss_norm": LOSS_NORMS,
}


def _click_type(key: str, default):
    if key in CHOICES:
        return click.Choice(CHOICES[key])
    if isinstance(default, bool):
        return click.BOOL
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def config_option_specs() -> Dict[str, Tuple[str, str, str, object]]:
    """{dest: (flag, section, key, click type)} for every RunConfig field."""
    counts = Counter(f.name for cls in SECTIONS.values() for f in fields(cls))
    specs = {}
    for section, cls in SECTIONS.items():
        for fld in fields(cls):
            name = fld.name if counts[fld.name] == 1 else f"{section}_{fld.name}"
            flag = "--" + name.replace("_", "-")
            specs[f"cfg__{section}__{fld.name}"] = (flag, section, fld.name, _click_type(fld.name, fld.default))
    return specs


def default_config_path():
    return Config.DEFAULT_CONFIG if os.path.isfile(Config.DEFAULT_CONFIG) else None


def with_run_config(f):
    """Add `--config` plus the RunConfig options; the command receives `run_config`."""
    specs = config_option_specs()

    @wraps(f)
    def decorated_function(*args, config_path=None, **kwargs):
        overrides = {}
        for dest, (_, section, key, _) in specs.items():
            value = kwargs.pop(dest, None)
            if value is not None:
                overrides[(section, key)] = value
        run_config = RunConfig.load(config_path or default_config_path())
        if overrides:
            run_config = run_config.with_overrides(overrides)
            run_config.validate()
            logger.debug(f"Command-line overrides: {sorted(f'{s}.{k}' for s, k in overrides)}")
        return f(*args, run_config=run_config, **kwargs)

    for dest, (flag, section, key, type_) in reversed(list(specs.items())):
        decorated_function = click.option(flag, dest, type=type_, default=None,
                                          help=f"Override [{section}] {key}.")(decorated_function)
    decorated_function = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                                      help="Run configuration file (INI).")(decorated_function)
    return decorated_function
