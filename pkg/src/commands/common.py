import os
import logging

from src.config import RunConfig
from src.exceptions import ConfigError, StorageError
from src.repositories.dataset_repository import DatasetRepository

logger = logging.getLogger(__name__)


def require_path(run_config: RunConfig, key: str) -> str:
    value = getattr(run_config.paths, key)
    if not value:
        raise ConfigError(f"missing required path: --{key} (or [paths] {key})")
    return value


def open_dataset(run_config: RunConfig) -> DatasetRepository:
    """Open the configured dataset and check its feature width against the model config."""
    dataset = DatasetRepository(require_path(run_config, "dataset"))
    if not dataset.exists():
        raise StorageError(f"no dataset at {dataset.root}")
    if os.path.isfile(dataset.config_path):
        channels = dataset.config().decoder.channels
        if channels != run_config.decoder.channels:
            raise ConfigError(
                f"dataset features have {channels} channels but the model expects {run_config.decoder.channels}"
            )
    return dataset
