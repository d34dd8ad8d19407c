import json
import logging
import os
from typing import Any, Dict, List

from src.exceptions import StorageError
from src.utils.helpers import dumps_line

logger = logging.getLogger(__name__)


class MetricsRepository:
    """Append-only metrics log, one {epoch, step, loss, lr} object per line."""

    def __init__(self, path: str):
        self.path = path

    def reset(self):
        try:
            os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
            open(self.path, "w", encoding="utf-8").close()
        except OSError as e:
            raise StorageError(f"cannot create metrics log {self.path}: {e}") from None

    def append(self, record: Dict[str, Any]) -> None:
        try:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(dumps_line(record))
        except OSError as e:
            logger.error(f"Error appending to metrics log {self.path}: {e}")
            raise StorageError(f"cannot write metrics log {self.path}: {e}") from None

    def load(self) -> List[Dict[str, Any]]:
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                return [json.loads(line) for line in f if line.strip()]
        except (OSError, ValueError) as e:
            raise StorageError(f"cannot read metrics log {self.path}: {e}") from None
