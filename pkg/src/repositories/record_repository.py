import json
import logging
from typing import List

from src.exceptions import StorageError
from src.models.evaluation import EvalRecord, GtPair
from src.utils.helpers import atomic_open, dumps_line

logger = logging.getLogger(__name__)


class RecordRepository:
    """
    Results and ground-truth files, one JSON object per line.

    Results: image_id, h_box, o_box (null for the empty-box sentinel),
    object_class, action_id, score. GT lines mirror them without the score
    and with an `occluded` flag.
    """

    def _write(self, path, rows):
        try:
            with atomic_open(path, "w", encoding="utf-8") as f:
                for row in rows:
                    f.write(dumps_line(row.to_dict()))
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise StorageError(f"cannot write {path}: {e}") from None

    def _read(self, path, parse):
        rows = []
        try:
            with open(path, "r", encoding="utf-8") as f:
                for line_no, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    try:
                        rows.append(parse(json.loads(line)))
                    except (ValueError, KeyError, TypeError) as e:
                        raise StorageError(f"{path}:{line_no}: bad record: {e}") from None
        except OSError as e:
            logger.error(f"Error reading {path}: {e}")
            raise StorageError(f"cannot read {path}: {e}") from None
        return rows

    def save_results(self, path: str, records: List[EvalRecord]) -> None:
        self._write(path, records)

    def load_results(self, path: str) -> List[EvalRecord]:
        return self._read(path, EvalRecord.from_dict)

    def save_gt(self, path: str, gts: List[GtPair]) -> None:
        self._write(path, gts)

    def load_gt(self, path: str) -> List[GtPair]:
        return self._read(path, GtPair.from_dict)
