import logging

from src.exceptions import StorageError
from src.models.evaluation import ClassSplit
from src.utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)


class SplitRepository:
    """Rare-split files: one rare interaction id per line, `#` comments allowed."""

    def save(self, path: str, split: ClassSplit, threshold: int = None) -> None:
        header = [f"# n_interactions={split.n_classes}"]
        if threshold is not None:
            header.append(f"# rare: fewer than {threshold} training instances")
        lines = header + [str(i) for i in sorted(split.rare)]
        try:
            atomic_write_text(path, "\n".join(lines) + "\n")
        except OSError as e:
            logger.error(f"Error writing split {path}: {e}")
            raise StorageError(f"cannot write split {path}: {e}") from None

    def load(self, path: str, n_classes: int) -> ClassSplit:
        rare = set()
        try:
            with open(path, "r", encoding="utf-8") as f:
                for line_no, raw in enumerate(f, 1):
                    line = raw.strip()
                    if not line or line.startswith("#"):
                        continue
                    try:
                        rare.add(int(line))
                    except ValueError:
                        raise StorageError(f"{path}:{line_no}: expected an interaction id, got {line!r}") from None
        except OSError as e:
            logger.error(f"Error reading split {path}: {e}")
            raise StorageError(f"cannot read split {path}: {e}") from None
        outside = sorted(i for i in rare if not 0 <= i < n_classes)
        if outside:
            raise StorageError(f"{path}: interaction ids outside [0, {n_classes}): {outside}")
        return ClassSplit(rare=frozenset(rare), n_classes=n_classes)
