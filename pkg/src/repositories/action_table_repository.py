import logging

import numpy as np

from src.exceptions import StorageError
from src.models.action_table import ActionTable
from src.utils.helpers import atomic_write_text, parse_int_list

logger = logging.getLogger(__name__)


class ActionTableRepository:
    """Text files with one `class_id: a_i,a_j,...` line per object class."""

    def dumps(self, table: ActionTable, n_actions_header: bool = True) -> str:
        lines = [f"# n_actions={table.n_actions}"] if n_actions_header else []
        for c in range(table.n_obj_classes):
            actions = ",".join(str(int(a)) for a in np.flatnonzero(table.valid[c]))
            lines.append(f"{c}: {actions}")
        return "\n".join(lines) + "\n"

    def loads(self, text: str, n_actions: int = None) -> ActionTable:
        rows = {}
        for line_no, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if line.startswith("# n_actions=") and n_actions is None:
                n_actions = int(line.split("=", 1)[1])
                continue
            if not line or line.startswith("#"):
                continue
            try:
                cls, actions = line.split(":", 1)
                rows[int(cls)] = parse_int_list(actions)
            except ValueError:
                raise StorageError(f"action table line {line_no}: expected 'class_id: a,b,...', got {raw!r}") from None
        if not rows:
            raise StorageError("empty action table")
        if n_actions is None:
            n_actions = max(max(a, default=-1) for a in rows.values()) + 1
        valid = np.zeros((max(rows) + 1, n_actions), dtype=bool)
        for cls, actions in rows.items():
            if any(not 0 <= a < n_actions for a in actions):
                raise StorageError(f"action table class {cls}: action id outside [0, {n_actions})")
            valid[cls, actions] = True
        return ActionTable(valid)

    def save(self, path: str, table: ActionTable) -> None:
        try:
            atomic_write_text(path, self.dumps(table))
        except OSError as e:
            logger.error(f"Error writing action table {path}: {e}")
            raise StorageError(f"cannot write action table {path}: {e}") from None

    def load(self, path: str) -> ActionTable:
        try:
            with open(path, "r", encoding="utf-8") as f:
                return self.loads(f.read())
        except OSError as e:
            logger.error(f"Error reading action table {path}: {e}")
            raise StorageError(f"cannot read action table {path}: {e}") from None
