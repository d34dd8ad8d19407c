from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

import numpy as np

from src.exceptions import ConfigError


@dataclass
class ActionTable:
    """Which actions are valid for which object classes."""

    valid: np.ndarray  # bool [n_obj_classes, n_actions]

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.ndim != 2:
            raise ConfigError(f"action table must be 2-D, got shape {self.valid.shape}")
        empty = [c for c in range(self.n_obj_classes) if not self.valid[c].any()]
        if empty:
            raise ConfigError(f"object classes without a valid action: {empty}")
        cells = np.argwhere(self.valid)  # object-major
        self._interactions: List[Tuple[int, int]] = [(int(o), int(a)) for o, a in cells]
        self._ids: Dict[Tuple[int, int], int] = {cell: i for i, cell in enumerate(self._interactions)}

    @property
    def n_obj_classes(self) -> int:
        return self.valid.shape[0]

    @property
    def n_actions(self) -> int:
        return self.valid.shape[1]

    @property
    def n_interactions(self) -> int:
        return len(self._interactions)

    def mask(self, object_class: int) -> np.ndarray:
        if not 0 <= object_class < self.n_obj_classes:
            raise ValueError(f"object class {object_class} outside [0, {self.n_obj_classes})")
        return self.valid[object_class].copy()

    def interactions(self) -> List[Tuple[int, int]]:
        """(object_class, action) cells in interaction-id order."""
        return list(self._interactions)

    def interaction_id(self, action: int, object_class: int) -> int:
        try:
            return self._ids[(object_class, action)]
        except KeyError:
            raise ValueError(f"action {action} is not valid for object class {object_class}") from None

    def is_valid(self, action: int, object_class: int) -> bool:
        return (object_class, action) in self._ids

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_actions': self.n_actions,
            'rows': {c: [int(a) for a in np.flatnonzero(self.valid[c])] for c in range(self.n_obj_classes)},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ActionTable":
        rows = {int(c): list(actions) for c, actions in data['rows'].items()}
        valid = np.zeros((max(rows) + 1 if rows else 0, int(data['n_actions'])), dtype=bool)
        for c, actions in rows.items():
            valid[c, actions] = True
        return cls(valid)
