from src.numcore.tensor import Node, Param, backward, constant
from src.numcore.params import ParamStore
from src.numcore.gradcheck import finite_diff_check
from src.numcore.rng import make_rng, truncated_normal

__all__ = [
    "Node",
    "Param",
    "ParamStore",
    "backward",
    "constant",
    "finite_diff_check",
    "make_rng",
    "truncated_normal",
]
