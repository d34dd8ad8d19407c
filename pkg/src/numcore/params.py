import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional

import numpy as np

from src.exceptions import ConfigError
from src.numcore.functional import AttentionBlock, LayerNorm, Linear, MLP2
from src.numcore.rng import truncated_normal
from src.numcore.tensor import Param

logger = logging.getLogger(__name__)


class ParamStore:
    """
    Ordered registry of the trainable parameters of one model.

    Names are unique; iteration order is creation order, which fixes the order
    of checkpoint records and optimizer state.
    """

    def __init__(self, rng: Optional[np.random.Generator] = None, init_std: float = 0.02):
        self._params: "OrderedDict[str, Param]" = OrderedDict()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.init_std = init_std

    def add(self, name: str, value) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        param = Param(name, value)
        self._params[name] = param
        return param

    def linear(self, name: str, n_in: int, n_out: int, bias: bool = True, init: str = "normal") -> Linear:
        if init == "normal":
            weight = truncated_normal(self.rng, (n_in, n_out), std=self.init_std)
        elif init == "zeros":
            weight = np.zeros((n_in, n_out))
        elif init == "identity":
            weight = np.eye(n_in, n_out)
        else:
            raise ValueError(f"unknown init {init!r}")
        return Linear(
            weight=self.add(f"{name}.weight", weight),
            bias=self.add(f"{name}.bias", np.zeros(n_out)) if bias else None,
        )

    def layer_norm(self, name: str, d: int, eps: float = 1e-5) -> LayerNorm:
        return LayerNorm(
            gain=self.add(f"{name}.gain", np.ones(d)),
            bias=self.add(f"{name}.bias", np.zeros(d)),
            eps=eps,
        )

    def mlp2(self, name: str, n_in: int, hidden: int, n_out: int, activation: str = "relu") -> MLP2:
        return MLP2(
            first=self.linear(f"{name}.0", n_in, hidden),
            second=self.linear(f"{name}.1", hidden, n_out),
            activation=activation,
        )

    def attention(self, name: str, d: int) -> AttentionBlock:
        return AttentionBlock(
            q=self.linear(f"{name}.q", d, d),
            k=self.linear(f"{name}.k", d, d),
            v=self.linear(f"{name}.v", d, d),
            out=self.linear(f"{name}.out", d, d),
        )

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self._params.values()))

    def zero_grad(self):
        for param in self._params.values():
            param.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.value.copy()) for name, p in self._params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        """Copy arrays into the registered parameters; shapes must match exactly."""
        missing = [name for name in self._params if name not in state]
        unexpected = [name for name in state if name not in self._params]
        if strict and (missing or unexpected):
            raise ConfigError(
                f"checkpoint does not match model: missing={missing[:5]} unexpected={unexpected[:5]}"
            )
        for name, param in self._params.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ConfigError(f"shape mismatch for {name}: checkpoint {value.shape}, model {param.shape}")
            param.value = value.copy()
        if missing or unexpected:
            logger.warning(f"Partial state load: {len(missing)} missing, {len(unexpected)} unexpected")
