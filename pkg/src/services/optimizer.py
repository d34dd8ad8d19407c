import logging
from collections import OrderedDict
from typing import Dict

import numpy as np

from src.exceptions import ConfigError
from src.numcore.params import ParamStore

logger = logging.getLogger(__name__)

STEP_KEY = "__optim__.step"
M_PREFIX = "__optim__.m."
V_PREFIX = "__optim__.v."


class AdamW:
    """
    Adaptive-moment optimizer with decoupled weight decay:

        m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
        w = w (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)

    Decay applies to every parameter. A parameter without a gradient is
    treated as having gradient zero.
    """

    def __init__(self, store: ParamStore, lr: float = 1e-4, weight_decay: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = OrderedDict((p.name, np.zeros_like(p.value)) for p in store)
        self.v: Dict[str, np.ndarray] = OrderedDict((p.name, np.zeros_like(p.value)) for p in store)

    def step(self):
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        shrink = 1.0 - self.lr * self.weight_decay
        for param in self.store:
            grad = param.grad if param.grad is not None else np.zeros_like(param.value)
            m = self.beta1 * self.m[param.name] + (1.0 - self.beta1) * grad
            v = self.beta2 * self.v[param.name] + (1.0 - self.beta2) * grad * grad
            self.m[param.name], self.v[param.name] = m, v
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            param.value = param.value * shrink - self.lr * update

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        state[STEP_KEY] = np.array(float(self.step_count))
        for name, m in self.m.items():
            state[M_PREFIX + name] = m.copy()
        for name, v in self.v.items():
            state[V_PREFIX + name] = v.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        if STEP_KEY not in state:
            raise ConfigError("checkpoint has no optimizer state")
        self.step_count = int(np.asarray(state[STEP_KEY]).reshape(-1)[0])
        for name in self.m:
            try:
                m, v = state[M_PREFIX + name], state[V_PREFIX + name]
            except KeyError:
                raise ConfigError(f"checkpoint lacks optimizer moments for {name}") from None
            if m.shape != self.m[name].shape or v.shape != self.v[name].shape:
                raise ConfigError(f"optimizer moment shape mismatch for {name}")
            self.m[name], self.v[name] = np.array(m, dtype=np.float64), np.array(v, dtype=np.float64)
