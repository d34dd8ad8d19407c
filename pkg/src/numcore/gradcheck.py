import logging
from typing import Callable, Iterable, Optional

import numpy as np

from src.exceptions import NumericError
from src.numcore.tensor import Node, Param, backward

logger = logging.getLogger(__name__)


def _evaluate(f: Callable[[], Node]) -> float:
    value = f()
    if value.value.size != 1:
        raise NumericError(f"gradient check needs a scalar function, got shape {value.shape}")
    scalar = float(value.value.reshape(-1)[0])
    if not np.isfinite(scalar):
        raise NumericError("gradient check function returned a non-finite value")
    return scalar


def finite_diff_check(f: Callable[[], Node], params: Iterable[Param], eps: float = 1e-5,
                      max_coords_per_param: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> float:
    """
    Compare reverse-mode gradients of `f` against central differences.

    `f` takes no arguments and rebuilds its graph from the current parameter
    values on every call. Returns the largest
    |analytic - numeric| / max(1, |numeric|) over the checked coordinates.
    With `max_coords_per_param`, a random subset of coordinates is checked per
    parameter.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    params = list(params)
    rng = rng if rng is not None else np.random.default_rng(0)

    for param in params:
        param.zero_grad()
    loss = f()
    if loss.value.size != 1 or not np.all(np.isfinite(loss.value)):
        raise NumericError("gradient check function must return a finite scalar")
    backward(loss)
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.value)) for p in params}

    worst = 0.0
    for param in params:
        original = param.value
        n = original.size
        coords = np.arange(n)
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        grad = analytic[id(param)].reshape(-1)
        for i in coords:
            plus = original.copy()
            plus.flat[i] += eps
            param.value = plus
            f_plus = _evaluate(f)
            minus = original.copy()
            minus.flat[i] -= eps
            param.value = minus
            f_minus = _evaluate(f)
            param.value = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(grad[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
        logger.debug(f"gradcheck {param.name}: {len(coords)} coords, running max error {worst:.3e}")
    for param in params:
        param.zero_grad()
    return worst
