"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from framework.diffmath import DiffValue, backward, no_grad


def numeric_gradient(loss_fn: Callable[[], DiffValue], value: DiffValue, step: float = 1e-5) -> np.ndarray:
    estimate = np.zeros_like(value.data)
    flat = value.data.reshape(-1)
    out = estimate.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            upper = loss_fn().item()
            flat[i] = original - step
            lower = loss_fn().item()
            flat[i] = original
            out[i] = (upper - lower) / (2.0 * step)
    return estimate


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_gradients(
    loss_fn: Callable[[], DiffValue],
    params: Sequence[DiffValue],
    step: float = 1e-5,
) -> Dict[str, float]:
    """Return the relative error per parameter (keyed by name or position).

    ``loss_fn`` must rebuild the whole forward pass from ``params`` and be
    deterministic, since it is re-evaluated twice per coordinate.
    """
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    errors: Dict[str, float] = {}
    for position, p in enumerate(params):
        numeric = numeric_gradient(loss_fn, p, step)
        errors[p.name or f"param{position}"] = relative_error(p.grad, numeric)
    return errors
