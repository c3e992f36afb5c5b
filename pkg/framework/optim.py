from __future__ import annotations

from typing import Dict, Iterable, List

import numpy as np

from framework.diffmath import DiffValue
from framework.errors import ShapeError


class AdamW:
    """Adam with decoupled weight decay over an explicit parameter list.

    Moment buffers are keyed by ``node_id`` so a parameter keeps its state when
    the optimizer is handed a different parameter set later on. A parameter
    widened in place keeps its moments, zero-padded to the new shape.
    Parameters left out of ``step`` are never touched.
    """

    def __init__(
        self,
        lr: float = 1e-4,
        weight_decay: float = 1e-3,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state: Dict[int, dict] = {}

    def step(self, params: Iterable[DiffValue]) -> None:
        for p in params:
            optimizer_step(p, self.state.setdefault(p.node_id, {}), self.lr, self.weight_decay, self.beta1, self.beta2, self.eps)

    @staticmethod
    def zero_grad(params: Iterable[DiffValue]) -> None:
        for p in params:
            p.zero_grad()


def _grown(buffer: np.ndarray, shape: tuple) -> np.ndarray:
    if len(shape) != buffer.ndim or any(new < old for new, old in zip(shape, buffer.shape)):
        raise ShapeError(f"optimizer state of shape {buffer.shape} cannot follow a parameter of shape {shape}")
    out = np.zeros(shape)
    out[tuple(slice(0, n) for n in buffer.shape)] = buffer
    return out


def optimizer_step(
    p: DiffValue,
    state: dict,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    grad = p.grad
    if not state:
        state["step"] = 0
        state["exp_avg"] = np.zeros_like(p.data)
        state["exp_avg_sq"] = np.zeros_like(p.data)
    elif state["exp_avg"].shape != p.data.shape:
        state["exp_avg"] = _grown(state["exp_avg"], p.data.shape)
        state["exp_avg_sq"] = _grown(state["exp_avg_sq"], p.data.shape)
    state["step"] += 1
    exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
    exp_avg *= beta1
    exp_avg += (1.0 - beta1) * grad
    exp_avg_sq *= beta2
    exp_avg_sq += (1.0 - beta2) * grad * grad

    bias_correction1 = 1.0 - beta1 ** state["step"]
    bias_correction2 = 1.0 - beta2 ** state["step"]
    denom = np.sqrt(exp_avg_sq) / np.sqrt(bias_correction2) + eps
    step_size = lr / bias_correction1

    if weight_decay != 0.0:
        p.data -= lr * weight_decay * p.data
    p.data -= step_size * exp_avg / denom


def trainable(params: Iterable[DiffValue]) -> List[DiffValue]:
    return [p for p in params if p.requires_grad]
