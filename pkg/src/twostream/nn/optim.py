"""Minibatch SGD with classical momentum and L2 weight decay."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .layers import LayerParams


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        # learning_rate 0 is allowed so a no-op training pass stays expressible.
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")


class SgdOptimizer:
    """Holds one velocity buffer per parameter array.

    Update rule per array:
        v <- momentum * v - lr * (grad + weight_decay * param)
        param <- param + v
    Gradient buffers are zeroed after the step.
    """

    def __init__(self, config: SgdConfig, params: list[LayerParams]):
        self.config = config
        self.params = params
        self._velocity = [
            (np.zeros_like(p.weights), np.zeros_like(p.biases)) for p in params
        ]

    def step(self) -> None:
        lr = self.config.learning_rate
        mom = self.config.momentum
        wd = self.config.weight_decay
        for p, (vw, vb) in zip(self.params, self._velocity):
            vw *= mom
            vw -= lr * (p.weight_grads + wd * p.weights)
            p.weights += vw
            vb *= mom
            vb -= lr * (p.bias_grads + wd * p.biases)
            p.biases += vb
            p.zero_grads()


def sgd_step(params: list[LayerParams], config: SgdConfig,
             state: SgdOptimizer | None = None) -> SgdOptimizer:
    """One SGD update over `params`. Returns the optimizer holding velocities.

    Pass the returned state back in to carry momentum across steps.
    """
    if state is None:
        state = SgdOptimizer(config, params)
    state.step()
    return state
