"""Weight initialization and momentum SGD with per-layer scheduled rates.

The update per iteration t, layer l:

    rate_l(t) = gamma**floor(t*N/|X|) * alpha_l
    V   <- mu*V - rate_l(t) * grad
    W   <- W + V

Biases follow the same rule with ``rate * bias_rate_multiplier``.  Layer
freezing is expressed purely through alpha_l = 0: with a zero initial
velocity such a layer is bitwise constant over any number of steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OptimizerError
from .tensor import DTYPE, zeros

INIT_METHODS = ("gaussian", "xavier", "msra")
GAUSSIAN_STD = 0.01


def rng_from(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))


def fan_in(shape: tuple[int, ...]) -> int:
    """Inputs per output unit: C*kh*kw for conv kernels, in-dim for dense."""
    if len(shape) < 2:
        raise ConfigError(f"fan-in undefined for shape {shape}")
    return int(np.prod(shape[1:]))


def init_weights(
    shape: tuple[int, ...], method: str, seed: int | np.random.Generator = 0
) -> np.ndarray:
    """Draw initial weights; 1-d shapes are bias vectors and come back zero."""
    shape = tuple(int(e) for e in shape)
    if len(shape) == 1:
        return zeros(shape)
    rng = rng_from(seed)
    if method == "gaussian":
        std = GAUSSIAN_STD
    elif method == "xavier":
        std = float(np.sqrt(1.0 / fan_in(shape)))
    elif method == "msra":
        std = float(np.sqrt(2.0 / fan_in(shape)))
    else:
        raise ConfigError(f"unknown init method {method!r}; expected one of {INIT_METHODS}")
    return rng.normal(0.0, std, size=shape).astype(DTYPE)


@dataclass
class LearningSchedule:
    """Momentum mu, scheduling rate gamma, per-layer rates, and epoch bookkeeping."""

    mu: float
    gamma: float
    alpha_per_layer: dict[str, float]
    batch_size: int
    epoch_length: int
    bias_rate_multiplier: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.mu < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.mu}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"scheduling rate must be in (0, 1], got {self.gamma}")
        if any(a < 0 for a in self.alpha_per_layer.values()):
            raise ConfigError("per-layer rates must be >= 0")
        if self.bias_rate_multiplier <= 0:
            raise ConfigError("bias rate multiplier must be > 0")
        if self.batch_size < 1 or self.epoch_length < 1:
            raise ConfigError("batch size and epoch length must be positive")


@dataclass
class OptimizerState:
    """Velocity buffers (same shapes as the parameters) and the iteration count."""

    velocities: dict[str, tuple[np.ndarray, np.ndarray]]
    iteration: int = 0

    @classmethod
    def zeros_like(cls, net) -> "OptimizerState":
        vel = {
            name: (np.zeros_like(p.w), np.zeros_like(p.b))
            for name, p in net.layers.items()
        }
        return cls(velocities=vel, iteration=0)


def effective_rate(sched: LearningSchedule, layer: str, t: int) -> float:
    """gamma**floor(t*N/|X|) * alpha_layer; the exponent is exact integer math."""
    if layer not in sched.alpha_per_layer:
        raise ConfigError(f"schedule has no rate for layer {layer!r}")
    if t < 0:
        raise OptimizerError(f"iteration must be >= 0, got {t}")
    exponent = (t * sched.batch_size) // sched.epoch_length
    return sched.gamma**exponent * sched.alpha_per_layer[layer]


def sgd_step(net, opt: OptimizerState, grads, sched: LearningSchedule) -> None:
    """One momentum update in place; increments the iteration count once."""
    t = opt.iteration
    for name, p in net.layers.items():
        if name not in grads:
            raise OptimizerError(f"missing gradient for layer {name!r}")
        g = grads[name]
        vw, vb = opt.velocities[name]
        if g.w.shape != p.w.shape or g.b.shape != p.b.shape:
            raise OptimizerError(
                f"{name}: gradient shapes {g.w.shape}/{g.b.shape} do not match "
                f"parameters {p.w.shape}/{p.b.shape}"
            )
        rate = effective_rate(sched, name, t)
        if rate == 0.0 and not vw.any() and not vb.any():
            continue  # frozen layer: keep parameters bitwise intact
        vw *= sched.mu
        vw -= rate * g.w
        p.w += vw
        vb *= sched.mu
        vb -= rate * sched.bias_rate_multiplier * g.b
        p.b += vb
    opt.iteration = t + 1
