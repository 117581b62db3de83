"""Adam with a linear-warmup / cosine-decay learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from nodecast.errors import ConfigError, TrainingError


@dataclass(frozen=True)
class WarmupCosine:
    peak: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.total_steps <= 0 or self.warmup_steps < 0 or self.warmup_steps > self.total_steps:
            raise ConfigError(
                f"schedule needs 0 <= warmup ({self.warmup_steps}) <= total ({self.total_steps}) and total > 0"
            )

    def __call__(self, step: int) -> float:
        if step <= 0:
            return 0.0
        if step <= self.warmup_steps:
            return self.peak * step / self.warmup_steps
        if step >= self.total_steps:
            return 0.0
        frac = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        return self.peak * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class OptimizerState:
    schedule: WarmupCosine
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return self.schedule(self.step)


def adam_step(state: OptimizerState, params: dict, grads: dict) -> dict:
    """Apply one bias-corrected Adam update in place.

    ``params`` maps names to Tensors (or arrays); only names present in
    ``grads`` are touched, which is how frozen parameter groups are honoured.
    The whole step is refused if any gradient is non-finite.
    """
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingError(f"non-finite gradient for {', '.join(sorted(bad))}; step {state.step + 1} refused")

    state.step += 1
    t = state.step
    lr = state.schedule(t)
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(grads):
        g = grads[name]
        target = params[name]
        value = target.data if hasattr(target, "data") else target
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
