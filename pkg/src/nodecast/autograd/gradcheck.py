"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from nodecast.autograd.tensor import Tensor
from nodecast.errors import GradCheckError


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-10,
) -> float:
    """Return the worst relative error between backprop and central differences.

    Per coordinate the error is ``|a - n| / max(|a|, |n|, floor)``. With
    ``max_coords`` set, that many coordinates are sampled uniformly across all
    parameters (seeded) instead of sweeping every entry. ``f`` must be
    deterministic: run it with dropout disabled.
    """
    for p in params:
        p.grad = None
    out = f()
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise GradCheckError(f"objective must be a finite scalar, got {out.data!r}")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    coords = [(k, idx) for k, p in enumerate(params) for idx in np.ndindex(p.shape)]
    if max_coords is not None and max_coords < len(coords):
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    worst = 0.0
    for k, idx in coords:
        p = params[k]
        orig = p.data[idx]
        p.data[idx] = orig + h
        up = f().data
        p.data[idx] = orig - h
        down = f().data
        p.data[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise GradCheckError(f"objective non-finite when perturbing parameter {p.name or k} at {idx}")
        numeric = float((up - down) / (2.0 * h))
        a = float(analytic[k][idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst
