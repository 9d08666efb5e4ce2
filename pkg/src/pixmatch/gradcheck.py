"""Finite-difference gradient checking.

Builds a scalar probe loss from the op under test, runs one backward pass,
and compares each requested input coordinate against a central difference of
forward-only evaluations. Run it on float64 tensors; float32 has too little
headroom for step 1e-5.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, weighted_sum


def grad_check(fn, inputs, step: float = 1e-5, proj_seed: int = 0,
               max_coords_per_input: int | None = None, screen_kinks: bool = False) -> float:
    """Max relative error between autodiff and central finite differences.

    ``fn`` maps the input tensors to an output tensor (any shape); the probe
    loss is a fixed random projection of that output. ``inputs`` are the
    tensors to differentiate with respect to; each gets requires_grad set.
    ``max_coords_per_input`` limits how many coordinates are probed (seeded
    subsample), which keeps deep compositions affordable.

    ``screen_kinks`` re-runs each central difference at step/4 and skips
    coordinates where the two disagree: those straddle a relu or bilinear
    kink, where finite differences are meaningless. A genuinely wrong analytic
    gradient still fails, since its finite differences are step-stable.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    rng = np.random.default_rng(proj_seed)
    proj = rng.standard_normal(out.shape).astype(out.dtype)
    loss = weighted_sum(out, proj)
    backward(loss)
    analytic = [np.array(t.grad, copy=True) for t in inputs]

    def eval_loss() -> float:
        frozen = [Tensor(t.data) for t in inputs]
        o = fn(*frozen)
        return float((o.data * proj).sum())

    worst = 0.0
    coord_rng = np.random.default_rng(proj_seed + 1)
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords_per_input is not None and n > max_coords_per_input:
            coords = coord_rng.choice(n, size=max_coords_per_input, replace=False)
        else:
            coords = range(n)
        a_flat = a.reshape(-1)

        def central(i, h):
            orig = flat[i]
            flat[i] = orig + h
            hi = eval_loss()
            flat[i] = orig - h
            lo = eval_loss()
            flat[i] = orig
            return (hi - lo) / (2.0 * h)

        for i in coords:
            numeric = central(i, step)
            if screen_kinks:
                fine = central(i, step / 4.0)
                if abs(numeric - fine) > 0.05 * max(abs(numeric), abs(fine), 1e-8):
                    continue
            denom = max(abs(numeric), abs(a_flat[i]), 1e-8)
            worst = max(worst, abs(numeric - a_flat[i]) / denom)
    for t in inputs:
        t.grad = None
    return worst
