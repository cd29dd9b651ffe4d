"""Finite-difference validation of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(fn, inputs, h=1e-5):
    """Compare backward() output of fn(*inputs) against central differences.

    fn must return a scalar Tensor. Every coordinate of every input with
    requires_grad is perturbed by +-h. Returns the worst relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    for x in inputs:
        if not isinstance(x, Tensor):
            raise TypeError("grad_check inputs must be Tensors")
        x.grad = None
    out = fn(*inputs)
    out.backward()
    analytic = []
    for x in inputs:
        if x.requires_grad:
            g = x.grad if x.grad is not None else np.zeros_like(x.data)
            analytic.append(g.copy())
        else:
            analytic.append(None)

    worst = 0.0
    with no_grad():
        for x, ga in zip(inputs, analytic):
            if ga is None:
                continue
            flat = x.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = fn(*inputs).item()
                flat[i] = keep - h
                down = fn(*inputs).item()
                flat[i] = keep
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(gflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
