"""Finite-difference verification of analytic gradients.

Central differences at a fixed step on float64 inputs; the analytic side
comes from the reverse-mode engine.  Used by the test suite and by the
``gradcheck`` CLI subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import AutodiffError, Tensor


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst: tuple = ()              # (tensor name, flat index, analytic, numeric)
    checked: int = 0
    per_tensor: dict = field(default_factory=dict)

    def passed(self, tolerance):
        return self.max_rel_error <= tolerance


def gradcheck(f, tensors, h=1e-3, max_coords_per_tensor=None, rng=None, scale_floor=1e-2):
    """Compare analytic gradients of scalar-valued ``f`` to central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor computed from
    ``tensors`` (a list of float64 leaf tensors with ``requires_grad``).  The
    relative error of a coordinate is |a - n| / max(|a|, |n|, scale_floor).
    When ``max_coords_per_tensor`` is given, a deterministic random subset of
    coordinates is probed (for large models).
    """
    tensors = list(tensors)
    for t in tensors:
        if t.dtype != np.float64:
            raise AutodiffError("gradcheck requires float64 tensors")
        t.zero_grad()
    loss = f()
    if loss.size != 1:
        raise AutodiffError("gradcheck requires a scalar-valued function")
    loss.backward()
    analytic = []
    for t in tensors:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        analytic.append(g.copy())
        t.zero_grad()

    if rng is None:
        rng = np.random.default_rng(0)
    result = GradcheckResult(0.0)
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        worst_t = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(ga.reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), scale_floor)
            result.checked += 1
            if rel > worst_t:
                worst_t = rel
            if rel > result.max_rel_error:
                result.max_rel_error = rel
                result.worst = (t.name or "<unnamed>", int(i), a, numeric)
        result.per_tensor[t.name or f"tensor{id(t)}"] = worst_t
    return result
