from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor


class NonFiniteLoss(FloatingPointError):
    pass


def _scalar(loss_fn: Callable[[], Tensor]) -> float:
    val = float(loss_fn().data)
    if not np.isfinite(val):
        raise NonFiniteLoss(f"loss is not finite: {val}")
    return val


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | list[Tensor],
    eps: float = 1e-3,
    tol: float = 1e-3,
    num_coords: int | None = None,
    seed: int = 0,
    stencil: int = 5,
    return_details: bool = False,
):
    """Compare tape gradients against central differences.

    ``loss_fn`` must rebuild the graph from the current contents of ``params``
    on every call. Coordinates are sampled uniformly over all parameters
    (every coordinate when ``num_coords`` is None). Returns the maximum of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    ``tol`` is only used to count failures in the details dict.

    ``stencil=5`` uses the fourth-order central difference
    (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h; ``stencil=3`` the plain
    (f(x+h) - f(x-h)) / 2h.
    """
    if stencil not in (3, 5):
        raise ValueError("stencil must be 3 or 5")
    if not 1e-4 <= eps <= 1e-2:
        raise ValueError(f"eps must lie in [1e-4, 1e-2], got {eps}")
    named = dict(params) if isinstance(params, Mapping) else {str(i): p for i, p in enumerate(params)}
    for p in named.values():
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = loss_fn()
        if not np.isfinite(loss.data).all():
            raise NonFiniteLoss(f"loss is not finite: {loss.data}")
        tape.backward(loss)
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in named.items()}

    coords: list[tuple[str, int]] = [(k, i) for k, p in named.items() for i in range(p.data.size)]
    if num_coords is not None and num_coords < len(coords):
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=num_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst = 0.0
    failures = 0
    rows = []
    for name, i in coords:
        flat = named[name].data.reshape(-1)
        orig = flat[i].copy()
        f = {}
        offsets = (1, -1) if stencil == 3 else (2, 1, -1, -2)
        for o in offsets:
            flat[i] = orig + o * eps
            f[o] = _scalar(loss_fn)
        flat[i] = orig
        if stencil == 3:
            numeric = (f[1] - f[-1]) / (2 * eps)
        else:
            numeric = (-f[2] + 8 * f[1] - 8 * f[-1] + f[-2]) / (12 * eps)
        a = float(analytic[name].reshape(-1)[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
        failures += err >= tol
        rows.append((name, i, a, numeric, err))
    if return_details:
        return worst, {"coords": len(coords), "failures": failures, "rows": rows}
    return worst
