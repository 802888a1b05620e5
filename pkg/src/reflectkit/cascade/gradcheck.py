from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import record_branches


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0


def _same_branches(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn, params, eps: float = 1e-3, max_coords: int | None = None,
               rng: np.random.Generator | None = None,
               reference_dtype=np.float64) -> GradCheckResult:
    """Compare reverse-mode gradients of ``fn()`` with central differences.

    ``fn`` rebuilds a scalar Tensor from the current contents of ``params``
    (a name -> Tensor mapping). Relative error per coordinate is
    ``|a - fd| / max(|a|, |fd|, 1e-6)``. A coordinate whose +/-eps stencil
    flips the branch of a ReLU, clamp or absolute value is not smooth over
    the stencil; it is skipped and counted in ``skipped``. With
    ``max_coords`` only that many random coordinates per tensor are probed.

    The analytic gradient comes from the parameters' own dtype (float32 in
    normal use). The finite-difference reference is evaluated on copies cast
    to ``reference_dtype`` so that rounding in the loss does not swamp the
    difference quotient; pass ``None`` to difference in the native dtype.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params.values():
        p.grad = None
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
    fn().backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}
    native = {k: p.data for k, p in params.items()}
    if reference_dtype is not None:
        for p in params.values():
            p.data = p.data.astype(reference_dtype)
    try:
        return _probe(fn, params, analytic, eps, max_coords, rng)
    finally:
        for k, p in params.items():
            p.data = native[k]
            p.grad = None


def _probe(fn, params, analytic, eps, max_coords, rng) -> GradCheckResult:
    with record_branches() as base_branches:
        fn()
    result = GradCheckResult(0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            hi = flat.dtype.type(orig + eps)
            lo = flat.dtype.type(orig - eps)
            flat[i] = hi
            with record_branches() as br_hi:
                f_hi = float(fn().data)
            flat[i] = lo
            with record_branches() as br_lo:
                f_lo = float(fn().data)
            flat[i] = orig
            if not (_same_branches(base_branches, br_hi) and _same_branches(base_branches, br_lo)):
                result.skipped += 1
                continue
            fd = (f_hi - f_lo) / (float(hi) - float(lo))
            a = float(a_flat[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, err)
            result.checked += 1
        result.per_param[name] = worst
        result.max_rel_error = max(result.max_rel_error, worst)
    return result
