"""Central-difference gradient checking.

Build the fragment under test in float64: in float32 the finite differences
drown in rounding noise and the check is meaningless.
"""

import numpy as np

# Relative error denominator floor, so gradients near zero stay comparable.
_DENOM_FLOOR = 1e-8


def finite_difference_check(loss_fn, checks, eps: float = 1e-5,
                            rng: np.random.Generator | None = None,
                            max_entries: int | None = None) -> float:
    """Compare analytic gradients against central differences.

    loss_fn: zero-argument callable returning a scalar; it must read the
        arrays referenced by `checks` so that in-place perturbations are seen.
    checks: iterable of (array, analytic_grad) pairs of matching shape.
    eps: perturbation half-width.
    rng, max_entries: if given, check at most `max_entries` randomly chosen
        entries per array instead of every entry.

    Returns the maximum relative error
        |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    over all checked entries.
    """
    worst = 0.0
    for array, analytic in checks:
        if array.shape != analytic.shape:
            raise ValueError(f"gradient shape {analytic.shape} does not match "
                             f"parameter shape {array.shape}")
        flat = array.reshape(-1)
        grad = analytic.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            idx = range(flat.size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(grad[i])
            denom = max(abs(a), abs(numeric), _DENOM_FLOOR)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
