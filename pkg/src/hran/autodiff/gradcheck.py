"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_param: Optional[str]
    worst_index: Optional[tuple]
    n_coords: int

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_error:.3e} over {self.n_coords} coordinates"


def analytic_gradients(f: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, np.ndarray]) -> dict:
    tape = Tape()
    watched = {name: tape.watch(value, name) for name, value in params.items()}
    return tape.backward(f(watched))


def finite_diff_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-8,
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f`` against central differences.

    ``f`` maps a name -> Tensor dict to a scalar Tensor. Parameters are cast to
    float64. The relative error per coordinate is
    ``|analytic - numeric| / max(|numeric|, floor)``. ``grads`` may be passed to
    check gradients produced some other way.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if grads is None:
        grads = analytic_gradients(f, params)

    def evaluate(name, idx):
        val = f({k: Tensor(v) for k, v in params.items()}).item()
        if not np.isfinite(val):
            raise FloatingPointError(f"f is non-finite after perturbing {name}{list(idx)}")
        return val

    worst, worst_at, count = 0.0, (None, None), 0
    for name, arr in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + epsilon
            fp = evaluate(name, idx)
            arr[idx] = orig - epsilon
            fm = evaluate(name, idx)
            arr[idx] = orig
            numeric = (fp - fm) / (2 * epsilon)
            err = abs(g[idx] - numeric) / max(abs(numeric), floor)
            count += 1
            if err > worst:
                worst, worst_at = err, (name, idx)
    return GradCheckReport(worst, worst <= tolerance, worst_at[0], worst_at[1], count)
