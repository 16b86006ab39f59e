"""Central finite-difference verification of reverse-mode gradients.

All checks run in float64: the truncation error of the central difference is
O(h^2) and the roundoff error O(machine_eps / h), which at 32-bit would
swamp the tolerances used here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import RngState
from .tensor import Tensor, backward, tape


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_coords: int
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def numerical_grad(forward: Callable[[], float], wrt: Tensor, coord: tuple, h: float = 1e-5) -> float:
    """Central difference of a scalar-valued forward pass at one coordinate."""
    original = wrt.data[coord]
    try:
        wrt.data[coord] = original + h
        f_plus = forward()
        wrt.data[coord] = original - h
        f_minus = forward()
    finally:
        wrt.data[coord] = original
    return (f_plus - f_minus) / (2.0 * h)


def check_gradients(
    forward: Callable[[], Tensor],
    wrt: Sequence[tuple[str, Tensor]],
    rng: RngState,
    n_coords: int = 10,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    h: float = 1e-5,
    refine_steps: int = 2,
) -> list[CheckResult]:
    """Compare reverse-mode grads of ``forward()`` against central differences.

    ``forward`` must rebuild the graph from the same tensors on every call;
    coordinates are sampled per tensor and perturbed in place. A coordinate
    that misses the tolerance at the base step is retried with the step
    shrunk up to ``refine_steps`` times: the difference quotient of a deep
    piecewise-linear network carries a kink-crossing bias that vanishes with
    the step, while a wrong reverse-mode gradient stays wrong.
    """
    for _, t in wrt:
        if t.data.dtype != np.float64:
            raise ValueError(f"gradient checking requires float64 tensors, got {t.data.dtype}")
        t.requires_grad = True
        t.grad = None

    with tape():
        loss = forward()
    backward(loss)

    def forward_value() -> float:
        return float(forward().data)

    results = []
    for name, t in wrt:
        if t.grad is None:
            results.append(CheckResult(name, float("inf"), 0, failures=[("missing-grad", None, None)]))
            continue
        n = min(n_coords, t.size)
        flat_idx = rng.choice(t.size, size=n, replace=False) if t.size > n else np.arange(t.size)
        res = CheckResult(name, 0.0, n)
        for fi in np.sort(flat_idx):
            coord = np.unravel_index(int(fi), t.shape)
            ana = float(t.grad[coord])
            best_rel, ok = np.inf, False
            step = h
            for _ in range(refine_steps + 1):
                num = numerical_grad(forward_value, t, coord, h=step)
                err = abs(ana - num)
                denom = max(abs(ana), abs(num))
                rel = err / denom if denom > 0 else 0.0
                best_rel = min(best_rel, rel)
                if err <= atol + rtol * denom:
                    ok = True
                    break
                step /= 10.0
            res.max_rel_error = max(res.max_rel_error, best_rel)
            if not ok:
                res.failures.append((coord, ana, num))
        results.append(res)
    return results
