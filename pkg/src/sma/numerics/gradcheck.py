"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, backward


class NonDeterministicForward(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failed

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            flag = "ok" if err < self.tol else "FAIL"
            out.append(f"{name}\t{err:.3e}\t{self.checked[name]}\t{flag}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def check_gradients(
    forward: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    grad_hook: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare tape gradients of ``forward()`` against central differences.

    ``forward`` must read the tensors in ``params`` and return a scalar.  Blocks
    larger than ``max_coords`` are checked on a seeded random subset of
    coordinates.  ``grad_hook(name, grad)`` may rewrite analytic gradients; it
    exists so the detector itself can be tested.
    """
    for p in params.values():
        if p.data.dtype != np.float64:
            raise ValueError("gradient checks need float64 parameters")

    first = forward().data.copy()
    second = forward().data.copy()
    if not np.array_equal(first, second):
        raise NonDeterministicForward("forward gave different values on identical inputs")

    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = forward()
    backward(tape, loss)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        analytic = p.grad.copy()
        if grad_hook is not None:
            analytic = grad_hook(name, analytic)
        flat = p.data.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = forward().item()
            flat[c] = orig - eps
            down = forward().item()
            flat[c] = orig
            numeric = (up - down) / (2 * eps)
            err = float(relative_error(np.array(analytic.reshape(-1)[c]), np.array(numeric)))
            worst = max(worst, err)
        report.errors[name] = worst
        report.checked[name] = len(coords)
    return report
