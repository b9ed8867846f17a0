"""Central finite-difference oracle for reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from gator.errors import DomainError
from gator.numerics.tensor import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    coordinates: int
    per_param: dict[str, float] = field(default_factory=dict)
    failure: str | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def _rel(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def _evaluate(fn) -> float:
    try:
        return float(fn().values.reshape(-1)[0])
    except (DomainError, FloatingPointError):
        return float("nan")


def finite_diff_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
                      max_coords: int | None = None, rng: np.random.Generator | None = None
                      ) -> GradCheckResult:
    """Compare reverse-mode gradients of ``fn()`` with central differences.

    ``fn`` must rebuild the loss from the current parameter values on each
    call. With ``max_coords`` set, each parameter is probed at a random subset
    of at most that many coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = fn()
    analytic = [g.copy() for g in backward(loss, wrt=params)]
    worst_err, worst_at, total = 0.0, None, 0
    per_param: dict[str, float] = {}
    for k, (p, ga) in enumerate(zip(params, analytic)):
        name = p.name or f"param{k}"
        if not p.values.flags.c_contiguous:
            p.values = np.ascontiguousarray(p.values)
        flat = p.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for n, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            fp = _evaluate(fn)
            flat[c] = orig - eps
            fm = _evaluate(fn)
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                loc = tuple(int(i) for i in np.unravel_index(c, p.shape))
                return GradCheckResult(np.inf, (name, loc), total + n, per_param,
                                       failure=f"non-finite loss at {name}{list(loc)}")
            numeric[n] = (fp - fm) / (2.0 * eps)
        total += coords.size
        errs = _rel(ga.reshape(-1)[coords], numeric)
        if errs.size:
            j = int(np.argmax(errs))
            per_param[name] = float(errs[j])
            if errs[j] >= worst_err:
                worst_err = float(errs[j])
                loc = np.unravel_index(coords[j], p.shape)
                worst_at = (name, tuple(int(i) for i in loc))
    return GradCheckResult(worst_err, worst_at, total, per_param)
