"""Linear guidance of latents along bank axes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linalg import as_vec


@dataclass(frozen=True)
class EditPlan:
    steps: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        steps = tuple((str(name), float(alpha)) for name, alpha in self.steps)
        for name, alpha in steps:
            if not np.isfinite(alpha):
                raise ValidationError(f"edit intensity for {name!r} is not finite")
        object.__setattr__(self, "steps", steps)


def _check(z, bank) -> np.ndarray:
    z = as_vec(z, "latent")
    if z.shape[0] != bank.dim:
        raise ValidationError(f"latent has dim {z.shape[0]}, bank has dim {bank.dim}")
    return z


def apply_edit(z, bank, axis: str, alpha: float, raw=False) -> np.ndarray:
    """Move ``z`` by ``alpha`` along the unit direction of ``axis``.

    Uses the decoupled direction unless ``raw`` is set.
    """
    z = _check(z, bank)
    d = bank.direction(axis, raw=raw)
    if not np.isfinite(alpha):
        raise ValidationError("alpha must be finite")
    if alpha == 0:
        return z
    return z + alpha * d


def traverse(z, bank, axis: str, alpha_start: float, alpha_end: float, steps: int, raw=False):
    if steps < 2:
        raise ValidationError("a traversal needs at least 2 steps")
    alphas = np.linspace(alpha_start, alpha_end, steps)
    return [apply_edit(z, bank, axis, float(a), raw=raw) for a in alphas]


def apply_plan(z, bank, plan: EditPlan, raw=False) -> np.ndarray:
    z = _check(z, bank)
    for name, _ in plan.steps:
        bank.direction(name)  # resolve every name before touching z
    for name, alpha in plan.steps:
        z = apply_edit(z, bank, name, alpha, raw=raw)
    return z
