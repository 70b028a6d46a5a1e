"""Attribute axes: regression, orthonormal decoupling and continual extension."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateAttributeError,
    InseparableAttributeError,
    LinearDependenceError,
    ValidationError,
)
from .linalg import (
    DEFAULT_DEPENDENCE_TOL,
    as_mat,
    as_vec,
    gram_schmidt,
    normalize,
    residual_perp,
    solve_ols,
)

RESIDUAL = "residual"
PER_SUBVECTOR = "per-subvector"
MODES = (RESIDUAL, PER_SUBVECTOR)


class LatentDataset:
    """``n`` latent vectors of dim ``p`` with one scalar label per attribute."""

    def __init__(self, latents, labels):
        Z = as_mat(latents, "latents")
        n = Z.shape[0]
        cols = {}
        for name, values in labels.items():
            y = as_vec(values, f"labels for {name!r}")
            if y.shape[0] != n:
                raise ValidationError(f"attribute {name!r} has {y.shape[0]} labels for {n} latents")
            y.setflags(write=False)
            cols[str(name)] = y
        Z.setflags(write=False)
        self.latents = Z
        self.labels = cols

    @property
    def n(self) -> int:
        return self.latents.shape[0]

    @property
    def p(self) -> int:
        return self.latents.shape[1]

    @property
    def attributes(self) -> list[str]:
        return list(self.labels)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, LatentDataset):
            return NotImplemented
        return (
            np.array_equal(self.latents, other.latents)
            and list(self.labels) == list(other.labels)
            and all(np.array_equal(self.labels[k], other.labels[k]) for k in self.labels)
        )

    def __repr__(self):
        return f"LatentDataset(n={self.n}, p={self.p}, attributes={self.attributes})"


@dataclass(frozen=True, eq=False)
class AttributeAxis:
    name: str
    direction: np.ndarray
    bias: float
    rss: float
    r_squared: float
    n_samples: int
    rank_deficient: bool = False


@dataclass(frozen=True, eq=False)
class Extension:
    name: str
    d_in: np.ndarray
    d_out: np.ndarray
    mode: str
    weights: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class AxisBank:
    dim: int
    base_raw: tuple[AttributeAxis, ...]
    base_ortho: tuple[np.ndarray, ...]
    extensions: tuple[Extension, ...] = ()

    @property
    def base_names(self) -> list[str]:
        return [a.name for a in self.base_raw]

    @property
    def names(self) -> list[str]:
        return self.base_names + [e.name for e in self.extensions]

    def direction(self, name: str, raw=False) -> np.ndarray:
        """Unit edit direction for ``name``.

        Orthonormalized base axes and extension outputs by default; with
        ``raw`` the fitted direction before any decoupling.
        """
        for axis, e in zip(self.base_raw, self.base_ortho):
            if axis.name == name:
                return axis.direction if raw else e
        for ext in self.extensions:
            if ext.name == name:
                return ext.d_in if raw else ext.d_out
        raise ValidationError(f"unknown axis {name!r}; bank has {self.names}")

    def directions(self, raw=False) -> np.ndarray:
        return np.vstack([self.direction(n, raw=raw) for n in self.names])


def _frozen(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=np.float64)
    v.setflags(write=False)
    return v


def fit_axis(ds: LatentDataset, attribute: str) -> AttributeAxis:
    """Regress one attribute's labels on the latents and normalize the weights."""
    if attribute not in ds.labels:
        raise ValidationError(f"attribute {attribute!r} not in dataset ({ds.attributes})")
    if ds.n < 2:
        raise ValidationError("fitting an axis needs at least 2 samples")
    y = ds.labels[attribute]
    if np.all(y == y[0]):
        raise DegenerateAttributeError(f"attribute {attribute!r} has constant labels")
    res = solve_ols(ds.latents, y, add_intercept=True)
    w = res.weights[1:]
    scale = float(np.linalg.norm(w))
    if scale == 0:
        raise DegenerateAttributeError(f"attribute {attribute!r} has no linear dependence on the latents")
    centered = y - y.mean()
    tss = float(centered @ centered)
    r2 = float(np.clip(1.0 - res.residual_sum_squares / tss, 0.0, 1.0))
    return AttributeAxis(
        name=attribute,
        direction=_frozen(w / scale),
        bias=float(res.weights[0]),
        rss=res.residual_sum_squares,
        r_squared=r2,
        n_samples=ds.n,
        rank_deficient=res.rank_deficient,
    )


def orthonormalize_axes(axes, tol=DEFAULT_DEPENDENCE_TOL) -> tuple[np.ndarray, ...]:
    try:
        ortho = gram_schmidt([a.direction for a in axes], tol=tol)
    except LinearDependenceError as exc:
        raise LinearDependenceError(exc.index, exc.residual_norm, axes[exc.index].name) from None
    return tuple(_frozen(e) for e in ortho)


def build_bank(ds: LatentDataset, base_names, tol=DEFAULT_DEPENDENCE_TOL) -> AxisBank:
    base_names = list(base_names)
    if not base_names:
        raise ValidationError("need at least one base attribute")
    if len(set(base_names)) != len(base_names):
        raise ValidationError("duplicate base attribute names")
    raw = tuple(fit_axis(ds, name) for name in base_names)
    return AxisBank(dim=ds.p, base_raw=raw, base_ortho=orthonormalize_axes(raw, tol))


def _check_weights(weights, n_base) -> tuple[float, ...]:
    if weights is None:
        return tuple([1.0 / n_base] * n_base)
    w = tuple(float(x) for x in weights)
    if len(w) != n_base:
        raise ValidationError(f"need {n_base} sub-vector weights, got {len(w)}")
    if not all(np.isfinite(w)):
        raise ValidationError("sub-vector weights must be finite")
    if abs(sum(w) - 1.0) > 1e-12:
        raise ValidationError(f"sub-vector weights must sum to 1, got {sum(w)!r}")
    return w


def extension_direction(d_in, base_ortho, mode=RESIDUAL, weights=None, tol=DEFAULT_DEPENDENCE_TOL):
    """Decouple a newly fitted direction from the base axes.

    ``residual`` removes the projection onto the whole base span.
    ``per-subvector`` splits ``d_in`` into weighted copies, removes from copy
    ``i`` its projection on base axis ``i`` only, and sums the results; that
    output is generally *not* orthogonal to the base and exists for
    comparison.  Returns ``(d_out, weights)``.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    d_in = as_vec(d_in, "d_in")
    resid = residual_perp(d_in, base_ortho)
    if np.linalg.norm(resid) < tol * np.linalg.norm(d_in):
        raise InseparableAttributeError("new direction lies within the span of the base axes")
    if mode == RESIDUAL:
        if weights is not None:
            raise ValidationError("weights only apply to per-subvector mode")
        return normalize(resid), ()
    w = _check_weights(weights, len(base_ortho))
    total = np.zeros_like(d_in)
    for wi, e in zip(w, base_ortho):
        sub = wi * d_in
        total += sub - (e @ sub) * e
    return normalize(total), w


def extend_axis(bank: AxisBank, ds: LatentDataset, new_name: str, mode=RESIDUAL, weights=None,
                tol=DEFAULT_DEPENDENCE_TOL) -> AxisBank:
    """Return a copy of ``bank`` with ``new_name`` fitted and decoupled from the base."""
    if new_name in bank.names:
        raise ValidationError(f"axis {new_name!r} already in bank")
    if ds.p != bank.dim:
        raise ValidationError(f"dataset dim {ds.p} does not match bank dim {bank.dim}")
    axis = fit_axis(ds, new_name)
    try:
        d_out, w = extension_direction(axis.direction, bank.base_ortho, mode, weights, tol)
    except InseparableAttributeError:
        raise InseparableAttributeError(
            f"attribute {new_name!r} cannot be separated from the base axes {bank.base_names}"
        ) from None
    ext = Extension(name=new_name, d_in=axis.direction, d_out=_frozen(d_out), mode=mode, weights=w)
    return dataclasses.replace(bank, extensions=bank.extensions + (ext,))


def leakage_matrix(bank: AxisBank, world, raw=False) -> np.ndarray:
    """Entry (j, m): change in true attribute j per unit edit along bank axis m."""
    if world.p != bank.dim:
        raise ValidationError(f"world dim {world.p} does not match bank dim {bank.dim}")
    D = bank.directions(raw=raw)
    return as_mat(world.true_dirs) @ D.T
