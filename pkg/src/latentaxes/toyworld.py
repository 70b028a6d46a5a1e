"""Synthetic ground-truth latent world.

A world has ``k`` known unit attribute directions in R^p, a linear labeler
``score_j(z) = a_j . z + b_j`` and a linear template decoder that renders a
latent as ``background + sum_j (a_j . z) * template_j``.  Everything is a pure
function of the constructor arguments, so the world doubles as an oracle for
the fitting and editing code.

Images are 2-D float64 arrays of shape (h, w).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import as_vec

DEFAULT_NAMES = (
    "natural", "happy", "angry", "fear", "sad", "surprise",
    "beard", "mouth", "eyebrow", "eye",
)
MAX_RHO = 0.95
BACKGROUND_LEVEL = 0.5


@dataclass(frozen=True, eq=False)
class ToyWorld:
    p: int
    k: int
    names: tuple[str, ...]
    true_dirs: np.ndarray      # (k, p), unit rows
    biases: np.ndarray         # (k,)
    rho: float
    noise_sigma: float
    img_h: int
    img_w: int
    templates: np.ndarray      # (k, h, w)
    background: np.ndarray     # (h, w)
    seed: int
    params: dict = field(default_factory=dict)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown attribute {name!r}") from None

    def decoder_matrix(self) -> np.ndarray:
        """Frozen linear decoder used for encoder training, shape (h*w, k+1).

        Columns are the flattened templates followed by the background, so a
        code ``c`` with last entry 1 decodes to the same image as ``decode``.
        """
        cols = [t.ravel() for t in self.templates] + [self.background.ravel()]
        return np.stack(cols, axis=1)


def _row_dots(Z: np.ndarray, A: np.ndarray) -> np.ndarray:
    # Row-by-row reductions so a single latent and a batch give bit-identical scores.
    out = np.empty((Z.shape[0], A.shape[0]))
    for j, a in enumerate(A):
        out[:, j] = (Z * a).sum(axis=1)
    return out


def equicorrelated_directions(p: int, k: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """k unit vectors in R^p with every pairwise cosine equal to ``rho``.

    Built as ``c1 * f_j + c2 * s`` where ``f_j`` are orthonormal and ``s`` is
    their normalized sum, with c1, c2 solved from the unit-norm and target
    cosine conditions; the frame is a seeded random rotation into R^p.
    """
    c1 = np.sqrt(1.0 - rho)
    c2 = -c1 / np.sqrt(k) + np.sqrt(c1 * c1 / k + rho)
    F = np.linalg.qr(rng.standard_normal((p, k)))[0].T      # (k, p) orthonormal rows
    s = F.sum(axis=0) / np.sqrt(k)
    A = c1 * F + c2 * s
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def _make_templates(k: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy = (yy + 0.5) / h
    xx = (xx + 0.5) / w
    out = np.empty((k, h, w))
    for j in range(k):
        kind = j % 6
        c = rng.uniform(0.25, 0.75, size=2)
        width = rng.uniform(0.06, 0.14)
        if kind == 0:    # horizontal bar
            t = np.exp(-0.5 * ((yy - c[0]) / width) ** 2) * np.ones_like(xx)
        elif kind == 1:  # vertical bar
            t = np.exp(-0.5 * ((xx - c[1]) / width) ** 2) * np.ones_like(yy)
        elif kind == 2:  # centered blob
            t = np.exp(-0.5 * (((yy - c[0]) ** 2 + (xx - c[1]) ** 2) / (1.5 * width) ** 2))
        elif kind == 3:  # oriented gradient
            theta = rng.uniform(0, 2 * np.pi)
            t = np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)
        elif kind == 4:  # ring
            r = np.sqrt((yy - c[0]) ** 2 + (xx - c[1]) ** 2)
            t = np.exp(-0.5 * ((r - 2.0 * width) / (0.4 * width)) ** 2)
        else:            # diagonal bar
            t = np.exp(-0.5 * (((xx - c[1]) - (yy - c[0])) / (np.sqrt(2) * width)) ** 2)
        out[j] = t / np.max(np.abs(t))
    return out


def make_world(p, k, rho=0.0, noise_sigma=0.0, img_h=64, img_w=64, seed=0, names=None) -> ToyWorld:
    if k < 1 or p < 1:
        raise ValidationError("p and k must be positive")
    if k > p:
        raise ValidationError(f"k={k} attribute directions do not fit in p={p} dimensions")
    if not 0.0 <= rho <= MAX_RHO:
        raise ValidationError(f"rho must lie in [0, {MAX_RHO}], got {rho}")
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be non-negative")
    if img_h < 1 or img_w < 1:
        raise ValidationError("image dimensions must be positive")
    if names is None:
        names = DEFAULT_NAMES[:k] if k <= len(DEFAULT_NAMES) else tuple(f"attr_{j}" for j in range(k))
    names = tuple(names)
    if len(names) != k or len(set(names)) != k:
        raise ValidationError("need k distinct attribute names")

    rng = np.random.default_rng(seed)
    dirs = equicorrelated_directions(p, k, rho, rng)
    biases = rng.uniform(-0.5, 0.5, size=k)
    templates = _make_templates(k, img_h, img_w, rng)
    background = np.full((img_h, img_w), BACKGROUND_LEVEL)
    for arr in (dirs, biases, templates, background):
        arr.setflags(write=False)
    return ToyWorld(
        p=p, k=k, names=names, true_dirs=dirs, biases=biases, rho=float(rho),
        noise_sigma=float(noise_sigma), img_h=img_h, img_w=img_w,
        templates=templates, background=background, seed=int(seed),
        params=dict(p=p, k=k, rho=float(rho), noise_sigma=float(noise_sigma),
                    img_h=img_h, img_w=img_w, seed=int(seed), names=list(names)),
    )


def _check_latent(world: ToyWorld, z) -> np.ndarray:
    z = as_vec(z, "latent")
    if z.shape[0] != world.p:
        raise ValidationError(f"latent has dim {z.shape[0]}, world has p={world.p}")
    return z


def sample_latents(world: ToyWorld, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValidationError("n must be at least 1")
    return np.random.default_rng(seed).standard_normal((n, world.p))


def sample_dataset(world: ToyWorld, n: int, seed):
    """Gaussian latents with (optionally noisy) linear labels for every attribute."""
    from .axes import LatentDataset

    rng = np.random.default_rng(seed)
    if n < 1:
        raise ValidationError("n must be at least 1")
    Z = rng.standard_normal((n, world.p))
    Y = _row_dots(Z, world.true_dirs) + world.biases
    if world.noise_sigma > 0:
        Y = Y + world.noise_sigma * rng.standard_normal(Y.shape)
    return LatentDataset(Z, {name: Y[:, j] for j, name in enumerate(world.names)})


def true_scores(world: ToyWorld, z) -> np.ndarray:
    z = _check_latent(world, z)
    return _row_dots(z[None, :], world.true_dirs)[0] + world.biases


def true_scores_batch(world: ToyWorld, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != world.p:
        raise ValidationError(f"expected latents of shape (n, {world.p}), got {Z.shape}")
    return _row_dots(Z, world.true_dirs) + world.biases


def decode(world: ToyWorld, z, clamp=False) -> np.ndarray:
    z = _check_latent(world, z)
    coeffs = _row_dots(z[None, :], world.true_dirs)[0]
    img = world.background + np.tensordot(coeffs, world.templates, axes=1)
    if clamp:
        img = np.clip(img, 0.0, 1.0)
    return img


def training_images(world: ToyWorld, n: int, seed, latent_scale=0.15) -> np.ndarray:
    """Decoded images of ``latent_scale``-shrunk Gaussian latents, shape (n, h, w).

    The shrink keeps most pixels inside [0, 1] so PSNR/SSIM with unit dynamic
    range are meaningful.
    """
    Z = latent_scale * sample_latents(world, n, seed)
    return np.stack([decode(world, z) for z in Z])
