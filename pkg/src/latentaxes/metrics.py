"""Image-quality metrics and attribute-editing accuracy.

SSIM uses an 11-tap Gaussian window (sigma 1.5) applied without padding, as
in the original metric; MS-SSIM uses 2x2 mean pooling between scales.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .editing import apply_edit
from .errors import ValidationError
from .toyworld import true_scores_batch

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValidationError("window must be an odd integer >= 3")
        if self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0 or self.gaussian_sigma <= 0:
            raise ValidationError("k1, k2, gaussian_sigma and dynamic_range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


@lru_cache(maxsize=64)
def _filter_matrix(n: int, size: int, sigma: float) -> np.ndarray:
    """(n - size + 1, n) matrix applying the 1-D window in valid mode."""
    g = gaussian_window(size, sigma)
    m = np.zeros((n - size + 1, n))
    for i in range(n - size + 1):
        m[i, i:i + size] = g
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def _pool_matrix(n: int) -> np.ndarray:
    """(n // 2, n) matrix averaging adjacent pairs; a trailing odd row is dropped."""
    m = np.zeros((n // 2, n))
    for i in range(n // 2):
        m[i, 2 * i:2 * i + 2] = 0.5
    m.setflags(write=False)
    return m


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValidationError(f"images must be 2-D with equal shapes, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("images contain non-finite pixels")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b, max_val=1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP`` for identical images."""
    if max_val <= 0:
        raise ValidationError("max_val must be positive")
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(max_val * max_val / err)))


def ssim_maps(a, b, params: SsimParams = SsimParams()):
    """Local SSIM and contrast-structure maps."""
    h, w = a.shape
    if min(h, w) < params.window:
        raise ValidationError(f"image {h}x{w} is smaller than the {params.window}-pixel window")
    Fh = _filter_matrix(h, params.window, params.gaussian_sigma)
    Fw = _filter_matrix(w, params.window, params.gaussian_sigma)

    def filt(x):
        return Fh @ x @ Fw.T

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    cs = (2 * cov + params.c2) / (var_a + var_b + params.c2)
    lum = (2 * mu_a * mu_b + params.c1) / (mu_a * mu_a + mu_b * mu_b + params.c1)
    return lum * cs, cs


def ssim(a, b, params: SsimParams = SsimParams()) -> float:
    a, b = _pair(a, b)
    return float(np.mean(ssim_maps(a, b, params)[0]))


def default_ms_weights(scales: int) -> tuple[float, ...]:
    """Standard five-scale weights, truncated to ``scales`` and renormalized."""
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ValidationError(f"default weights exist for 1..{len(MS_SSIM_WEIGHTS)} scales")
    if scales == len(MS_SSIM_WEIGHTS):
        return MS_SSIM_WEIGHTS
    w = np.array(MS_SSIM_WEIGHTS[:scales])
    return tuple(float(x) for x in w / w.sum())


def check_ms_args(shape, scales, weights, params: SsimParams) -> tuple[float, ...]:
    if scales < 1:
        raise ValidationError("scales must be at least 1")
    min_size = params.window * 2 ** (scales - 1)
    if min(shape) < min_size:
        raise ValidationError(
            f"image {shape[0]}x{shape[1]} too small for {scales}-scale MS-SSIM; "
            f"minimum side is {min_size}"
        )
    if weights is None:
        return default_ms_weights(scales)
    weights = tuple(float(x) for x in weights)
    if len(weights) != scales or any(x <= 0 for x in weights) or abs(sum(weights) - 1) > 1e-9:
        raise ValidationError("MS-SSIM weights must be positive, one per scale, summing to 1")
    return weights


def ms_ssim(a, b, scales=5, weights=None, params: SsimParams = SsimParams()) -> float:
    """Multi-scale SSIM.

    Scales before the last contribute the mean contrast-structure term, the
    last one the full SSIM; negative terms are clamped to zero before the
    fractional powers.
    """
    a, b = _pair(a, b)
    weights = check_ms_args(a.shape, scales, weights, params)
    result = 1.0
    for j in range(scales):
        full, cs = ssim_maps(a, b, params)
        term = np.mean(full) if j == scales - 1 else np.mean(cs)
        result *= max(float(term), 0.0) ** weights[j]
        if j < scales - 1:
            Ph, Pw = _pool_matrix(a.shape[0]), _pool_matrix(a.shape[1])
            a = Ph @ a @ Pw.T
            b = Ph @ b @ Pw.T
    return float(result)


@dataclass(frozen=True)
class FlipResult:
    axis: str
    accuracy: float
    leakage: dict          # non-target attribute -> mean |change in true score|
    mean_leakage: float
    n_trials: int
    alpha: float


def negative_latents(world, attribute_index: int, n_trials: int, seed) -> np.ndarray:
    """Latents whose true score for one attribute lies strictly below its bias.

    Trial ``i`` draws from its own stream seeded by ``(seed, i)``, so the set
    does not depend on evaluation order.
    """
    a = world.true_dirs[attribute_index]
    out = np.empty((n_trials, world.p))
    for i in range(n_trials):
        rng = np.random.default_rng([int(seed), i])
        while True:
            z = rng.standard_normal(world.p)
            if (z * a).sum() < 0:
                out[i] = z
                break
    return out


def flip_accuracy(world, bank, axis: str, n_trials=100, alpha=6.0, seed=0, raw=False) -> FlipResult:
    """Fraction of negative-class latents pushed across the decision boundary.

    The boundary is the true bias of ``axis`` in ``world``; edits use the
    bank's decoupled direction (or the raw fit with ``raw``).  Also reports
    the mean absolute change of every other true score.
    """
    if n_trials < 1:
        raise ValidationError("n_trials must be at least 1")
    bank.direction(axis)
    j = world.index(axis)
    Z = negative_latents(world, j, n_trials, seed)
    edited = np.stack([apply_edit(z, bank, axis, alpha, raw=raw) for z in Z])
    before = true_scores_batch(world, Z)
    after = true_scores_batch(world, edited)
    accuracy = float(np.mean(after[:, j] > world.biases[j]))
    delta = np.mean(np.abs(after - before), axis=0)
    leakage = {name: float(delta[m]) for m, name in enumerate(world.names) if m != j}
    mean_leak = float(np.mean(list(leakage.values()))) if leakage else 0.0
    return FlipResult(axis=axis, accuracy=accuracy, leakage=leakage, mean_leakage=mean_leak,
                      n_trials=n_trials, alpha=float(alpha))
