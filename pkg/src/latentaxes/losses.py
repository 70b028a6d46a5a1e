"""Reconstruction objective: pixel loss plus feature-pyramid perceptual loss.

All losses are written once on top of :mod:`latentaxes.autodiff`, so the
value paths and the gradient path share the same arithmetic.  Images are
(h, w) arrays or (n, h, w) batches; batch losses are means over images.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError
from .metrics import SsimParams, _filter_matrix, _pool_matrix, check_ms_args

PIXEL_KINDS = ("mse", "mae", "log_cosh", "ms_ssim_mse")
DEFAULT_LAMBDA = 0.84
MAX_SCALES = 5


@dataclass(frozen=True)
class FeaturePyramidSpec:
    """Fixed random convolutional feature extractor.

    ``layers`` holds (out_channels, kernel, stride) per layer; the input has a
    single channel.  Kernels are seeded normals scaled by 1/sqrt(fan_in).
    ``squared`` selects squared L2 feature distances (smooth at zero) over
    plain L2 norms.
    """

    layers: tuple[tuple[int, int, int], ...] = ((4, 3, 2), (8, 3, 2), (8, 3, 2), (8, 3, 1))
    seed: int = 0
    tap_layers: tuple[int, ...] = (0, 1, 2, 3)
    nonlinearity: str = "tanh"
    bias_scale: float = 0.0
    squared: bool = True

    def __post_init__(self):
        layers = tuple(tuple(int(v) for v in layer) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "tap_layers", tuple(int(t) for t in self.tap_layers))
        for i, (c, k, s) in enumerate(layers):
            if c < 1 or k < 1 or s < 1:
                raise ValidationError(f"layer {i}: channels, kernel and stride must be >= 1")
        for t in self.tap_layers:
            if not 0 <= t < len(layers):
                raise ValidationError(f"tap layer {t} out of range for {len(layers)} layers")
        if self.nonlinearity != "tanh":
            raise ValidationError("only the tanh nonlinearity is supported")

    @property
    def depth(self) -> int:
        # layers past the last tap are never evaluated
        return max(self.tap_layers) + 1 if self.tap_layers else 0

    def feature_shapes(self, h: int, w: int) -> list[tuple[int, int, int]]:
        shapes = []
        for i, (c, k, s) in enumerate(self.layers):
            h2, w2 = (h - k) // s + 1, (w - k) // s + 1
            if h < k or w < k or h2 < 1 or w2 < 1:
                raise ValidationError(f"input {h}x{w} too small for layer {i} (kernel {k}, stride {s})")
            shapes.append((c, h2, w2))
            h, w = h2, w2
        return shapes


NO_PERCEPTUAL = FeaturePyramidSpec(tap_layers=())


@lru_cache(maxsize=32)
def _kernels(spec: FeaturePyramidSpec):
    rng = np.random.default_rng(spec.seed)
    out = []
    cin = 1
    for c, k, _ in spec.layers:
        fan_in = cin * k * k
        w = rng.standard_normal((c, cin, k, k)) / np.sqrt(fan_in)
        b = spec.bias_scale * rng.standard_normal(c)
        w.setflags(write=False)
        b.setflags(write=False)
        out.append((w, b))
        cin = c
    return tuple(out)


@dataclass(frozen=True)
class PixelLossKind:
    kind: str = "ms_ssim_mse"
    lam: float = DEFAULT_LAMBDA
    scales: int | None = None            # None: as many (up to 5) as the image allows
    weights: tuple[float, ...] | None = None
    ssim: SsimParams = field(default_factory=SsimParams)

    def __post_init__(self):
        if self.kind not in PIXEL_KINDS:
            raise ValidationError(f"pixel loss kind must be one of {PIXEL_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError("lambda must lie in [0, 1]")

    def resolve_scales(self, h: int, w: int) -> int:
        if self.scales is not None:
            return self.scales
        s = 1
        while s < MAX_SCALES and min(h, w) >= self.ssim.window * 2 ** s:
            s += 1
        return s


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValidationError(f"expected an image or a batch of images, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("image contains non-finite pixels")
    return x


def _lift_batch(x) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.value.ndim == 3 else x.reshape(1, *x.shape)
    return Tensor(_as_batch(x))


def _check_pair(xr: Tensor, xs: Tensor):
    if xr.shape != xs.shape:
        raise ValidationError(f"image shapes differ: {xr.shape[1:]} vs {xs.shape[1:]}")


# graph builders: Tensor (n, h, w) in, scalar Tensor out

def features_graph(spec: FeaturePyramidSpec, x: Tensor) -> list[Tensor]:
    n, h, w = x.shape
    spec.feature_shapes(h, w)
    out = []
    f = x.reshape(n, 1, h, w)
    for (w_k, b), (_, _, stride) in zip(_kernels(spec)[:spec.depth], spec.layers):
        f = ad.tanh(ad.conv2d(f, w_k, stride) + b[None, :, None, None])
        out.append(f)
    return out


def perceptual_graph(spec: FeaturePyramidSpec, xr: Tensor, xs: Tensor) -> Tensor:
    _check_pair(xr, xs)
    n = xr.shape[0]
    if not spec.tap_layers:
        return Tensor(0.0)
    fr = features_graph(spec, xr)
    fs = features_graph(spec, xs)
    total = None
    for t in spec.tap_layers:
        c, h, w = fr[t].shape[1:]
        d = fr[t] - fs[t]
        sq = (d * d).sum(axis=(1, 2, 3))
        per_image = sq if spec.squared else ad.sqrt(sq)
        term = per_image * (1.0 / (c * h * w))
        total = term if total is None else total + term
    return total.sum() * (1.0 / n)


def ms_ssim_graph(xr: Tensor, xs: Tensor, scales: int, weights, params: SsimParams) -> Tensor:
    """Per-batch mean MS-SSIM with the same arithmetic as :func:`metrics.ms_ssim`."""
    _check_pair(xr, xs)
    weights = check_ms_args(xr.shape[1:], scales, weights, params)
    c1, c2 = params.c1, params.c2
    a, b = xr, xs
    result = None
    for j in range(scales):
        h, w = a.shape[1:]
        Fh = _filter_matrix(h, params.window, params.gaussian_sigma)
        FwT = _filter_matrix(w, params.window, params.gaussian_sigma).T

        def filt(x):
            return (Fh @ x) @ FwT

        mu_a, mu_b = filt(a), filt(b)
        var_a = filt(a * a) - mu_a * mu_a
        var_b = filt(b * b) - mu_b * mu_b
        cov = filt(a * b) - mu_a * mu_b
        cs = (2.0 * cov + c2) / (var_a + var_b + c2)
        if j == scales - 1:
            lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
            term = (lum * cs).mean(axis=(1, 2))
        else:
            term = cs.mean(axis=(1, 2))
        factor = ad.pos_pow(term, weights[j])
        result = factor if result is None else result * factor
        if j < scales - 1:
            Ph = _pool_matrix(h)
            PwT = _pool_matrix(w).T
            a = (Ph @ a) @ PwT
            b = (Ph @ b) @ PwT
    return result.mean()


def pixel_graph(kind: PixelLossKind, xr: Tensor, xs: Tensor) -> Tensor:
    _check_pair(xr, xs)
    d = xr - xs
    if kind.kind == "mae":
        return ad.abs(d).mean()
    if kind.kind == "log_cosh":
        return ad.log_cosh(d).mean()
    mse = (d * d).mean()
    if kind.kind == "mse":
        return mse
    h, w = xr.shape[1:]
    ms = ms_ssim_graph(xr, xs, kind.resolve_scales(h, w), kind.weights, kind.ssim)
    return kind.lam * (1.0 - ms) + (1.0 - kind.lam) * mse


# value API

def extract_features(spec: FeaturePyramidSpec, x) -> list[np.ndarray]:
    """Feature maps of every evaluated layer; (C, H, W) for an image, (N, C, H, W) for a batch."""
    x = np.asarray(x, dtype=np.float64)
    feats = features_graph(spec, _lift_batch(x))
    return [f.value[0] if x.ndim == 2 else f.value for f in feats]


def perceptual_loss(spec: FeaturePyramidSpec, x_r, x_s) -> float:
    return float(perceptual_graph(spec, _lift_batch(x_r), _lift_batch(x_s)).value)


def pixel_loss(kind: PixelLossKind, x_r, x_s) -> float:
    return float(pixel_graph(kind, _lift_batch(x_r), _lift_batch(x_s)).value)


def total_loss(spec: FeaturePyramidSpec, kind: PixelLossKind, x_r, x_s) -> float:
    """Unweighted sum of the pixel and perceptual losses."""
    return pixel_loss(kind, x_r, x_s) + perceptual_loss(spec, x_r, x_s)


def reconstruct(decoder, encoder, x) -> np.ndarray:
    """Decode the encoding of each image: ``decoder @ encoder @ vec(x)``."""
    X = _as_batch(x)
    n, h, w = X.shape
    flat = X.reshape(n, h * w)
    return ((flat @ np.asarray(encoder).T) @ np.asarray(decoder).T).reshape(n, h, w)


def total_loss_grad(spec: FeaturePyramidSpec, kind: PixelLossKind, decoder, encoder, x_r):
    """Loss of reconstructing ``x_r`` through the linear maps, and its encoder gradient.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``encoder``.
    """
    X = _as_batch(x_r)
    n, h, w = X.shape
    D = np.asarray(decoder, dtype=np.float64)
    E = np.asarray(encoder, dtype=np.float64)
    if D.ndim != 2 or E.ndim != 2 or D.shape[0] != h * w or E.shape[1] != h * w or D.shape[1] != E.shape[0]:
        raise ValidationError(
            f"shape mismatch: decoder {D.shape}, encoder {E.shape}, image {h}x{w}"
        )
    enc = ad.variable(E)
    flat = Tensor(X.reshape(n, h * w))
    xs = ((flat @ enc.transpose(1, 0)) @ D.T).reshape(n, h, w)
    xr = Tensor(X)
    loss = pixel_graph(kind, xr, xs) + perceptual_graph(spec, xr, xs)
    loss.backward()
    grad = enc.grad if enc.grad is not None else np.zeros_like(E)
    return float(loss.value), grad
