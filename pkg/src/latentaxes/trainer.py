"""Adam training of the toy linear encoder against a frozen template decoder."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import NonFiniteError
from .errors import TrainingDiverged, ValidationError
from .losses import FeaturePyramidSpec, PixelLossKind, reconstruct, total_loss, total_loss_grad

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr0: float = 0.001
    halve_every: int = 500
    max_epochs: int = 2000
    batch: int = 0          # 0 means full batch
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon < 0 or self.lr0 <= 0:
            raise ValidationError("epsilon must be >= 0 and lr0 > 0")
        if self.halve_every < 1 or self.max_epochs < 0 or self.batch < 0:
            raise ValidationError("halve_every >= 1, max_epochs >= 0 and batch >= 0 required")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(params), np.zeros_like(params))


def learning_rate(cfg: OptimizerConfig, epoch: int) -> float:
    """Step-decayed rate: halves every ``cfg.halve_every`` epochs."""
    return cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)


def adam_step(params, grad, state: AdamState, t: int, cfg: OptimizerConfig, epoch: int = 0):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValidationError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    if t < 1:
        raise ValidationError("Adam step counter starts at 1")
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    lr = learning_rate(cfg, epoch)
    new = params - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return new, AdamState(m, v)


@dataclass
class TrainReport:
    losses: list[float]
    encoder: np.ndarray
    initial_encoder: np.ndarray
    final_loss: float
    wall_time: float
    config: dict = field(default_factory=dict)
    diverged: bool = False

    @property
    def epochs(self) -> int:
        return len(self.losses)


def init_encoder(code_dim: int, n_pixels: int, seed) -> np.ndarray:
    s = 1.0 / np.sqrt(n_pixels)
    return np.random.default_rng(seed).uniform(-s, s, size=(code_dim, n_pixels))


def _pairwise_sum(items):
    items = list(items)
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _batch_loss_grad(spec, kind, D, E, X, pool):
    if pool is None:
        return total_loss_grad(spec, kind, D, E, X)
    # per-image gradients reduced in a fixed pairwise order
    parts = list(pool.map(lambda x: total_loss_grad(spec, kind, D, E, x), X))
    n = len(parts)
    loss = _pairwise_sum([p[0] for p in parts]) / n
    grad = _pairwise_sum([p[1] for p in parts]) / n
    return loss, grad


def train_encoder(world, spec: FeaturePyramidSpec, kind: PixelLossKind, images, cfg: OptimizerConfig,
                  workers: int = 1, encoder=None) -> TrainReport:
    """Fit the encoder so that ``decoder @ encoder`` reproduces ``images``.

    The decoder is the world's frozen template matrix.  The trace holds the
    mean batch loss seen in each epoch; ``final_loss`` is the full-data loss
    after the last update.  Raises :class:`TrainingDiverged` (carrying the
    partial report) if a loss exceeds ``DIVERGENCE_LIMIT`` or stops being
    finite.
    """
    X = np.asarray(images, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[0] < 1:
        raise ValidationError("need at least one image")
    D = world.decoder_matrix()
    n, h, w = X.shape
    if D.shape[0] != h * w:
        raise ValidationError(f"images are {h}x{w} but the decoder renders {world.img_h}x{world.img_w}")
    E0 = init_encoder(D.shape[1], h * w, cfg.seed) if encoder is None else np.array(encoder, dtype=np.float64)
    E = E0.copy()
    state = AdamState.zeros_like(E)
    rng = np.random.default_rng([cfg.seed, 1])
    batch = n if cfg.batch == 0 else min(cfg.batch, n)
    trace: list[float] = []
    echo = dict(asdict(cfg), workers=workers, kind=kind.kind, lam=kind.lam, n_images=n)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    start = time.perf_counter()
    t = 0

    def report(diverged=False, final=float("nan")):
        return TrainReport(trace, E, E0, final, time.perf_counter() - start, echo, diverged)

    try:
        for epoch in range(cfg.max_epochs):
            order = np.arange(n) if batch == n else rng.permutation(n)
            epoch_losses = []
            for b0 in range(0, n, batch):
                idx = order[b0:b0 + batch]
                try:
                    loss, grad = _batch_loss_grad(spec, kind, D, E, X[idx], pool)
                except NonFiniteError as exc:
                    raise TrainingDiverged(f"epoch {epoch}: {exc}", report(True)) from exc
                if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                    raise TrainingDiverged(f"epoch {epoch}: loss {loss!r} out of range", report(True))
                epoch_losses.append(loss)
                t += 1
                E, state = adam_step(E, grad, state, t, cfg, epoch)
            trace.append(float(np.mean(epoch_losses)))
    finally:
        if pool is not None:
            pool.shutdown()
    final = total_loss(spec, kind, X, reconstruct(D, E, X))
    return report(final=final)


def grad_check(spec, kind, decoder, encoder, x, n_coords=100, h=1e-6, seed=0) -> float:
    """Largest relative gap between analytic and central-difference encoder gradients.

    Compares ``n_coords`` seeded encoder entries; the relative error uses
    ``max(1e-8, |finite difference|)`` as denominator.
    """
    if n_coords < 1 or h <= 0:
        raise ValidationError("n_coords >= 1 and h > 0 required")
    E = np.array(encoder, dtype=np.float64)
    _, grad = total_loss_grad(spec, kind, decoder, E, x)
    rng = np.random.default_rng(seed)
    coords = rng.choice(E.size, size=min(n_coords, E.size), replace=False)
    worst = 0.0
    for flat in coords:
        idx = np.unravel_index(flat, E.shape)
        orig = E[idx]
        E[idx] = orig + h
        up = total_loss(spec, kind, x, reconstruct(decoder, E, x))
        E[idx] = orig - h
        down = total_loss(spec, kind, x, reconstruct(decoder, E, x))
        E[idx] = orig
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(grad[idx] - fd) / max(1e-8, abs(fd)))
    return float(worst)
