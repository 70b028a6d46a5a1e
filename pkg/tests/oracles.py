"""Independent reference implementations shared by the test modules."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from latentaxes.metrics import SsimParams
from latentaxes.toyworld import make_world, training_images

MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def naive_psnr(a, b, max_val=1.0):
    err = np.sum((a - b) ** 2) / a.size
    return 100.0 if err == 0 else 10 * np.log10(max_val ** 2 / err)


def naive_ssim_terms(a, b, p=SsimParams()):
    x = np.arange(p.window) - (p.window - 1) / 2
    g = np.exp(-x ** 2 / (2 * p.gaussian_sigma ** 2))
    K = np.outer(g, g) / np.sum(np.outer(g, g))
    C1, C2 = (p.k1 * p.dynamic_range) ** 2, (p.k2 * p.dynamic_range) ** 2
    wa = sliding_window_view(a, K.shape)
    wb = sliding_window_view(b, K.shape)
    mu_a = np.einsum("ijkl,kl->ij", wa, K)
    mu_b = np.einsum("ijkl,kl->ij", wb, K)
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = np.einsum("ijkl,kl->ij", da * da, K)
    var_b = np.einsum("ijkl,kl->ij", db * db, K)
    cov = np.einsum("ijkl,kl->ij", da * db, K)
    lum = (2 * mu_a * mu_b + C1) / (mu_a ** 2 + mu_b ** 2 + C1)
    cs = (2 * cov + C2) / (var_a + var_b + C2)
    return np.mean(lum * cs), np.mean(cs)


def naive_ms_ssim(a, b, weights=MS_WEIGHTS):
    out = 1.0
    for j, wj in enumerate(weights):
        full, cs = naive_ssim_terms(a, b)
        term = full if j == len(weights) - 1 else cs
        out *= max(term, 0.0) ** wj
        h, w = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
        a = a[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
        b = b[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return out


def image_pair(seed, size=256):
    rng = np.random.default_rng(seed)
    base = rng.uniform(size=(size // 8, size // 8))
    a = np.kron(base, np.ones((8, 8))) + 0.05 * rng.standard_normal((size, size))
    b = a + 0.1 * rng.standard_normal((size, size))
    return a, b


def linear_task(seed=0, n=32, size=32):
    """Images from the template span plus a pattern the decoder cannot draw."""
    w = make_world(16, 6, img_h=size, img_w=size, seed=seed)
    X = training_images(w, n, seed=3, latent_scale=1.0)
    D = w.decoder_matrix()
    rng = np.random.default_rng(4)
    q = rng.standard_normal(size * size)
    q -= D @ np.linalg.lstsq(D, q, rcond=None)[0]
    q /= np.abs(q).max()
    X = X + rng.standard_normal(n)[:, None, None] * q.reshape(size, size)
    F = X.reshape(n, -1).T
    resid = F - D @ np.linalg.lstsq(D, F, rcond=None)[0]
    return w, X, float(np.mean(resid * resid))
