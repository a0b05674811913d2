"""Image quality metrics: PSNR, windowed SSIM, and a Fréchet-distance proxy.

The proxy (pFID) fits Gaussians to a fixed training-free feature map
(bicubic downsample to 8x8, flattened to 64 dims) and evaluates the
Fréchet distance with a Jacobi eigensolver for the matrix square root.
Numbers are comparable across runs of this artifact, not across papers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .degradation import bicubic_resize

PSNR_CAP_DB = 100.0
FEATURE_DIM = 64
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], capped at 100."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over non-overlapping 8x8 windows (L = 1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    h, w = a.shape
    if h < 8 or w < 8:
        raise ValueError(f"ssim needs dims >= 8, got {h}x{w}")
    nh, nw = h // 8, w // 8
    aw = a[: nh * 8, : nw * 8].reshape(nh, 8, nw, 8).transpose(0, 2, 1, 3).reshape(nh * nw, 64)
    bw = b[: nh * 8, : nw * 8].reshape(nh, 8, nw, 8).transpose(0, 2, 1, 3).reshape(nh * nw, 64)
    mu_a = aw.mean(axis=1)
    mu_b = bw.mean(axis=1)
    var_a = aw.var(axis=1)
    var_b = bw.var(axis=1)
    cov = ((aw - mu_a[:, None]) * (bw - mu_b[:, None])).mean(axis=1)
    num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_a**2 + mu_b**2 + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float(np.mean(num / den))


def feature_extract(img: np.ndarray) -> np.ndarray:
    """Fixed training-free feature map: bicubic resize to 8x8, flatten."""
    if img.shape[-2] < 8 or img.shape[-1] < 8:
        raise ValueError(f"feature_extract needs dims >= 8, got {img.shape}")
    return bicubic_resize(img, 8, 8).reshape(FEATURE_DIM).astype(np.float64)


@dataclass
class GaussianFit:
    mu: np.ndarray
    cov: np.ndarray


def gaussian_fit(features) -> GaussianFit:
    """Sample mean and unbiased covariance of row-stacked feature vectors."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError(f"gaussian_fit needs >= 2 feature vectors, got shape {feats.shape}")
    mu = feats.mean(axis=0)
    centered = feats - mu
    cov = centered.T @ centered / (feats.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianFit(mu=mu, cov=cov)


def jacobi_eigh(mat: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100):
    """Symmetric eigendecomposition via cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with mat = V diag(w) V^T.
    Converges when the off-diagonal Frobenius norm drops below tol.
    """
    a = np.array(mat, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(max(0.0, np.sum(a * a) - np.sum(np.diag(a) ** 2)))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < tol / (n * n):
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[p] - s * a[q]
                rot_q = s * a[p] + c * a[q]
                a[p], a[q] = rot_p, rot_q
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    return np.diag(a).copy(), v


def sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; small negative eigenvalues clamp to 0."""
    w, v = jacobi_eigh(mat)
    if np.any(w < -1e-6):
        raise ValueError(f"matrix is not PSD: min eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(g1: GaussianFit, g2: GaussianFit) -> float:
    """Fréchet distance between two Gaussian fits.

    ||mu1 - mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)), with the cross term
    computed through the symmetric form C1^(1/2) C2 C1^(1/2).
    """
    if g1.mu.shape != g2.mu.shape or g1.cov.shape != g2.cov.shape:
        raise ValueError("frechet_distance: dimension mismatch")
    s1 = sqrtm_psd(g1.cov)
    inner = s1 @ g2.cov @ s1
    inner = 0.5 * (inner + inner.T)
    w, _ = jacobi_eigh(inner)
    if np.any(w < -1e-6):
        raise ValueError(f"cross covariance is not PSD: min eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    mean_term = float(np.sum((g1.mu - g2.mu) ** 2))
    trace_term = float(np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.sum(np.sqrt(w)))
    return max(0.0, mean_term + trace_term)


def pfid(set_a, set_b) -> float:
    """Fréchet proxy between two image sets (each >= 65 images)."""
    if len(set_a) < 65 or len(set_b) < 65:
        raise ValueError(f"pfid needs >= 65 images per set, got {len(set_a)} and {len(set_b)}")
    fa = np.stack([feature_extract(im) for im in set_a])
    fb = np.stack([feature_extract(im) for im in set_b])
    return frechet_distance(gaussian_fit(fa), gaussian_fit(fb))


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    pfid: float
    n_samples: int


def evaluate_pairs(sr_images, hr_images) -> MetricReport:
    """Aggregate metrics for aligned SR/HR image lists."""
    if len(sr_images) != len(hr_images):
        raise ValueError("evaluate_pairs: mismatched set sizes")
    psnrs = [psnr(a, b) for a, b in zip(sr_images, hr_images)]
    ssims = [ssim(a, b) for a, b in zip(sr_images, hr_images)]
    return MetricReport(
        psnr_db=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        pfid=pfid(sr_images, hr_images),
        n_samples=len(sr_images),
    )
