"""LR-HR pair synthesis: bicubic resampling, degradation, textures, image I/O.

Images are float32 arrays of shape (H, W) with values in [0, 1]
(grayscale; degradation ops clamp back into range). Bicubic resampling
uses the Keys cubic convolution kernel with a = -0.5 and clamp-to-edge
boundaries; resize weights are built in float64 so the four kernel taps
sum to 1 to well below 1e-9 at any fractional offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

BICUBIC_A = -0.5


@dataclass(frozen=True)
class DegradeMode:
    kind: str = "bicubic"  # "bicubic" | "lite"
    blur_sigma_range: tuple = (0.2, 1.0)
    noise_sigma_range: tuple = (0.0, 0.05)

    def __post_init__(self):
        if self.kind not in ("bicubic", "lite"):
            raise ValueError(f"unknown degrade mode: {self.kind}")
        for lo, hi in (self.blur_sigma_range, self.noise_sigma_range):
            if lo < 0 or hi < lo:
                raise ValueError("degradation parameter ranges must satisfy 0 <= lo <= hi")


def bicubic_kernel(x):
    """Keys cubic convolution weight W(x) with a = -0.5."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    a = BICUBIC_A
    w = np.where(
        x <= 1.0,
        (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0,
        np.where(x < 2.0, a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a, 0.0),
    )
    return w


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) bicubic interpolation matrix along one axis.

    Source coordinates follow src = (dst + 0.5) * (n_in / n_out) - 0.5
    with clamp-to-edge index handling.
    """
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, n_in - 1)
        w = bicubic_kernel(src - (base + k))
        np.add.at(mat, (dst.astype(np.int64), idx), w)
    return mat


_MATRIX_CACHE: dict = {}


def _axis_matrix(n_in, n_out):
    key = (n_in, n_out)
    if key not in _MATRIX_CACHE:
        _MATRIX_CACHE[key] = _resize_matrix(n_in, n_out)
    return _MATRIX_CACHE[key]


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize; output clamped to [0, 1]."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got {out_h}x{out_w}")
    img = np.asarray(img)
    h, w = img.shape[-2], img.shape[-1]
    mr = _axis_matrix(h, out_h)
    mc = _axis_matrix(w, out_w)
    out = np.einsum("oh,...hw,pw->...op", mr, img.astype(np.float64), mc, optimize=True)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize_like(x_l: np.ndarray, x_h: np.ndarray) -> np.ndarray:
    """Bicubic-resize x_l to x_h's spatial dims."""
    return bicubic_resize(x_l, x_h.shape[-2], x_h.shape[-1])


def degrade(x_h: np.ndarray, s: int, mode: DegradeMode, rng_seed: int) -> np.ndarray:
    """Produce the LR counterpart of an HR image at scale factor s."""
    if s < 1:
        raise ValueError(f"scale factor must be >= 1, got {s}")
    h, w = x_h.shape[-2], x_h.shape[-1]
    if h % s or w % s:
        raise ValueError(f"image dims {h}x{w} not divisible by scale {s}")
    if mode.kind == "bicubic":
        return bicubic_resize(x_h, h // s, w // s)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    blur_lo, blur_hi = mode.blur_sigma_range
    noise_lo, noise_hi = mode.noise_sigma_range
    sigma_b = rng.uniform(blur_lo, blur_hi)
    blurred = ndimage.gaussian_filter(
        np.asarray(x_h, dtype=np.float64), sigma=sigma_b, mode="nearest"
    )
    down = bicubic_resize(blurred, h // s, w // s)
    sigma_n = rng.uniform(noise_lo, noise_hi)
    noisy = down + sigma_n * rng.standard_normal(down.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# procedural texture corpus


def gen_texture(seed: int, h: int, w: int) -> np.ndarray:
    """Deterministic synthetic texture in [0, 1] with high-frequency content.

    Mixture of 2-4 sinusoidal gratings (period 2-16 px, random
    orientation/phase, amplitude tapering with frequency), one
    random-threshold checkerboard (cell 2-8 px) and low-pass-filtered
    Gaussian noise, then min-max normalized. The checkerboard edges and
    short-period gratings put energy above the Nyquist limit of an x8
    downsample, so super-resolution at x8 stays generative.
    """
    if h < 8 or w < 8:
        raise ValueError(f"texture dims must be >= 8, got {h}x{w}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x7e87])))
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    img = np.zeros((h, w), dtype=np.float64)

    n_gratings = int(rng.integers(2, 5))
    for _ in range(n_gratings):
        period = float(np.exp(rng.uniform(np.log(2.0), np.log(16.0))))
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        # high-frequency gratings enter at reduced contrast
        amp = rng.uniform(0.5, 1.0) * (period / 16.0) ** 1.2
        coord = xs * np.cos(theta) + ys * np.sin(theta)
        img += amp * np.sin(2.0 * np.pi * coord / period + phase)

    cell = int(rng.integers(2, 9))
    cells = rng.random((h // cell + 2, w // cell + 2))
    thresh = rng.uniform(0.3, 0.7)
    board = (cells > thresh).astype(np.float64)
    board = np.repeat(np.repeat(board, cell, axis=0), cell, axis=1)[:h, :w]
    img += rng.uniform(0.7, 1.2) * board

    noise = rng.standard_normal((h, w))
    noise = ndimage.gaussian_filter(noise, sigma=rng.uniform(1.5, 3.0), mode="wrap")
    img += rng.uniform(0.15, 0.35) * noise / max(noise.std(), 1e-9)

    lo, hi = img.min(), img.max()
    if hi - lo < 1e-9:
        return np.full((h, w), 0.5, dtype=np.float32)
    return ((img - lo) / (hi - lo)).astype(np.float32)


def highfreq_power_fraction(img: np.ndarray, cutoff: float = np.pi / 8.0) -> float:
    """Fraction of total spectral power above a radial frequency (rad/px)."""
    f = np.fft.fft2(np.asarray(img, dtype=np.float64))
    power = np.abs(f) ** 2
    h, w = img.shape
    fy = 2.0 * np.pi * np.fft.fftfreq(h)
    fx = 2.0 * np.pi * np.fft.fftfreq(w)
    rad = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    total = power.sum()
    return float(power[rad > cutoff].sum() / total)


# ---------------------------------------------------------------------------
# image I/O (8-bit grayscale PGM P5 and PNG)


def to_bytes_u8(img: np.ndarray) -> np.ndarray:
    """Quantize [0,1] floats to u8 via v*255 with round-half-up."""
    scaled = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def from_bytes_u8(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32) / 255.0).astype(np.float32)


def write_image(path, img: np.ndarray):
    """Write a [0,1] grayscale image as PGM (P5) or PNG by extension."""
    path = str(path)
    data = to_bytes_u8(img)
    if path.endswith(".pgm"):
        header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(data.tobytes())
    elif path.endswith(".png"):
        from PIL import Image

        Image.fromarray(data, mode="L").save(path, format="PNG")
    else:
        raise ValueError(f"unsupported image extension: {path}")


def read_image(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".pgm"):
        with open(path, "rb") as fh:
            blob = fh.read()
        if not blob.startswith(b"P5"):
            raise ValueError(f"not a binary PGM file: {path}")
        fields = []
        pos = 2
        while len(fields) < 3:
            while pos < len(blob) and blob[pos : pos + 1].isspace():
                pos += 1
            if blob[pos : pos + 1] == b"#":  # comment line
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(blob) and not blob[pos : pos + 1].isspace():
                pos += 1
            fields.append(int(blob[start:pos]))
        pos += 1  # single whitespace after maxval
        w, h, maxval = fields
        if maxval != 255:
            raise ValueError(f"only 8-bit PGM supported, maxval={maxval}")
        raw = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos).reshape(h, w)
        return from_bytes_u8(raw)
    if path.endswith(".png"):
        from PIL import Image

        with Image.open(path) as im:
            return from_bytes_u8(np.asarray(im.convert("L"), dtype=np.uint8))
    raise ValueError(f"unsupported image extension: {path}")


def psnr_vs_bicubic(x_h: np.ndarray, s: int) -> float:
    """PSNR of the plain bicubic down-up round trip (baseline oracle)."""
    from .metrics import psnr

    lr = bicubic_resize(x_h, x_h.shape[-2] // s, x_h.shape[-1] // s)
    up = resize_like(lr, x_h)
    return psnr(up, x_h)
