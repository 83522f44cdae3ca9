"""Deterministic interpolation resamplers for float images in [0, 1].

All methods share the same conventions: half-pixel sample centers
(align_corners=false semantics), replicate padding at the borders, and a
final clip to [0, 1]. The separable kernels (bilinear, bicubic, lanczos)
are applied axis by axis through dense per-axis weight matrices; "area" is
a box average over the exact source footprint; "nearest" picks the pixel
whose center is closest.
"""

from __future__ import annotations

import enum

import numpy as np

BICUBIC_A = -0.5
LANCZOS_TAPS = 3


class ResampleMethod(enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"
    AREA = "area"
    LANCZOS = "lanczos"

    @classmethod
    def parse(cls, name: "str | ResampleMethod") -> "ResampleMethod":
        if isinstance(name, ResampleMethod):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            options = ", ".join(m.value for m in cls)
            raise ValueError(
                f"unknown resample method {name!r} (expected one of: {options})"
            ) from None


def cubic_kernel(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel with parameter a (4-tap support)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x <= 1.0
    far = (x > 1.0) & (x < 2.0)
    xn = x[near]
    xf = x[far]
    out[near] = (a + 2.0) * xn**3 - (a + 3.0) * xn**2 + 1.0
    out[far] = a * (xf**3 - 5.0 * xf**2 + 8.0 * xf - 4.0)
    return out


def lanczos_kernel(x: np.ndarray, taps: int = LANCZOS_TAPS) -> np.ndarray:
    """Lanczos windowed sinc with `taps` lobes (2*taps support)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sinc(x) * np.sinc(x / taps)
    out[np.abs(x) >= taps] = 0.0
    return out


def linear_kernel(x: np.ndarray) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    return np.clip(1.0 - x, 0.0, None)


_SEPARABLE = {
    ResampleMethod.BILINEAR: (linear_kernel, 1),
    ResampleMethod.BICUBIC: (cubic_kernel, 2),
    ResampleMethod.LANCZOS: (lanczos_kernel, LANCZOS_TAPS),
}


def _axis_weights(n_in: int, n_out: int, method: ResampleMethod) -> np.ndarray:
    """Dense (n_out, n_in) row-stochastic resampling matrix for one axis."""
    kernel, radius = _SEPARABLE[method]
    scale = n_in / n_out
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    k0 = np.floor(centers).astype(int) - (radius - 1)
    taps = 2 * radius
    idx = k0[:, None] + np.arange(taps)[None, :]
    w = kernel(centers[:, None] - idx)
    idx = np.clip(idx, 0, n_in - 1)  # replicate padding
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(mat, (rows, idx.ravel()), w.ravel())
    mat /= mat.sum(axis=1, keepdims=True)
    return mat


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Box-average matrix: each output pixel averages its source footprint."""
    scale = n_in / n_out
    mat = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo = j * scale
        hi = (j + 1) * scale
        k_lo = int(np.floor(lo))
        k_hi = min(int(np.ceil(hi)), n_in)
        for k in range(k_lo, k_hi):
            mat[j, k] = max(0.0, min(hi, k + 1.0) - max(lo, float(k)))
    mat /= mat.sum(axis=1, keepdims=True)
    return mat


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    src = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(int)
    return np.clip(src, 0, n_in - 1)


def resize(
    image: np.ndarray,
    out_h: int,
    out_w: int,
    method: "str | ResampleMethod",
) -> np.ndarray:
    """Resample `image` (H x W or H x W x C) to (out_h, out_w).

    Output is float64 and clipped to [0, 1].
    """
    method = ResampleMethod.parse(method)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError(f"expected 2-d or 3-d image, got shape {img.shape}")
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]

    if method is ResampleMethod.NEAREST:
        out = img[_nearest_indices(h, out_h)][:, _nearest_indices(w, out_w)]
    else:
        if method is ResampleMethod.AREA:
            wy = _area_weights(h, out_h)
            wx = _area_weights(w, out_w)
        else:
            wy = _axis_weights(h, out_h, method)
            wx = _axis_weights(w, out_w, method)
        out = np.einsum("ik,khc->ihc", wy, img)
        out = np.einsum("jl,ilc->ijc", wx, out)

    out = np.clip(out, 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def resize_scale(
    image: np.ndarray, scale: float, method: "str | ResampleMethod"
) -> np.ndarray:
    """Resize by a scale factor; target dims are round(dim * scale)."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    return resize(image, int(round(h * scale)), int(round(w * scale)), method)


def upsample_chain(
    image: np.ndarray, target: int, method: "str | ResampleMethod"
) -> np.ndarray:
    """Upsample a low-resolution probe to target x target in one resize."""
    return resize(image, target, target, method)


BASELINE_METHODS = tuple(m.value for m in ResampleMethod)
