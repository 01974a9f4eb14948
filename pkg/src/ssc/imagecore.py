"""Image representation, color helpers, crops and distortion metrics.

An image is a float64 ndarray of shape (H, W, 3) with values in [0, 1].
8-bit I/O converts via v/255 on read and round(255*v) with clamping on
write. MSE/PSNR are computed on the 0-255 scale so the usual learned-codec
lambda values apply unchanged.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# BT.601 luma weights, the conventional RGB -> gray mapping.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

PEAK = 255.0


class DimensionError(ValueError):
    """Image dimensions violate an operation's preconditions."""


def require_image(img: np.ndarray) -> np.ndarray:
    """Validate an (H, W, 3) float image in [0, 1]; returns it unchanged."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise DimensionError(f"image must be at least 2x2, got {img.shape[:2]}")
    if not np.issubdtype(img.dtype, np.floating):
        raise TypeError(f"expected float image, got dtype {img.dtype}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite samples")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image samples outside [0, 1]")
    return img


def luma(img: np.ndarray) -> np.ndarray:
    """Return the (H, W) BT.601 luma plane."""
    return img @ LUMA_WEIGHTS


def to_gray3(img: np.ndarray) -> np.ndarray:
    """3-channel grayscale: every channel set to the BT.601 luma. Idempotent."""
    require_image(img)
    g = luma(img)
    return np.repeat(g[:, :, None], 3, axis=2)


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    """Crop a size x size region centered at (floor(H/2), floor(W/2))."""
    require_image(img)
    h, w = img.shape[:2]
    if size > min(h, w):
        raise DimensionError(f"crop size {size} exceeds image dimensions {h}x{w}")
    oy = (h - size) // 2
    ox = (w - size) // 2
    return img[oy : oy + size, ox : ox + size]


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error over all 3*H*W samples, on the 0-255 scale."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = PEAK * (a.astype(np.float64) - b.astype(np.float64))
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB; identical images give the +inf sentinel rather than a crash."""
    e = mse(a, b)
    if e == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / e)


@dataclass(frozen=True)
class Metric:
    """MSE (0-255 scale) and PSNR of one image pair."""

    mse: float
    psnr_db: float


def metric(a: np.ndarray, b: np.ndarray) -> Metric:
    e = mse(a, b)
    p = math.inf if e == 0.0 else 10.0 * math.log10(PEAK * PEAK / e)
    return Metric(mse=e, psnr_db=p)


# ---------------------------------------------------------------------------
# 8-bit I/O: PNG via Pillow, binary PPM (P6) for the subprocess codec protocol.
# ---------------------------------------------------------------------------


def to_u8(img: np.ndarray) -> np.ndarray:
    """Convert to uint8 via round(255*v), clamped."""
    return np.clip(np.round(np.asarray(img) * PEAK), 0, 255).astype(np.uint8)


def from_u8(raw: np.ndarray) -> np.ndarray:
    """Convert uint8 pixels to the canonical [0, 1] float image."""
    return raw.astype(np.float64) / PEAK


def write_ppm_bytes(img: np.ndarray) -> bytes:
    """Encode as binary PPM (P6, maxval 255)."""
    require_image(img)
    h, w = img.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + to_u8(img).tobytes()


def _read_ppm_token(buf: io.BytesIO) -> bytes:
    """Next whitespace-delimited token, skipping '#' comments."""
    tok = b""
    while True:
        c = buf.read(1)
        if c == b"":
            raise ValueError("truncated PPM header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = buf.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_ppm_bytes(data: bytes) -> np.ndarray:
    """Decode a binary PPM (P6, maxval 255) into a [0, 1] float image."""
    buf = io.BytesIO(data)
    if buf.read(2) != b"P6":
        raise ValueError("not a P6 PPM")
    w = int(_read_ppm_token(buf))
    h = int(_read_ppm_token(buf))
    maxval = int(_read_ppm_token(buf))
    if maxval != 255:
        raise ValueError(f"unsupported PPM maxval {maxval}")
    raw = buf.read(h * w * 3)
    if len(raw) != h * w * 3:
        raise ValueError("truncated PPM pixel data")
    return from_u8(np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3))


def read_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit PNG or PPM file into a [0, 1] float image."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm_bytes(path.read_bytes())
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_u8(arr)


def write_image(path: str | Path, img: np.ndarray) -> None:
    """Write as 8-bit PNG or PPM, chosen by file extension."""
    require_image(img)
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        path.write_bytes(write_ppm_bytes(img))
    else:
        Image.fromarray(to_u8(img)).save(path, format="PNG")
