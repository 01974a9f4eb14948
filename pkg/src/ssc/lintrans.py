"""The candidate invertible linear transforms around the codec.

Three families: desaturation (exactly invertible by switching the
interpolation coefficient to its multiplicative inverse), PCA side-channel
downscaling, and PCA side-channel k-means quantization. The PCA variants
return to RGB inside the forward pass, so their decoder-side inverse is the
identity; the Moore-Penrose pseudoinverse is exposed for the general
non-invertible case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imagecore import require_image, to_gray3

KINDS = ("identity", "desaturate", "pca_downscale", "pca_quantize")

_DEGENERATE_EPS = 1e-12
_PINV_RCOND = 1e-10


@dataclass(frozen=True)
class TransformSpec:
    """Parameter bundle describing one linear transform."""

    kind: str = "identity"
    alpha: float = 1.0
    d_sc1: float = 1.0
    d_sc2: float = 1.0
    q_sc1: int = 8
    q_sc2: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.d_sc1 < 1.0 or self.d_sc2 < 1.0:
            raise ValueError("downscale divisors must be >= 1")
        if not (1 <= self.q_sc1 <= 8 and 1 <= self.q_sc2 <= 8):
            raise ValueError("quantizer bit depths must be in 1..8")


@dataclass(frozen=True)
class PcaBasis:
    """Per-image orthonormal color basis; rows ordered PC, SC1, SC2."""

    mean: np.ndarray  # (3,)
    basis: np.ndarray  # (3, 3), rows are components

    def __post_init__(self):
        if self.mean.shape != (3,) or self.basis.shape != (3, 3):
            raise ValueError("PcaBasis needs a 3-vector mean and 3x3 basis")
        if np.max(np.abs(self.basis @ self.basis.T - np.eye(3))) > 1e-6:
            raise ValueError("basis is not orthonormal")

    def __eq__(self, other):
        return (
            isinstance(other, PcaBasis)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.basis, other.basis)
        )


@dataclass(frozen=True)
class SideInfo:
    """Everything the decoder needs to invert one image's transform."""

    kind: str
    alpha: float | None = None
    basis: PcaBasis | None = None
    divisors: tuple[float, float] | None = None
    codebooks: tuple[np.ndarray, np.ndarray] | None = None

    def __eq__(self, other):
        if not isinstance(other, SideInfo):
            return NotImplemented
        if (self.kind, self.alpha, self.basis, self.divisors) != (
            other.kind,
            other.alpha,
            other.basis,
            other.divisors,
        ):
            return False
        if (self.codebooks is None) != (other.codebooks is None):
            return False
        if self.codebooks is not None:
            return all(
                np.array_equal(a, b) for a, b in zip(self.codebooks, other.codebooks)
            )
        return True


IDENTITY_SIDE_INFO = SideInfo(kind="identity")


# ---------------------------------------------------------------------------
# Desaturation
# ---------------------------------------------------------------------------


def desat_matrix(alpha: float) -> np.ndarray:
    """3x3 color matrix of x -> alpha*x + (1-alpha)*Gray(x)."""
    from .imagecore import LUMA_WEIGHTS

    return alpha * np.eye(3) + (1.0 - alpha) * np.tile(LUMA_WEIGHTS, (3, 1))


def resat_matrix(alpha: float) -> np.ndarray:
    """Inverse color matrix; the interpolation with coefficient 1/alpha."""
    return desat_matrix(1.0 / alpha)


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")


def desaturate(img: np.ndarray, alpha: float) -> np.ndarray:
    """Interpolate toward the 3-channel grayscale: alpha*x + (1-alpha)*Gray(x)."""
    _check_alpha(alpha)
    require_image(img)
    out = alpha * img + (1.0 - alpha) * to_gray3(img)
    return np.clip(out, 0.0, 1.0)


def resaturate(img: np.ndarray, alpha: float) -> np.ndarray:
    """Exact inverse of desaturate (before clamping): coefficient 1/alpha."""
    _check_alpha(alpha)
    require_image(img)
    inv = 1.0 / alpha
    out = inv * img + (1.0 - inv) * to_gray3(img)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# PCA colorspace
# ---------------------------------------------------------------------------


def pca_fit(img: np.ndarray) -> PcaBasis:
    """Fit the per-image color basis from the 3x3 pixel covariance.

    Rows are ordered by decreasing variance (PC first); each row's sign is
    fixed so its largest-magnitude component is positive. Near-zero
    covariance falls back to the identity basis.
    """
    require_image(img)
    pixels = img.reshape(-1, 3)
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    cov = centered.T @ centered / pixels.shape[0]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    if evals[-1] < _DEGENERATE_EPS:
        return PcaBasis(mean=mean, basis=np.eye(3))
    order = np.argsort(evals)[::-1]
    basis = evecs[:, order].T.copy()
    for i in range(3):
        j = int(np.argmax(np.abs(basis[i])))
        if basis[i, j] < 0:
            basis[i] = -basis[i]
    return PcaBasis(mean=mean, basis=basis)


def pca_forward(basis: PcaBasis, img: np.ndarray) -> np.ndarray:
    """Project to the PCA colorspace; returns (3, H, W) unbounded planes."""
    require_image(img)
    y = (img - basis.mean) @ basis.basis.T
    return np.moveaxis(y, 2, 0)


def pca_inverse(basis: PcaBasis, planes: np.ndarray) -> np.ndarray:
    """Map (3, H, W) PCA planes back to a clamped RGB image."""
    y = np.moveaxis(np.asarray(planes, dtype=np.float64), 0, 2)
    x = y @ basis.basis + basis.mean
    return np.clip(x, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _cubic_axis_weights(n_out: int, n_in: int, divisor: float):
    """Tap indices (n_out, 4) and weights (n_out, 4) for one axis."""
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * divisor - 0.5  # pixel-center alignment
    base = np.floor(src).astype(np.int64)
    t = src - base
    a = -0.5
    t2, t3 = t * t, t * t * t
    weights = np.stack(
        [
            a * t3 - 2 * a * t2 + a * t,
            (a + 2) * t3 - (a + 3) * t2 + 1.0,
            -(a + 2) * t3 + (2 * a + 3) * t2 - a * t,
            -a * t3 + a * t2,
        ],
        axis=-1,
    )
    idx = np.clip(base[:, None] + np.arange(-1, 3)[None, :], 0, n_in - 1)
    return idx, weights


def downscale_bicubic(plane: np.ndarray, divisor: float) -> np.ndarray:
    """Separable Catmull-Rom resample to ceil(H/d) x ceil(W/d), edges clamped."""
    if divisor < 1.0:
        raise ValueError(f"divisor must be >= 1, got {divisor}")
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    if divisor == 1.0:
        return plane.copy()
    oh = math.ceil(h / divisor)
    ow = math.ceil(w / divisor)
    if oh < 1 or ow < 1:
        raise ValueError("downscaled dimension would be < 1")
    idx_r, w_r = _cubic_axis_weights(oh, h, divisor)
    tmp = np.einsum("rkw,rk->rw", plane[idx_r, :], w_r)
    idx_c, w_c = _cubic_axis_weights(ow, w, divisor)
    return np.einsum("rck,ck->rc", tmp[:, idx_c], w_c)


def upscale_nearest(plane: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbor upscale under pixel-center mapping."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    if target_h < h or target_w < w:
        raise ValueError("target dimensions must be >= source dimensions")
    rows = np.minimum((np.arange(target_h) + 0.5) * h / target_h, h - 1).astype(int)
    cols = np.minimum((np.arange(target_w) + 0.5) * w / target_w, w - 1).astype(int)
    return plane[np.ix_(rows, cols)]


# ---------------------------------------------------------------------------
# Scalar k-means quantizer
# ---------------------------------------------------------------------------


def kmeans_quantize(plane: np.ndarray, q_bits: int, max_iter: int = 25):
    """Lloyd's algorithm with k = 2**q_bits centers on one plane.

    Deterministic: centers start at k evenly spaced quantiles of the sorted
    samples; an emptied cluster is reseeded to the sample farthest from its
    assigned center. Returns (quantized plane, codebook).
    """
    if not (1 <= q_bits <= 8):
        raise ValueError(f"q_bits must be in 1..8, got {q_bits}")
    plane = np.asarray(plane, dtype=np.float64)
    samples = plane.ravel()
    k = 2**q_bits
    values = np.unique(samples)
    if len(values) <= k:
        # every distinct value is its own center; surplus centers duplicate
        centers = np.resize(values, k)
        return plane.copy(), np.sort(centers)

    ordered = np.sort(samples)
    quantiles = (np.arange(k) + 0.5) / k
    centers = ordered[np.minimum((quantiles * len(ordered)).astype(int), len(ordered) - 1)]
    centers = centers.astype(np.float64)

    assign = np.zeros(len(samples), dtype=np.int64)
    for _ in range(max_iter):
        dist = np.abs(samples[:, None] - centers[None, :])
        new_assign = np.argmin(dist, axis=1)
        for c in range(k):
            mask = new_assign == c
            if mask.any():
                centers[c] = samples[mask].mean()
            else:
                far = int(np.argmax(np.abs(samples - centers[new_assign])))
                centers[c] = samples[far]
                new_assign[far] = c
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    quantized = centers[np.argmin(np.abs(samples[:, None] - centers[None, :]), axis=1)]
    order = np.argsort(centers)
    return quantized.reshape(plane.shape), centers[order]


def pinv3(m: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a 3x3 matrix via SVD."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(m)
    cutoff = _PINV_RCOND * (s[0] if s.size else 0.0)
    s_inv = np.where(s > cutoff, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return vt.T @ np.diag(s_inv) @ u.T


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def apply_forward(spec: TransformSpec, img: np.ndarray) -> tuple[np.ndarray, SideInfo]:
    """Forward transform T per the spec; returns the result and its side info."""
    require_image(img)
    if spec.kind == "identity":
        return img, IDENTITY_SIDE_INFO
    if spec.kind == "desaturate":
        return desaturate(img, spec.alpha), SideInfo(kind="desaturate", alpha=spec.alpha)
    basis = pca_fit(img)
    planes = pca_forward(basis, img)
    h, w = img.shape[:2]
    if spec.kind == "pca_downscale":
        sc1 = upscale_nearest(downscale_bicubic(planes[1], spec.d_sc1), h, w)
        sc2 = upscale_nearest(downscale_bicubic(planes[2], spec.d_sc2), h, w)
        out = pca_inverse(basis, np.stack([planes[0], sc1, sc2]))
        info = SideInfo(kind="pca_downscale", basis=basis, divisors=(spec.d_sc1, spec.d_sc2))
        return out, info
    if spec.kind == "pca_quantize":
        sc1, cb1 = kmeans_quantize(planes[1], spec.q_sc1)
        sc2, cb2 = kmeans_quantize(planes[2], spec.q_sc2)
        out = pca_inverse(basis, np.stack([planes[0], sc1, sc2]))
        info = SideInfo(kind="pca_quantize", basis=basis, codebooks=(cb1, cb2))
        return out, info
    raise ValueError(f"unknown transform kind {spec.kind!r}")


def apply_inverse(info: SideInfo, img: np.ndarray) -> np.ndarray:
    """Decoder-side inverse T^-1.

    Desaturation inverts exactly; the PCA kinds already returned to RGB in
    the forward pass and their information loss is not invertible, so their
    inverse is the identity.
    """
    require_image(img)
    if info.kind == "identity":
        return img
    if info.kind == "desaturate":
        if info.alpha is None:
            raise ValueError("desaturate side info is missing alpha")
        return resaturate(img, info.alpha)
    if info.kind in ("pca_downscale", "pca_quantize"):
        return img
    raise ValueError(f"malformed side info: unknown kind {info.kind!r}")
