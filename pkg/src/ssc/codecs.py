"""The frozen black-box codec slot.

Two backends: a built-in differentiable proxy (8x8 block DCT, uniform
quantization, entropy-based rate) for training and desk-scale evaluation,
and a subprocess adapter for real external codecs (evaluation only).

The proxy works on the 0-255 coefficient scale. Eval mode rounds hard and
charges the empirical zeroth-order entropy of the quantized symbols per
(channel, frequency band). Train mode keeps the distortion path on
straight-through rounding and relaxes the rate path with additive uniform
noise under a per-band Laplace model fit to the batch.
"""

from __future__ import annotations

import hashlib
import math
import subprocess
from dataclasses import dataclass

import numpy as np

from . import tensor_nn as tn
from .imagecore import require_image, write_ppm_bytes, read_ppm_bytes

# lambda convention of MSE-optimized learned codecs, quality points 1..8
DEFAULT_LAMBDAS = (0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483, 0.0932, 0.1800)

_BAND_SCALE_FLOOR = 1e-3
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class CodecProfile:
    """One quality point: proxy quantization step and RD weight."""

    quality: int
    quant_step: float
    lam: float

    def __post_init__(self):
        if self.quant_step <= 0:
            raise ValueError("quant_step must be positive")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


@dataclass(frozen=True)
class CodecResult:
    reconstruction: np.ndarray
    bits: float
    bpp: float


def quant_step_for_quality(quality: int) -> float:
    return 2.0 ** (6 - quality) * 0.25


def profile_table(qualities, lambdas=DEFAULT_LAMBDAS) -> list[CodecProfile]:
    """Profiles for the requested quality indices (1..8)."""
    out = []
    for q in qualities:
        if not (1 <= q <= 8):
            raise ValueError(f"quality must be in 1..8, got {q}")
        out.append(CodecProfile(quality=q, quant_step=quant_step_for_quality(q), lam=lambdas[q - 1]))
    return out


def dct8_matrix() -> np.ndarray:
    """Orthonormal 8x8 DCT-II basis."""
    a = np.zeros((8, 8))
    for u in range(8):
        cu = math.sqrt(1.0 / 8.0) if u == 0 else math.sqrt(2.0 / 8.0)
        for j in range(8):
            a[u, j] = cu * math.cos((2 * j + 1) * u * math.pi / 16.0)
    return a


def _pad_to_block(x: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Reflect-pad (C, H, W) planes so H and W are multiples of 8."""
    c, h, w = x.shape
    ph = (-h) % 8
    pw = (-w) % 8
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return x, h, w


def _band_entropy_bits(bands: np.ndarray) -> float:
    """Total empirical zeroth-order entropy of (c, n_blocks, 64) symbols,
    summed per (channel, band)."""
    c, nb, _ = bands.shape
    bits = 0.0
    for ch in range(c):
        for band in range(64):
            _, counts = np.unique(bands[ch, :, band], return_counts=True)
            p = counts / nb
            bits += -nb * float(np.sum(p * np.log2(p)))
    return bits


class ProxyCodec:
    """Differentiable stand-in for the frozen codec; its state never changes."""

    def __init__(self):
        self.dct = dct8_matrix()
        self.qmatrix = np.ones((8, 8))  # flat quantization matrix

    def state_checksum(self) -> str:
        """Digest of everything the codec's behavior depends on."""
        h = hashlib.sha256()
        h.update(self.dct.tobytes())
        h.update(self.qmatrix.tobytes())
        return h.hexdigest()

    # -- eval path (numpy) --------------------------------------------------

    def code(self, img: np.ndarray, profile: CodecProfile, mode: str = "eval",
             noise_seed: int = 0) -> CodecResult:
        """Code one image; eval mode is the hard-rounding reference path."""
        require_image(img)
        if mode == "train":
            return self._code_train(img, profile, noise_seed)
        if mode != "eval":
            raise ValueError(f"unknown mode {mode!r}")
        h, w = img.shape[:2]
        planes, _, _ = _pad_to_block(np.moveaxis(img, 2, 0))
        blocks = self._dct_blocks(planes * 255.0)  # (c, hb, 8, wb, 8)
        step = (profile.quant_step * self.qmatrix)[None, None, :, None, :]
        symbols = np.round(blocks / step)
        bands = symbols.transpose(0, 1, 3, 2, 4).reshape(symbols.shape[0], -1, 64)
        bits = _band_entropy_bits(bands.astype(np.int64))
        rec = self._idct_blocks(symbols * step) / 255.0
        rec = np.clip(rec[:, :h, :w], 0.0, 1.0)
        return CodecResult(
            reconstruction=np.moveaxis(rec, 0, 2), bits=bits, bpp=bits / (h * w)
        )

    def _code_train(self, img: np.ndarray, profile: CodecProfile, noise_seed: int) -> CodecResult:
        x = tn.Tensor(np.moveaxis(img, 2, 0)[None])
        rec, bits = self.train_graph(x, profile, noise_seed)
        h, w = img.shape[:2]
        return CodecResult(
            reconstruction=np.moveaxis(rec.data[0], 0, 2),
            bits=float(bits.data),
            bpp=float(bits.data) / (h * w),
        )

    def _dct_planes(self, planes: np.ndarray) -> np.ndarray:
        c, h, w = planes.shape
        blocks = planes.reshape(c, h // 8, 8, w // 8, 8)
        out = np.einsum("uj,chjwk,vk->chuwv", self.dct, blocks, self.dct, optimize=True)
        return out.reshape(c, h, w)

    def _idct_planes(self, coeffs: np.ndarray) -> np.ndarray:
        c, h, w = coeffs.shape
        blocks = coeffs.reshape(c, h // 8, 8, w // 8, 8)
        a = self.dct.T
        out = np.einsum("uj,chjwk,vk->chuwv", a, blocks, a, optimize=True)
        return out.reshape(c, h, w)

    # -- train path (autodiff graph) -----------------------------------------

    def noise_for(self, shape: tuple[int, ...], noise_seed: int) -> np.ndarray:
        rng = np.random.default_rng(noise_seed)
        return rng.uniform(-0.5, 0.5, size=shape)

    def train_graph(self, x: tn.Tensor, profile: CodecProfile, noise_seed: int
                    ) -> tuple[tn.Tensor, tn.Tensor]:
        """Differentiable coding of a (B, 3, H, W) batch in [0, 1].

        Returns (reconstruction, total rate bits). Gradients flow to x via
        straight-through rounding on the distortion path and the
        noise-relaxed Laplace rate on the rate path.
        """
        bsz, c, h, w = x.data.shape
        ph, pw = (-h) % 8, (-w) % 8
        xp = tn.reflect_pad2d(x, (0, ph, 0, pw))
        step = profile.quant_step  # flat qmatrix: scalar step
        coeffs = tn.block8_transform(tn.mul(xp, 255.0), self.dct)
        s = tn.mul(coeffs, 1.0 / step)

        # rate: additive uniform noise + per-(channel, band) Laplace model
        sb = _to_bands(s, bsz, c, h + ph, w + pw)
        noise = self.noise_for(sb.data.shape, noise_seed)
        loc = tn.mean(sb, axis=(0, 2, 4), keepdims=True)
        scale = tn.clamp_min(
            tn.mean(tn.abs_(tn.sub(sb, loc)), axis=(0, 2, 4), keepdims=True),
            _BAND_SCALE_FLOOR,
        )
        z = tn.sub(tn.add(sb, noise), loc)
        logp = tn.laplace_interval_logp(z, scale)
        bits = tn.mul(tn.sum_(logp), -1.0 / _LN2)

        # distortion: straight-through rounding
        s_hat = tn.round_ste(s)
        rec = tn.mul(tn.block8_transform(tn.mul(s_hat, step), self.dct.T), 1.0 / 255.0)
        rec = tn.clamp(tn.crop2d(rec, h, w), 0.0, 1.0)
        return rec, bits


def _to_bands(s: tn.Tensor, bsz: int, c: int, h: int, w: int) -> tn.Tensor:
    """View symbols as (B, C, hb, 8, wb, 8) so band axes broadcast."""
    return tn.reshape(s, (bsz, c, h // 8, 8, w // 8, 8))


# ---------------------------------------------------------------------------
# External codec subprocess adapter
# ---------------------------------------------------------------------------


class ExternalCodecError(RuntimeError):
    """Child codec failed or violated the pipe protocol; carries diagnostics."""


def external_code(img: np.ndarray, command: list[str] | str, quality: int,
                  timeout: float = 60.0) -> CodecResult:
    """Run one image through an external codec child process.

    Protocol: the child is invoked as `<cmd> --quality <q>`, receives one
    binary PPM (P6) on stdin and must write an 8-byte little-endian unsigned
    coded-size-in-bytes followed by one P6 PPM of identical dimensions on
    stdout. Nonzero exit status is a failure.
    """
    require_image(img)
    argv = command.split() if isinstance(command, str) else list(command)
    argv = argv + ["--quality", str(quality)]
    payload = write_ppm_bytes(img)
    try:
        proc = subprocess.run(
            argv, input=payload, capture_output=True, timeout=timeout
        )
    except subprocess.TimeoutExpired as exc:
        raise ExternalCodecError(f"codec timed out after {timeout}s: {argv}") from exc
    except OSError as exc:
        raise ExternalCodecError(f"could not launch codec {argv}: {exc}") from exc
    stderr = proc.stderr.decode("utf-8", "replace").strip()
    if proc.returncode != 0:
        raise ExternalCodecError(
            f"codec exited with status {proc.returncode}: {stderr or '(no stderr)'}"
        )
    out = proc.stdout
    if len(out) < 8:
        raise ExternalCodecError(f"protocol violation: short response ({len(out)} bytes)")
    coded_bytes = int.from_bytes(out[:8], "little")
    try:
        rec = read_ppm_bytes(out[8:])
    except ValueError as exc:
        raise ExternalCodecError(f"protocol violation: {exc}; stderr: {stderr}") from exc
    if rec.shape != img.shape:
        raise ExternalCodecError(
            f"protocol violation: decoded dims {rec.shape[:2]} != input {img.shape[:2]}"
        )
    h, w = img.shape[:2]
    bits = 8.0 * coded_bytes
    return CodecResult(reconstruction=rec, bits=bits, bpp=bits / (h * w))
