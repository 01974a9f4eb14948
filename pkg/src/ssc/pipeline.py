"""The sandwich around the codec: T -> CR -> codec -> T^-1 -> RS.

Every added module can be disabled through the header flag byte; with all
flags off the pipeline is bit-identical to running the bare codec and no
header is charged, which is what keeps existing bitstreams valid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor_nn as tn
from .codecs import CodecProfile, ProxyCodec
from .imagecore import mse, require_image
from .lintrans import (
    IDENTITY_SIDE_INFO,
    PcaBasis,
    SideInfo,
    TransformSpec,
    apply_forward,
    apply_inverse,
    resat_matrix,
)
from .tensor_nn.net import FilterNet, filter_forward

MAGIC = b"SSC1"
VERSION = 1

FLAG_TRANSFORM = 0x01
FLAG_CR = 0x02
FLAG_RS = 0x04

_KIND_CODES = {"identity": 0, "desaturate": 1, "pca_downscale": 2, "pca_quantize": 3}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

ORDER_T_THEN_CR = "T_then_CR"
ORDER_CR_THEN_T = "CR_then_T"


class HeaderError(ValueError):
    """Malformed sandwich header bytes."""


@dataclass(frozen=True)
class SandwichConfig:
    transform: TransformSpec = field(default_factory=TransformSpec)
    use_cr: bool = False
    use_rs: bool = False
    order: str = ORDER_T_THEN_CR

    def __post_init__(self):
        if self.order not in (ORDER_T_THEN_CR, ORDER_CR_THEN_T):
            raise ValueError(f"unknown module order {self.order!r}")

    @property
    def flags(self) -> int:
        f = 0
        if self.transform.kind != "identity":
            f |= FLAG_TRANSFORM
        if self.use_cr:
            f |= FLAG_CR
        if self.use_rs:
            f |= FLAG_RS
        return f


@dataclass(frozen=True)
class SandwichHeader:
    """Per-image signal: flags plus whatever T^-1 needs."""

    flags: int
    side: SideInfo
    version: int = VERSION

    def __eq__(self, other):
        if not isinstance(other, SandwichHeader):
            return NotImplemented
        return (
            self.flags == other.flags
            and self.version == other.version
            and self.side == other.side
        )


def header_overhead_bits(header: SandwichHeader) -> float:
    """Side-info bits charged to the rate; zero when every module is off."""
    if header.flags == 0:
        return 0.0
    return 8.0 * len(serialize_header(header))


# ---------------------------------------------------------------------------
# wire format
# ---------------------------------------------------------------------------


def serialize_header(h: SandwichHeader) -> bytes:
    out = bytearray(MAGIC)
    out.append(h.version)
    out.append(h.flags)
    out.append(_KIND_CODES[h.side.kind])
    kind = h.side.kind
    if kind == "desaturate":
        out += struct.pack("<H", int(h.side.alpha * 32768))
    elif kind in ("pca_downscale", "pca_quantize"):
        basis = h.side.basis
        out += struct.pack("<12f", *basis.mean.tolist(), *basis.basis.ravel().tolist())
        if kind == "pca_downscale":
            out += struct.pack("<2f", *h.side.divisors)
        else:
            for cb in h.side.codebooks:
                out += struct.pack("<B", len(cb))
                out += struct.pack(f"<{len(cb)}f", *cb.tolist())
    return bytes(out)


def _take(buf: bytes, offset: int, n: int) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise HeaderError("truncated header")
    return buf[offset : offset + n], offset + n


def parse_header(data: bytes) -> SandwichHeader:
    raw, off = _take(data, 0, 4)
    if raw != MAGIC:
        raise HeaderError(f"bad magic {raw!r}")
    raw, off = _take(data, off, 1)
    version = raw[0]
    if version != VERSION:
        raise HeaderError(f"unsupported header version {version}")
    raw, off = _take(data, off, 1)
    flags = raw[0]
    raw, off = _take(data, off, 1)
    if raw[0] not in _KIND_NAMES:
        raise HeaderError(f"unknown transform kind code {raw[0]}")
    kind = _KIND_NAMES[raw[0]]

    if kind == "identity":
        side = IDENTITY_SIDE_INFO
    elif kind == "desaturate":
        raw, off = _take(data, off, 2)
        side = SideInfo(kind="desaturate", alpha=struct.unpack("<H", raw)[0] / 32768.0)
    else:
        raw, off = _take(data, off, 48)
        vals = np.array(struct.unpack("<12f", raw), dtype=np.float64)
        basis = PcaBasis(mean=vals[:3], basis=vals[3:].reshape(3, 3))
        if kind == "pca_downscale":
            raw, off = _take(data, off, 8)
            side = SideInfo(kind=kind, basis=basis, divisors=struct.unpack("<2f", raw))
        else:
            books = []
            for _ in range(2):
                raw, off = _take(data, off, 1)
                k = raw[0]
                raw, off = _take(data, off, 4 * k)
                books.append(np.array(struct.unpack(f"<{k}f", raw), dtype=np.float64))
            side = SideInfo(kind=kind, basis=basis, codebooks=tuple(books))
    if off != len(data):
        raise HeaderError(f"{len(data) - off} trailing bytes after header")
    return SandwichHeader(flags=flags, side=side, version=version)


# ---------------------------------------------------------------------------
# encode / decode
# ---------------------------------------------------------------------------


def _net_apply(net: FilterNet, img: np.ndarray) -> np.ndarray:
    x = tn.Tensor(np.moveaxis(img, 2, 0)[None])
    out = filter_forward(net, x).data[0]
    return np.clip(np.moveaxis(out, 0, 2), 0.0, 1.0)


def sandwich_encode(img: np.ndarray, cfg: SandwichConfig, cr_net: FilterNet | None
                    ) -> tuple[np.ndarray, SandwichHeader]:
    """Produce the image handed to the black-box codec, plus the header."""
    require_image(img)
    if cfg.use_cr != (cr_net is not None):
        raise ValueError("cr_net must be present iff use_cr is set")
    if cfg.flags == 0:
        return img, SandwichHeader(flags=0, side=IDENTITY_SIDE_INFO)

    side = IDENTITY_SIDE_INFO
    out = img
    if cfg.order == ORDER_T_THEN_CR:
        out, side = apply_forward(cfg.transform, out)
        if cfg.use_cr:
            out = _net_apply(cr_net, out)
    else:
        if cfg.use_cr:
            out = _net_apply(cr_net, out)
        out, side = apply_forward(cfg.transform, out)
    return out, SandwichHeader(flags=cfg.flags, side=side)


def sandwich_decode(img: np.ndarray, header: SandwichHeader, rs_net: FilterNet | None
                    ) -> np.ndarray:
    """Invert the transform, then run the reconstruction-stage filter."""
    require_image(img)
    if bool(header.flags & FLAG_RS) != (rs_net is not None):
        raise ValueError("rs_net must be present iff the RS flag is set")
    if header.flags == 0:
        return img
    out = img
    if header.flags & FLAG_TRANSFORM:
        out = apply_inverse(header.side, out)
    if header.flags & FLAG_RS:
        out = _net_apply(rs_net, out)
    return out


# ---------------------------------------------------------------------------
# end-to-end training pass
# ---------------------------------------------------------------------------


def _transform_forward_batch(batch: np.ndarray, spec: TransformSpec) -> np.ndarray:
    if spec.kind == "identity":
        return batch
    out = np.empty_like(batch)
    for i in range(batch.shape[0]):
        img = np.moveaxis(batch[i], 0, 2)
        t_img, _ = apply_forward(spec, img)
        out[i] = np.moveaxis(t_img, 2, 0)
    return out


def _inverse_graph(x: tn.Tensor, spec: TransformSpec) -> tn.Tensor:
    """Differentiable T^-1 (desaturation resaturates; PCA kinds pass through)."""
    if spec.kind == "desaturate" and spec.alpha != 1.0:
        return tn.clamp(tn.color_mix(x, resat_matrix(spec.alpha)), 0.0, 1.0)
    return x


def e2e_train_pass(batch: np.ndarray, cfg: SandwichConfig, cr_net: FilterNet | None,
                   rs_net: FilterNet | None, profile: CodecProfile, noise_seed: int,
                   codec: ProxyCodec):
    """One differentiable pass of the whole sandwich over a (B, 3, H, W) batch.

    Returns (reconstruction array, rate bits, loss Tensor). The loss is
    bpp + lambda * MSE(0-255 scale); calling backward() on it reaches every
    CR/RS parameter while the codec stays a constant.
    """
    if not isinstance(codec, ProxyCodec):
        raise ValueError("training requires the differentiable proxy codec")
    if cfg.transform.kind in ("pca_downscale", "pca_quantize") and cfg.order == ORDER_CR_THEN_T:
        raise ValueError("PCA transforms after CR are not differentiable; use T_then_CR")
    bsz, _, h, w = batch.shape

    if cfg.order == ORDER_T_THEN_CR:
        t_batch = _transform_forward_batch(batch, cfg.transform)
        x = tn.Tensor(t_batch)
        if cfg.use_cr:
            x = tn.clamp(filter_forward(cr_net, x), 0.0, 1.0)
    else:
        x = tn.Tensor(batch)
        if cfg.use_cr:
            x = tn.clamp(filter_forward(cr_net, x), 0.0, 1.0)
        if cfg.transform.kind == "desaturate":
            # desaturation is linear, so it can stay inside the graph
            from .lintrans import desat_matrix

            x = tn.clamp(tn.color_mix(x, desat_matrix(cfg.transform.alpha)), 0.0, 1.0)

    rec, rate_bits = codec.train_graph(x, profile, noise_seed)
    y = _inverse_graph(rec, cfg.transform)
    if cfg.use_rs:
        y = tn.clamp(filter_forward(rs_net, y), 0.0, 1.0)

    bpp = tn.mul(rate_bits, 1.0 / (bsz * h * w))
    diff = tn.mul(tn.sub(y, tn.Tensor(batch)), 255.0)
    distortion = tn.mean(tn.mul(diff, diff))
    loss = tn.add(bpp, tn.mul(distortion, profile.lam))
    return y.data, float(rate_bits.data), loss


# ---------------------------------------------------------------------------
# .ssc evaluation container: header || codec payload descriptor
# ---------------------------------------------------------------------------

_SSC_CODEC_KINDS = {"proxy": 0, "external": 1}
_SSC_CODEC_NAMES = {v: k for k, v in _SSC_CODEC_KINDS.items()}


def write_ssc(path, header: SandwichHeader, codec_output: np.ndarray, bits: float,
              codec_kind: str, quality: int) -> None:
    """Store the header plus a descriptor of the codec payload.

    The proxy codec produces no real bitstream, so the descriptor records
    the measured bit count and the decoded codec output (float32 planes),
    which is everything the decoder side of the sandwich needs.
    """
    hdr = serialize_header(header)
    h, w = codec_output.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<H", len(hdr)))
        fh.write(hdr)
        fh.write(struct.pack("<BBHdII", _SSC_CODEC_KINDS[codec_kind], quality, 0, bits, h, w))
        fh.write(codec_output.astype("<f4").tobytes())


def read_ssc(path) -> tuple[SandwichHeader, np.ndarray, float, str, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    (hdr_len,) = struct.unpack_from("<H", blob, 0)
    header = parse_header(blob[2 : 2 + hdr_len])
    off = 2 + hdr_len
    kind_code, quality, _, bits, h, w = struct.unpack_from("<BBHdII", blob, off)
    off += struct.calcsize("<BBHdII")
    n = h * w * 3
    pixels = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
    img = pixels.astype(np.float64).reshape(h, w, 3)
    return header, img, bits, _SSC_CODEC_NAMES[kind_code], quality
