"""Residual filter network used for both the prefilter and the postfilter.

Layout: stride-2 stem conv mapping RGB to C channels, L inverted-residual
(MBConv) blocks at width C with expansion 4 where the last block keeps its
unsqueezed 4C channels, a head conv mapping 4C to 12, and a pixel shuffle
with r=2 that restores the input resolution. An end-to-end additive skip
makes the body learn modulations only: with an all-zero body the module is
exactly the identity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autograd import (
    Tensor,
    add,
    conv2d,
    crop2d,
    depthwise_conv2d,
    pixel_shuffle,
    reflect_pad2d,
    silu,
)

EXPANSION = 4
HEAD_CHANNELS = 12  # 3 RGB channels * r^2 for the r=2 shuffle
KERNEL = 3

CHECKPOINT_MAGIC = b"SNN1"


@dataclass
class MbConvParams:
    """One inverted-residual block: 1x1 expand, 3x3 depthwise, 1x1 project.

    The unsqueezed variant stops after the depthwise stage and emits the
    expanded 4C channels with no skip.
    """

    expand_w: Tensor
    expand_b: Tensor
    dw_w: Tensor
    dw_b: Tensor
    proj_w: Tensor | None = None
    proj_b: Tensor | None = None

    @property
    def unsqueezed(self) -> bool:
        return self.proj_w is None

    def parameters(self) -> list[Tensor]:
        out = [self.expand_w, self.expand_b, self.dw_w, self.dw_b]
        if self.proj_w is not None:
            out += [self.proj_w, self.proj_b]
        return out


@dataclass
class FilterNet:
    depth: int
    width: int
    stem_w: Tensor = None
    stem_b: Tensor = None
    blocks: list[MbConvParams] = field(default_factory=list)
    head_w: Tensor = None
    head_b: Tensor = None

    def parameters(self) -> list[Tensor]:
        """All trainable tensors in declaration order."""
        out = [self.stem_w, self.stem_b]
        for blk in self.blocks:
            out += blk.parameters()
        out += [self.head_w, self.head_b]
        return out


def _uniform(rng: np.random.Generator, shape, fan_in: int, scale: float = 1.0) -> Tensor:
    bound = scale / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def make_filter_net(depth: int, width: int, rng: np.random.Generator) -> FilterNet:
    """Build a net with fan-in-scaled uniform weights and zero biases.

    The head conv weights are additionally scaled by 0.1 so the module
    starts close to the identity through the residual connection.
    """
    if depth < 1 or width < 1:
        raise ValueError("depth and width must be >= 1")
    c = width
    net = FilterNet(depth=depth, width=width)
    net.stem_w = _uniform(rng, (c, 3, KERNEL, KERNEL), 3 * KERNEL * KERNEL)
    net.stem_b = _zeros(c)
    e = EXPANSION * c
    for i in range(depth):
        last = i == depth - 1
        blk = MbConvParams(
            expand_w=_uniform(rng, (e, c, 1, 1), c),
            expand_b=_zeros(e),
            dw_w=_uniform(rng, (e, 1, KERNEL, KERNEL), KERNEL * KERNEL),
            dw_b=_zeros(e),
        )
        if not last:
            blk.proj_w = _uniform(rng, (c, e, 1, 1), e)
            blk.proj_b = _zeros(c)
        net.blocks.append(blk)
    net.head_w = _uniform(rng, (HEAD_CHANNELS, e, KERNEL, KERNEL), e * KERNEL * KERNEL, scale=0.1)
    net.head_b = _zeros(HEAD_CHANNELS)
    return net


def zero_body(net: FilterNet) -> FilterNet:
    """Zero every parameter, making filter_forward the exact identity."""
    for p in net.parameters():
        p.data[...] = 0.0
    return net


def mbconv(x: Tensor, params: MbConvParams, unsqueezed: bool | None = None) -> Tensor:
    """Inverted-residual block; SiLU after the expand and depthwise stages."""
    if unsqueezed is None:
        unsqueezed = params.unsqueezed
    h = silu(conv2d(x, params.expand_w, params.expand_b, stride=1))
    h = silu(depthwise_conv2d(h, params.dw_w, params.dw_b))
    if unsqueezed:
        return h
    h = conv2d(h, params.proj_w, params.proj_b, stride=1)
    return add(h, x)


def filter_forward(net: FilterNet, x) -> Tensor:
    """out = x + body(x); output dims always equal input dims.

    Odd spatial dims are reflect-padded to even before the stem and cropped
    back after the shuffle.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    h_in, w_in = x.data.shape[2], x.data.shape[3]
    body_in = reflect_pad2d(x, (0, h_in % 2, 0, w_in % 2))
    h = conv2d(body_in, net.stem_w, net.stem_b, stride=2)
    for blk in net.blocks:
        h = mbconv(h, blk)
    h = conv2d(h, net.head_w, net.head_b, stride=1)
    h = pixel_shuffle(h, 2)
    h = crop2d(h, h_in, w_in)
    return add(x, h)


def count_params(net: FilterNet) -> int:
    """Exact count of all weights and biases."""
    return int(sum(p.data.size for p in net.parameters()))


def count_macs_per_pixel(net: FilterNet) -> int:
    """Multiply-accumulates per input pixel for one net.

    Each conv contributes Cout*Cin*k^2 per output position; the whole body
    runs at half resolution, so per-position costs are normalized by the
    stride-2 area factor of 1/4.
    """
    c = net.width
    e = EXPANSION * c
    macs = 3 * c * KERNEL * KERNEL / 4.0  # stem, at half resolution
    for blk in net.blocks:
        macs += (e * c * 1) / 4.0  # expand 1x1
        macs += (e * 1 * KERNEL * KERNEL) / 4.0  # depthwise
        if not blk.unsqueezed:
            macs += (c * e * 1) / 4.0  # project 1x1
    macs += (HEAD_CHANNELS * e * KERNEL * KERNEL) / 4.0  # head
    return int(round(macs))


# ---------------------------------------------------------------------------
# Checkpoints: magic "SNN1", u32 L, u32 C, then the parameter tensors in
# declaration order, each as u8 ndim + ndim u32 dims + little-endian float32
# data. A file may hold several nets of identical L/C back to back (the
# trainer stores the CR/RS pair in one file); the count falls out of the
# fixed 6L+2 tensors per net.
# ---------------------------------------------------------------------------


def tensors_per_net(depth: int) -> int:
    return 6 * depth + 2


def save_checkpoint(path, nets) -> None:
    nets = list(nets)
    depth, width = nets[0].depth, nets[0].width
    if any(n.depth != depth or n.width != width for n in nets):
        raise ValueError("all nets in one checkpoint must share L and C")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", depth, width))
        for net in nets:
            for p in net.parameters():
                dims = p.data.shape
                fh.write(struct.pack("<B", len(dims)))
                fh.write(struct.pack(f"<{len(dims)}I", *dims))
                fh.write(p.data.astype("<f4").tobytes())


def load_checkpoint(path) -> list[FilterNet]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic")
    depth, width = struct.unpack_from("<II", blob, 4)
    offset = 12
    rng = np.random.default_rng(0)
    nets = []
    while offset < len(blob):
        net = make_filter_net(depth, width, rng)
        for p in net.parameters():
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            if dims != p.data.shape:
                raise ValueError(
                    f"checkpoint tensor shape {dims} does not match net shape {p.data.shape}"
                )
            count = int(np.prod(dims))
            if offset + 4 * count > len(blob):
                raise ValueError("truncated checkpoint")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
            p.data = arr.astype(np.float64).reshape(dims)
        nets.append(net)
    return nets
