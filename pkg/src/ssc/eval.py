"""Measurement suite: compressibility deltas, desaturation sweeps, RD
curves and Bjontegaard-delta rate with Akima interpolation.

BD-rate interpolates log10(bpp) as a function of PSNR on each curve with
Akima's piecewise cubic (original endpoint rule: two virtual points by
quadratic slope extrapolation) and integrates the difference in closed form
over the common PSNR range. Negative results mean the test curve saves
bitrate.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import Akima1DInterpolator

from .codecs import CodecProfile, ProxyCodec
from .datagen import Dataset
from .imagecore import psnr
from .lintrans import TransformSpec, apply_forward
from .pipeline import (
    SandwichConfig,
    header_overhead_bits,
    parse_header,
    sandwich_decode,
    sandwich_encode,
    serialize_header,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    psnr_db: float

    def __post_init__(self):
        if not (np.isfinite(self.bpp) and self.bpp > 0):
            raise ValueError(f"bpp must be finite and positive, got {self.bpp}")


@dataclass(frozen=True)
class RdCurve:
    """Rate-distortion points with strictly increasing bpp."""

    points: tuple

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.bpp))
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise ValueError("an RD curve needs at least 2 points")
        bpps = [p.bpp for p in pts]
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise ValueError("bpp values must be strictly increasing")
        psnrs = [p.psnr_db for p in pts]
        if any(q2 < q1 for q1, q2 in zip(psnrs, psnrs[1:])):
            log.warning("RD curve has PSNR decreasing in bpp: %s", psnrs)

    @property
    def bpp(self):
        return np.array([p.bpp for p in self.points])

    @property
    def psnr_db(self):
        return np.array([p.psnr_db for p in self.points])


class BdRateError(ValueError):
    """BD-rate inputs are unusable (too few points or no PSNR overlap)."""


def _log_rate_interpolant(curve: RdCurve) -> Akima1DInterpolator:
    q = curve.psnr_db
    if np.any(np.diff(q) <= 0):
        raise BdRateError("PSNR must be strictly increasing along the curve")
    return Akima1DInterpolator(q, np.log10(curve.bpp))


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Average bitrate difference of test vs anchor, in percent."""
    if len(anchor.points) < 4 or len(test.points) < 4:
        raise BdRateError("BD-rate with Akima interpolation needs >= 4 points per curve")
    lo = max(anchor.psnr_db.min(), test.psnr_db.min())
    hi = min(anchor.psnr_db.max(), test.psnr_db.max())
    if hi <= lo:
        raise BdRateError(f"no PSNR overlap: [{lo:.3f}, {hi:.3f}]")
    f_anchor = _log_rate_interpolant(anchor)
    f_test = _log_rate_interpolant(test)
    int_anchor = f_anchor.integrate(lo, hi)
    int_test = f_test.integrate(lo, hi)
    mean_diff = (int_test - int_anchor) / (hi - lo)
    return float(100.0 * (10.0**mean_diff - 1.0))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def delta_bpp(data: Dataset, spec: TransformSpec, profiles: list[CodecProfile],
              codec: ProxyCodec | None = None) -> list[dict]:
    """Mean bpp(codec(T(x))) - bpp(codec(x)) per profile; no decoding involved."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    codec = codec or ProxyCodec()
    rows = []
    for profile in profiles:
        deltas = []
        for img in data:
            base = codec.code(img, profile, mode="eval").bpp
            t_img, _ = apply_forward(spec, img)
            aug = codec.code(t_img, profile, mode="eval").bpp
            deltas.append(aug - base)
        rows.append(
            {
                "profile": f"proxy-q{profile.quality}",
                "quality": profile.quality,
                "mean_delta_bpp": float(np.mean(deltas)),
                "n": len(deltas),
            }
        )
    return rows


def rd_point_for_config(data: Dataset, sandwich: SandwichConfig, profile: CodecProfile,
                        codec: ProxyCodec, cr_net=None, rs_net=None) -> RdPoint:
    """Dataset-mean RD point for one sandwich configuration (header charged)."""
    bpps, psnrs = [], []
    for img in data:
        enc, header = sandwich_encode(img, sandwich, cr_net)
        res = codec.code(enc, profile, mode="eval")
        wire = parse_header(serialize_header(header))
        rec = sandwich_decode(res.reconstruction, wire, rs_net)
        bits = res.bits + header_overhead_bits(wire)
        bpps.append(bits / (img.shape[0] * img.shape[1]))
        psnrs.append(psnr(img, rec))
    return RdPoint(bpp=float(np.mean(bpps)), psnr_db=float(np.mean(psnrs)))


def desat_sweep(data: Dataset, alphas, profiles: list[CodecProfile],
                codec: ProxyCodec | None = None) -> dict[float, RdCurve]:
    """Transform-only RD curves per saturation level; alpha=1 is the baseline."""
    codec = codec or ProxyCodec()
    curves = {}
    for alpha in alphas:
        if alpha == 1.0:
            spec = TransformSpec(kind="identity")
        else:
            spec = TransformSpec(kind="desaturate", alpha=alpha)
        sandwich = SandwichConfig(transform=spec)
        points = [rd_point_for_config(data, sandwich, p, codec) for p in profiles]
        curves[alpha] = RdCurve(points=tuple(points))
    return curves


def ablation_run(data: Dataset, combos, profiles: list[CodecProfile],
                 checkpoint_dir, alpha: float = 0.8,
                 codec: ProxyCodec | None = None) -> list[dict]:
    """Table-shaped ablation: one row per module-toggle combination.

    Each combo is a dict with keys alpha/cr/rs (bools) and L/C (ints).
    Combos with nets enabled read their trained pair from
    `<checkpoint_dir>/<combo_name>/<q>_<L>x<C>_<epoch>.snn` (highest epoch
    wins); a missing checkpoint marks the row absent and the run continues.
    """
    from .tensor_nn.net import count_macs_per_pixel, load_checkpoint, make_filter_net

    codec = codec or ProxyCodec()
    baseline = RdCurve(
        points=tuple(
            rd_point_for_config(data, SandwichConfig(), p, codec) for p in profiles
        )
    )
    rows = []
    for combo in combos:
        use_cr, use_rs = bool(combo.get("cr")), bool(combo.get("rs"))
        use_alpha = bool(combo.get("alpha"))
        depth, width = int(combo.get("L", 0) or 0), int(combo.get("C", 0) or 0)
        spec = (
            TransformSpec(kind="desaturate", alpha=alpha)
            if use_alpha
            else TransformSpec(kind="identity")
        )
        sandwich = SandwichConfig(transform=spec, use_cr=use_cr, use_rs=use_rs)
        name = combo_name(use_alpha, use_cr, use_rs, depth, width)

        mac_probe = make_filter_net(depth, width, np.random.default_rng(0)) if depth else None
        per_net = count_macs_per_pixel(mac_probe) if mac_probe else 0
        delta_mac = per_net * (int(use_cr) + int(use_rs))

        row = {
            "name": name,
            "alpha": int(use_alpha),
            "cr": int(use_cr),
            "rs": int(use_rs),
            "L": depth,
            "C": width,
            "delta_mac_px": delta_mac,
            "bd_rate_pct": None,
        }
        if sandwich.flags == 0:
            row["bd_rate_pct"] = 0.0  # the baseline against itself
            rows.append(row)
            continue
        try:
            points = []
            for profile in profiles:
                cr = rs = None
                if use_cr or use_rs:
                    ckpt = _latest_checkpoint(
                        Path(checkpoint_dir) / name, profile.quality, depth, width
                    )
                    nets = load_checkpoint(ckpt)
                    expected = int(use_cr) + int(use_rs)
                    if len(nets) != expected:
                        raise FileNotFoundError(
                            f"{ckpt} holds {len(nets)} nets, expected {expected}"
                        )
                    cr = nets[0] if use_cr else None
                    rs = nets[-1] if use_rs else None
                points.append(
                    rd_point_for_config(data, sandwich, profile, codec, cr, rs)
                )
            row["bd_rate_pct"] = bd_rate(baseline, RdCurve(points=tuple(points)))
        except FileNotFoundError as exc:
            log.warning("ablation row %s marked absent: %s", name, exc)
        rows.append(row)
    return rows


def combo_name(use_alpha: bool, use_cr: bool, use_rs: bool, depth: int, width: int) -> str:
    return f"alpha{int(use_alpha)}_cr{int(use_cr)}_rs{int(use_rs)}_L{depth}C{width}"


def _latest_checkpoint(combo_dir: Path, quality: int, depth: int, width: int) -> Path:
    pattern = f"{quality}_{depth}x{width}_*.snn"
    candidates = sorted(
        combo_dir.glob(pattern),
        key=lambda p: int(p.stem.rsplit("_", 1)[1]),
    )
    if not candidates:
        raise FileNotFoundError(f"no checkpoint {combo_dir}/{pattern}")
    return candidates[-1]


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return "" if v is None else str(v)


def write_csv(table: list[dict], path) -> None:
    """RFC-4180 CSV with 17-significant-digit floats; empty tables refuse."""
    if not table:
        raise ValueError("refusing to write an empty table")
    fields = list(table[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for row in table:
            w.writerow([_fmt(row.get(k)) for k in fields])


def write_rd_plot_data(curves: dict[str, RdCurve], path) -> None:
    """Flat (series, bpp, psnr) CSV consumable by any plotting tool."""
    if not curves:
        raise ValueError("refusing to write empty plot data")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "bpp", "psnr"])
        for name, curve in curves.items():
            for p in curve.points:
                w.writerow([name, _fmt(p.bpp), _fmt(p.psnr_db)])


def read_rd_csv(path) -> dict[str, RdCurve]:
    """Read curves from a (series, bpp, psnr) or bare (bpp, psnr) CSV."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"empty CSV {path}")

    def numeric(row):
        try:
            float(row[-2]), float(row[-1])
            return True
        except (ValueError, IndexError):
            return False

    if not numeric(rows[0]):
        rows = rows[1:]
    groups: dict[str, list[RdPoint]] = {}
    for row in rows:
        name = row[0] if len(row) >= 3 else "curve"
        groups.setdefault(name, []).append(
            RdPoint(bpp=float(row[-2]), psnr_db=float(row[-1]))
        )
    return {name: RdCurve(points=tuple(pts)) for name, pts in groups.items()}
