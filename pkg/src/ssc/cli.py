"""Command-line entry point wiring all modules together.

Exit codes: 0 success, 1 runtime failure, 2 usage error. The SSC_SEED
environment variable is the seed fallback when --seed is not given. Every
run that writes artifacts also writes a manifest recording config hash,
seeds and versions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .codecs import ExternalCodecError, ProxyCodec, profile_table
from .config import ConfigError, GlobalConfig, config_dump, load_config
from .datagen import Dataset, DatasetError, gen_screen_image, load_dataset_dir, synth_dataset, ScSpec
from .eval import (
    BdRateError,
    RdCurve,
    ablation_run,
    bd_rate,
    delta_bpp,
    desat_sweep,
    rd_point_for_config,
    read_rd_csv,
    write_csv,
    write_rd_plot_data,
)
from .imagecore import read_image, write_image
from .lintrans import TransformSpec, apply_forward, apply_inverse
from .pipeline import (
    SandwichConfig,
    SandwichHeader,
    header_overhead_bits,
    parse_header,
    read_ssc,
    sandwich_decode,
    sandwich_encode,
    serialize_header,
    write_ssc,
)
from .train import TrainConfig, checkpoint_name, train
from .tensor_nn.net import load_checkpoint

log = logging.getLogger(__name__)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _default_seed() -> int:
    env = os.environ.get("SSC_SEED")
    return int(env) if env else 0


def _transform_spec(cfg: GlobalConfig, kind: str | None = None, alpha: float | None = None
                    ) -> TransformSpec:
    kind = kind or cfg.transform_kind
    if kind == "identity":
        return TransformSpec(kind="identity")
    return TransformSpec(
        kind=kind,
        alpha=cfg.alpha if alpha is None else alpha,
        d_sc1=cfg.d_sc1,
        d_sc2=cfg.d_sc2,
        q_sc1=cfg.q_sc1,
        q_sc2=cfg.q_sc2,
    )


def _dataset(cfg: GlobalConfig, split: str = "val") -> Dataset:
    if cfg.dataset_dir:
        return load_dataset_dir(cfg.dataset_dir, cfg.crop, split=split)
    count = cfg.gen_count if split == "train" else cfg.gen_val_count
    seed = cfg.seed if split == "train" else cfg.seed + 100000
    return synth_dataset(count, cfg.crop, seed, palette_size=cfg.gen_palette, split=split)


def _write_manifest(out_dir: Path, cfg: GlobalConfig, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": __version__,
        "config_sha256": hashlib.sha256(config_dump(cfg).encode()).hexdigest(),
        "seed": cfg.seed,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(cfg).items()},
    }
    manifest.update(extra or {})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_transform(args, cfg: GlobalConfig) -> int:
    spec = _transform_spec(cfg, args.kind, args.alpha)
    img = read_image(args.input)
    side_path = Path(args.side or str(args.output) + ".side")
    if args.inverse:
        header = parse_header(side_path.read_bytes())
        out = apply_inverse(header.side, img)
    else:
        out, side = apply_forward(spec, img)
        header = SandwichHeader(flags=SandwichConfig(transform=spec).flags, side=side)
        side_path.write_bytes(serialize_header(header))
    write_image(args.output, out)
    return 0


def cmd_gen(args, cfg: GlobalConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = ScSpec(seed=args.seed + i, size=args.size, palette_size=cfg.gen_palette)
        write_image(out_dir / f"sc_{args.seed + i:06d}.png", gen_screen_image(spec))
    print(f"wrote {args.count} images to {out_dir}")
    return 0


def _load_pair(path, use_cr: bool, use_rs: bool):
    nets = load_checkpoint(path)
    expected = int(use_cr) + int(use_rs)
    if len(nets) != expected:
        raise ValueError(f"checkpoint {path} holds {len(nets)} nets, expected {expected}")
    cr = nets[0] if use_cr else None
    rs = nets[-1] if use_rs else None
    return cr, rs


def cmd_compress(args, cfg: GlobalConfig) -> int:
    codec = ProxyCodec()
    if args.decode:
        header, codec_out, bits, _, _ = read_ssc(args.input)
        rs = None
        if header.flags & 0x04:
            _, rs = _load_pair(args.checkpoint, False, True) if args.checkpoint else (None, None)
            if rs is None:
                raise ValueError("--checkpoint with an RS net is required to decode this file")
        rec = sandwich_decode(np.clip(codec_out, 0.0, 1.0), header, rs)
        write_image(args.output, rec)
        return 0
    img = read_image(args.input)
    use_nets = bool(args.checkpoint)
    spec = _transform_spec(cfg, args.kind, args.alpha)
    sandwich = SandwichConfig(transform=spec, use_cr=use_nets, use_rs=use_nets)
    cr = rs = None
    if use_nets:
        cr, rs = _load_pair(args.checkpoint, True, True)
    enc, header = sandwich_encode(img, sandwich, cr)
    profile = profile_table([args.quality], cfg.lambdas)[0]
    res = codec.code(enc, profile, mode="eval")
    write_ssc(args.output, header, res.reconstruction, res.bits, "proxy", args.quality)
    total_bits = res.bits + header_overhead_bits(header)
    print(f"bpp={total_bits / (img.shape[0] * img.shape[1]):.4f}")
    return 0


def cmd_train(args, cfg: GlobalConfig) -> int:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = _dataset(cfg, split="train")
    val = _dataset(cfg, split="val")
    tcfg = TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        crop=cfg.crop,
        transform=_transform_spec(cfg),
        use_cr=not args.no_cr,
        use_rs=not args.no_rs,
        depth=cfg.depth,
        width=cfg.width,
        qualities=tuple(cfg.qualities),
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        seed=cfg.seed,
        out_dir=str(out_dir),
    )
    results = train(tcfg, data, val_data=val)
    for quality, (_, _, tlog) in results.items():
        tlog.write_csv(out_dir / f"trainlog_q{quality}.csv")
    _write_manifest(out_dir, cfg, {"command": "train"})
    print(f"trained qualities {list(results)} -> {out_dir}")
    return 0


def cmd_eval(args, cfg: GlobalConfig) -> int:
    codec = ProxyCodec()
    data = _dataset(cfg, split="val")
    profiles = profile_table(cfg.qualities, cfg.lambdas)
    if args.flags & 0x06 and not args.checkpoint_dir:
        raise ConfigError("--checkpoint-dir is required when CR/RS flags are set")
    if args.flags == 0:
        sandwich = SandwichConfig()
        cr = rs = None
    else:
        use_t = bool(args.flags & 0x01)
        use_cr = bool(args.flags & 0x02)
        use_rs = bool(args.flags & 0x04)
        spec = _transform_spec(cfg) if use_t else TransformSpec(kind="identity")
        sandwich = SandwichConfig(transform=spec, use_cr=use_cr, use_rs=use_rs)
        cr = rs = None
    points = []
    rows = []
    for profile in profiles:
        if args.flags & 0x06 and args.checkpoint_dir:
            ckpt = Path(args.checkpoint_dir) / checkpoint_name(
                profile.quality, cfg.depth, cfg.width, cfg.epochs - 1
            )
            cr, rs = _load_pair(ckpt, sandwich.use_cr, sandwich.use_rs)
        point = rd_point_for_config(data, sandwich, profile, codec, cr, rs)
        points.append(point)
        rows.append({"quality": profile.quality, "bpp": point.bpp, "psnr": point.psnr_db})
        print(f"q{profile.quality}: bpp={point.bpp:.6f} psnr={point.psnr_db:.4f}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out_dir / "rd_points.csv")
    write_rd_plot_data({"eval": RdCurve(points=tuple(points))}, out_dir / "rd_series.csv")
    _write_manifest(out_dir, cfg, {"command": "eval", "flags": args.flags})
    return 0


def cmd_bdrate(args, cfg: GlobalConfig) -> int:
    anchors = read_rd_csv(args.anchor)
    tests = read_rd_csv(args.test)
    if len(anchors) != 1 or len(tests) != 1:
        raise ValueError("each CSV must contain exactly one curve")
    value = bd_rate(next(iter(anchors.values())), next(iter(tests.values())))
    print(round(value, 6))
    return 0


def cmd_compressibility(args, cfg: GlobalConfig) -> int:
    data = _dataset(cfg, split="val")
    profiles = profile_table(cfg.qualities, cfg.lambdas)
    spec = _transform_spec(cfg, args.kind, args.alpha)
    rows = delta_bpp(data, spec, profiles)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out_dir / "delta_bpp.csv")
    for row in rows:
        print(f"q{row['quality']}: mean_delta_bpp={row['mean_delta_bpp']:+.6f} (n={row['n']})")
    _write_manifest(out_dir, cfg, {"command": "compressibility"})
    return 0


def cmd_ablate(args, cfg: GlobalConfig) -> int:
    data = _dataset(cfg, split="val")
    profiles = profile_table(cfg.qualities, cfg.lambdas)
    combos = [
        {"alpha": False, "cr": False, "rs": False, "L": 0, "C": 0},
        {"alpha": True, "cr": False, "rs": False, "L": 0, "C": 0},
        {"alpha": True, "cr": True, "rs": True, "L": cfg.depth, "C": cfg.width},
        {"alpha": False, "cr": True, "rs": True, "L": cfg.depth, "C": cfg.width},
    ]
    rows = ablation_run(data, combos, profiles, args.checkpoint_dir or cfg.out_dir,
                        alpha=cfg.alpha)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out_dir / "ablation.csv")
    for row in rows:
        bd = row["bd_rate_pct"]
        print(f"{row['name']}: bd_rate={'absent' if bd is None else f'{bd:+.3f}%'}")
    _write_manifest(out_dir, cfg, {"command": "ablate"})
    return 0


def cmd_sweep(args, cfg: GlobalConfig) -> int:
    data = _dataset(cfg, split="val")
    profiles = profile_table(cfg.qualities, cfg.lambdas)
    alphas = [float(a) for a in args.alphas.split(",")]
    curves = desat_sweep(data, alphas, profiles)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rd_plot_data({f"alpha={a}": c for a, c in curves.items()},
                       out_dir / "desat_sweep.csv")
    for a, curve in curves.items():
        print(f"alpha={a}: " + " ".join(
            f"({p.bpp:.4f},{p.psnr_db:.2f})" for p in curve.points))
    _write_manifest(out_dir, cfg, {"command": "sweep"})
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssc",
        description="Sandwich coding for screen content: transforms, filters, evaluation.",
    )
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="rng seed (fallback: SSC_SEED)")
    parser.add_argument("--out-dir", default=None, help="artifact output directory")
    parser.add_argument("--jobs", type=int, default=None, help="worker cap for parallel sections")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="apply or invert a linear transform on an image file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--kind", choices=["identity", "desaturate", "pca_downscale", "pca_quantize"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--inverse", action="store_true", help="consume side info and invert")
    p.add_argument("--side", help="side-info file (default: <output>.side)")
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("gen", help="generate a synthetic screen-content corpus")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", default="corpus")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("compress", help="run the sandwich + proxy codec into an .ssc container")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--quality", type=int, default=3)
    p.add_argument("--kind", choices=["identity", "desaturate", "pca_downscale", "pca_quantize"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--checkpoint", help="CR/RS pair checkpoint (.snn)")
    p.add_argument("--decode", action="store_true", help="decode an .ssc container instead")
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("train", help="train CR/RS per quality point against the proxy codec")
    p.add_argument("--no-cr", action="store_true")
    p.add_argument("--no-rs", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="RD points of a sandwich configuration on the dataset")
    p.add_argument("--flags", type=int, default=0,
                   help="bit0 transform, bit1 CR, bit2 RS; 0 = bare codec")
    p.add_argument("--checkpoint-dir", help="directory with trained checkpoints")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bdrate", help="BD-rate between two RD-curve CSV files")
    p.add_argument("anchor")
    p.add_argument("test")
    p.set_defaults(fn=cmd_bdrate)

    p = sub.add_parser("compressibility", help="mean delta-bpp of a transform vs baseline")
    p.add_argument("--kind", choices=["identity", "desaturate", "pca_downscale", "pca_quantize"])
    p.add_argument("--alpha", type=float)
    p.set_defaults(fn=cmd_compressibility)

    p = sub.add_parser("ablate", help="module-toggle ablation table from trained checkpoints")
    p.add_argument("--checkpoint-dir")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep", help="transform-only RD curves over saturation levels")
    p.add_argument("--alphas", default="1.0,0.9,0.8,0.5")
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {
        "seed": args.seed if args.seed is not None else (_default_seed() or None),
        "out_dir": args.out_dir,
        "jobs": args.jobs,
    }
    try:
        cfg = load_config(args.config, overrides)
        spec_args = {k: v for k, v in vars(args).items()}
        # per-command option validation that maps to usage errors
        if spec_args.get("alpha") is not None and not (0.0 < spec_args["alpha"] <= 1.0):
            raise ConfigError(f"alpha must be in (0, 1], got {spec_args['alpha']}")
        if spec_args.get("quality") is not None and not (1 <= spec_args["quality"] <= 8):
            raise ConfigError(f"quality must be in 1..8, got {spec_args['quality']}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        return args.fn(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, OSError, RuntimeError, DatasetError, BdRateError,
            ExternalCodecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
