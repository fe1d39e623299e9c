"""Command-line front end: encode / decode / roundtrip / bench / bd.

Exit codes are the only success signal; machine-readable results go to
files (bitstreams, JSON reports, CSV curves), human text to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, decoder, encoder, metrics, pipeline, ppm
from .errors import BitstreamError, ContractViolation, EncodingError


def _err(msg):
    print(f"pyrcodec: {msg}", file=sys.stderr)
    return 2


def _encode_args(p):
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.001)
    p.add_argument("--latents", type=int, default=7, help="pyramid level count")
    p.add_argument("--arm", type=int, default=0,
                   help="number of finest levels coded by the serial model")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)


def _build_cfg(args):
    return encoder.EncodeConfig(
        lam=args.lam, iters=args.iters, levels=args.latents,
        arm_levels=args.arm, seed=args.seed,
    )


def cmd_encode(args):
    try:
        cfg = _build_cfg(args)
        image = ppm.read_image(args.input)
        t0 = time.perf_counter()
        stream, report = encoder.encode(image, cfg)
        enc_s = time.perf_counter() - t0
    except (ContractViolation, EncodingError, OSError) as exc:
        return _err(f"encode failed: {exc}")
    Path(args.output).write_bytes(stream)
    payload = report.to_dict()
    payload["enc_s"] = enc_s
    payload["input"] = str(args.input)
    Path(args.output + ".json").write_text(json.dumps(payload, indent=2))
    print(f"encoded {args.input}: {report.bpp:.4f} bpp, {report.psnr_db:.2f} dB")
    return 0


def cmd_decode(args):
    try:
        data = Path(args.input).read_bytes()
        image, report = decoder.decode(data)
        ppm.write_image(args.output, image)
    except (BitstreamError, ContractViolation, OSError) as exc:
        return _err(f"decode failed: {exc}")
    Path(args.output + ".json").write_text(json.dumps(report.to_dict(), indent=2))
    print(
        f"decoded {args.input}: {report.h}x{report.w}, "
        f"{report.times['total_s']:.3f}s"
    )
    return 0


def cmd_roundtrip(args):
    try:
        cfg = _build_cfg(args)
        image = ppm.read_image(args.input)
        t0 = time.perf_counter()
        stream, ereport = encoder.encode(image, cfg)
        enc_s = time.perf_counter() - t0
        decoded, dreport = decoder.decode(stream)
    except (BitstreamError, ContractViolation, EncodingError, OSError) as exc:
        return _err(f"roundtrip failed: {exc}")
    if not np.array_equal(decoded, ereport.reconstruction):
        return _err("decoder output differs from the encoder reconstruction")
    Path(args.output).write_bytes(stream)
    payload = {
        "bpp": ereport.bpp,
        "dec_s": dreport.times["total_s"],
        "psnr_db": ereport.psnr_db,
        "enc_s": enc_s,
        "encode": ereport.to_dict(),
        "decode": dreport.to_dict(),
    }
    Path(args.output + ".json").write_text(json.dumps(payload, indent=2))
    print(f"{ereport.bpp:.4f} {dreport.times['total_s']:.4f} {ereport.psnr_db:.3f}")
    return 0


def _bench_cell(job):
    """One (image, lambda, M) cell: encode, then median-of-3 timed decodes."""
    path, lam, m, iters, seed, out_dir = job
    image = ppm.read_image(path)
    cfg = encoder.EncodeConfig(lam=lam, arm_levels=m, iters=iters, seed=seed)
    t0 = time.perf_counter()
    stream, report = encoder.encode(image, cfg)
    enc_s = time.perf_counter() - t0
    times = []
    for _ in range(3):
        t1 = time.perf_counter()
        _, dreport = decoder.decode(stream)
        times.append(time.perf_counter() - t1)
    macs = pipeline.count_macs(cfg.levels, m, image.shape[0], image.shape[1])
    row = {
        "image": Path(path).name,
        "lambda": lam,
        "M": m,
        "bpp": report.bpp,
        "psnr_db": report.psnr_db,
        "enc_s": enc_s,
        "dec_total_s": statistics.median(times),
        "dec_params_s": dreport.times["params_s"],
        "dec_latents_s": dreport.times["latents_s"],
        "dec_synth_s": dreport.times["synth_s"],
        "macs_per_px": macs["total"],
    }
    cell = out_dir / f"cell_{Path(path).stem}_l{lam:g}_m{m}.json"
    cell.write_text(json.dumps(row, indent=2))
    return row


def cmd_bench(args):
    src = Path(args.dir)
    images = sorted(
        p for p in src.iterdir()
        if p.suffix.lower() in (".ppm", ".png") and p.is_file()
    ) if src.is_dir() else []
    if not images:
        return _err(f"no images found in {args.dir}")
    lambdas = [float(x) for x in args.lambdas.split(",") if x]
    arms = [int(x) for x in args.arm_list.split(",") if x]
    out_dir = Path(args.emit)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs, rows = [], []
    for img in images:
        for lam in lambdas:
            for m in arms:
                cell = out_dir / f"cell_{img.stem}_l{lam:g}_m{m}.json"
                if cell.exists():
                    rows.append(json.loads(cell.read_text()))
                else:
                    jobs.append((str(img), lam, m, args.iters, args.seed, out_dir))
    if jobs:
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows.extend(pool.map(_bench_cell, jobs))
        else:
            rows.extend(_bench_cell(j) for j in jobs)

    rows.sort(key=lambda r: (r["image"], -r["lambda"], r["M"]))
    (out_dir / "curves.csv").write_text(metrics.emit_curves(rows, "csv"))
    (out_dir / "curves.json").write_text(metrics.emit_curves(rows, "json"))
    for m in arms:
        sub = [r for r in rows if r["M"] == m]
        (out_dir / f"curve_m{m}.csv").write_text(metrics.emit_curves(sub, "csv"))
    summary = {}
    for lam in lambdas:
        sub = [r for r in rows if r["lambda"] == lam]
        summary[str(lam)] = {
            "bpp": sum(r["bpp"] for r in sub) / len(sub),
            "psnr_db": sum(r["psnr_db"] for r in sub) / len(sub),
            "dec_total_s": sum(r["dec_total_s"] for r in sub) / len(sub),
        }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"bench wrote {len(rows)} rows to {out_dir}")
    return 0


def cmd_bd(args):
    try:
        rows_a = metrics.parse_curve_file(Path(args.curve_a).read_text())
        rows_b = metrics.parse_curve_file(Path(args.curve_b).read_text())
        pts_a = metrics.curve_points(rows_a, args.mode)
        pts_b = metrics.curve_points(rows_b, args.mode)
        fn = metrics.bd_rate if args.mode == "rate" else metrics.bd_time
        value = fn(pts_a, pts_b)
    except (ContractViolation, OSError, json.JSONDecodeError, KeyError,
            TypeError, ValueError) as exc:
        return _err(f"bd failed: {exc}")
    print(f"{value:.2f}")
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="pyrcodec",
        description="Overfitted latent-pyramid image codec",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("encode", help="train on one image and write a bitstream")
    _encode_args(p)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream to an image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("roundtrip", help="encode, decode, verify closure; "
                                         "prints 'bpp dec_s psnr'")
    _encode_args(p)
    p.set_defaults(fn=cmd_roundtrip)

    p = sub.add_parser("bench", help="sweep a directory of images")
    p.add_argument("--dir", required=True)
    p.add_argument("--lambdas", default="0.02,0.004,0.001,0.0004,0.0001")
    p.add_argument("--arm-list", default="0", dest="arm_list")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("bd", help="BD-Rate / BD-Time between two curve files")
    p.add_argument("--mode", choices=("rate", "time"), default="rate")
    p.add_argument("curve_a")
    p.add_argument("curve_b")
    p.set_defaults(fn=cmd_bd)

    args = ap.parse_args(argv)
    if args.cmd in ("encode", "roundtrip") and args.arm > args.latents:
        ap.error("--arm cannot exceed --latents")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
