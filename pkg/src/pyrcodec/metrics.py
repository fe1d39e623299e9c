"""Quality and efficiency accounting: PSNR, BD deltas, curve files.

BD values use the classic cubic-fit construction: fit log10(rate) -- or
log10(decode time) -- as a cubic polynomial of PSNR for each curve,
average the fitted difference over the shared PSNR interval by a
1000-sample trapezoid, and report (10**avg - 1) * 100 percent.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings

import numpy as np

from .errors import ContractViolation

CSV_COLUMNS = [
    "image", "lambda", "M", "bpp", "psnr_db", "enc_s",
    "dec_total_s", "dec_params_s", "dec_latents_s", "dec_synth_s",
    "macs_per_px",
]


def psnr(a, b):
    """10*log10(255^2 / MSE) over all RGB samples of two 8-bit images."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractViolation("psnr needs equal image dimensions")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _prep_curve(points, what):
    pts = [(float(x), float(q)) for x, q in points]
    finite = [(x, q) for x, q in pts if math.isfinite(q)]
    if len(finite) < len(pts):
        warnings.warn(f"dropping non-finite quality points from a {what} curve")
    if len(finite) < 4:
        raise ContractViolation(f"a {what} curve needs at least 4 finite points")
    finite.sort()
    xs = [x for x, _ in finite]
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise ContractViolation(f"{what} curve has duplicate x values after sorting")
    if any(x <= 0 for x in xs):
        raise ContractViolation(f"{what} values must be positive for the log fit")
    return np.array(xs), np.array([q for _, q in finite])


def _bd(points_a, points_b, what):
    xa, qa = _prep_curve(points_a, what)
    xb, qb = _prep_curve(points_b, what)
    lo = max(qa.min(), qb.min())
    hi = min(qa.max(), qb.max())
    if hi <= lo:
        raise ContractViolation("curves share no quality overlap")
    fa = np.polyfit(qa, np.log10(xa), 3)
    fb = np.polyfit(qb, np.log10(xb), 3)
    qs = np.linspace(lo, hi, 1000)
    diff = np.polyval(fb, qs) - np.polyval(fa, qs)
    avg = np.trapezoid(diff, qs) / (hi - lo)
    return float((10.0 ** avg - 1.0) * 100.0)


def bd_rate(curve_a, curve_b):
    """Average rate change of B relative to A, percent, over shared PSNR."""
    return _bd(curve_a, curve_b, "rate")


def bd_time(curve_a, curve_b):
    """Average decode-time change of B relative to A, percent."""
    return _bd(curve_a, curve_b, "time")


def emit_curves(rows, fmt="csv"):
    """Serialize benchmark rows (dicts keyed by CSV_COLUMNS) to CSV or JSON."""
    rows = list(rows)
    if not rows:
        raise ContractViolation("no benchmark rows to emit")
    if fmt == "json":
        return json.dumps([{k: r.get(k) for k in CSV_COLUMNS} for r in rows], indent=2)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def parse_curve_file(text):
    """Rows back out of emit_curves output (CSV or JSON)."""
    text = text.strip()
    if not text:
        raise ContractViolation("empty curve file")
    if text.startswith("[") or text.startswith("{"):
        rows = json.loads(text)
    else:
        rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            if k == "image" or v is None or v == "":
                conv[k] = v
            else:
                try:
                    conv[k] = float(v)
                except (TypeError, ValueError):
                    conv[k] = v
        out.append(conv)
    return out


def curve_points(rows, mode="rate"):
    """(x, psnr) pairs for BD computations from benchmark rows.

    Rows sharing a lambda are averaged first (curves aggregate per
    rate point); x is bpp in rate mode, total decode seconds in time mode.
    """
    xkey = "bpp" if mode == "rate" else "dec_total_s"
    by_lam = {}
    for r in rows:
        lam = r.get("lambda")
        by_lam.setdefault(lam, []).append(r)
    pts = []
    for lam, grp in sorted(by_lam.items(), key=lambda kv: (kv[0] is None, kv[0])):
        xs = [float(g[xkey]) for g in grp]
        qs = [float(g["psnr_db"]) for g in grp]
        pts.append((sum(xs) / len(xs), sum(qs) / len(qs)))
    return pts
