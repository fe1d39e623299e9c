"""Parameter-free decoding: everything the decoder runs arrives in the
stream. Parse header, decode network weights, entropy-decode latents under
the mixed model, upsample, synthesize, export. No gradient tape anywhere;
every stage is timed for decode-composition reports.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import bitstream, netcode
from .entropy_model import DecodeSink, coding_plan, run_coding
from .errors import BitstreamError
from .latents import level_extents, total_symbols
from .models import GROUP_ORDER, build_models, check_weights_finite, \
    group_counts, load_group_weights
from .pipeline import export_image, upsample_np
from .rans import RansDecoder


@dataclass
class DecodeReport:
    times: dict = field(default_factory=dict)
    vector_passes: int = 0
    serial_evals: int = 0
    symbols: int = 0
    h: int = 0
    w: int = 0
    levels: int = 0
    arm_levels: int = 0
    bpp: float = 0.0

    def to_dict(self):
        return {
            "times": self.times,
            "vector_passes": self.vector_passes,
            "serial_evals": self.serial_evals,
            "symbols": self.symbols,
            "h": self.h, "w": self.w,
            "levels": self.levels, "arm_levels": self.arm_levels,
            "bpp": self.bpp,
        }


def _decode_models(hdr, params_bytes):
    em, ups, syn = build_models(hdr, rng=None)
    counts = group_counts(em, ups, syn)
    steps = dict(zip(GROUP_ORDER, hdr.step_exponents))
    weights = netcode.decode_network_params(
        params_bytes, {n: counts[n] for n in GROUP_ORDER}, steps
    )
    check_weights_finite(weights)
    load_group_weights(em, ups, syn, weights)
    return em, ups, syn


def decode_latents(hdr, latents_bytes, em, trace=None):
    """Entropy-decode the pyramid; returns (levels, coding stats)."""
    extents = level_extents(hdr.h, hdr.w, hdr.levels)
    dec = RansDecoder(latents_bytes)
    sink = DecodeSink(dec)
    levels, stats = run_coding(
        em, extents, hdr.level_ranges, sink, y_levels=None, trace=trace
    )
    return levels, stats


def decode(data, trace=None):
    """Decode a stream into ((H,W,3) uint8 image, DecodeReport).

    Raises a BitstreamError subclass on any malformed input; never crashes.
    """
    with ad.no_grad():
        t0 = time.perf_counter()
        hdr, params_bytes, latents_bytes = bitstream.read_bitstream(data)
        em, ups, syn = _decode_models(hdr, params_bytes)
        t_params = time.perf_counter() - t0

        t1 = time.perf_counter()
        levels, stats = decode_latents(hdr, latents_bytes, em, trace)
        t_latents = time.perf_counter() - t1

        t2 = time.perf_counter()
        extents = level_extents(hdr.h, hdr.w, hdr.levels)
        try:
            z = upsample_np(levels, extents, ups)
            x = syn.infer(z)
        except (ValueError, FloatingPointError) as exc:
            raise BitstreamError(f"synthesis failed on decoded data: {exc}") from exc
        t_synth = time.perf_counter() - t2

        t3 = time.perf_counter()
        image = export_image(x)
        t_export = time.perf_counter() - t3

    plan = coding_plan(extents, em.cfg)
    expected = total_symbols(extents)
    if stats["symbols"] != expected or plan.symbols != expected:
        raise BitstreamError("decoded symbol count disagrees with the geometry")
    report = DecodeReport(
        times={
            "params_s": t_params,
            "latents_s": t_latents,
            "synth_s": t_synth,
            "export_s": t_export,
            "total_s": time.perf_counter() - t0,
        },
        vector_passes=stats["vector_passes"],
        serial_evals=stats["serial_evals"],
        symbols=stats["symbols"],
        h=hdr.h, w=hdr.w,
        levels=hdr.levels, arm_levels=hdr.arm_levels,
        bpp=8.0 * len(data) / (hdr.h * hdr.w),
    )
    return image, report
