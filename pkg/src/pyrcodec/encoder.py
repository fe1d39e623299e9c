"""Encoding as training: overfit latents plus networks to one image, then
quantize everything and emit the bitstream.

Phase A relaxes quantization with uniform noise, phase B switches to
straight-through rounding. Network weights are then quantized with a
per-group step chosen by exhaustive search over the candidate set, and the
rounded latents get one final coding pass under the quantized networks, so
decoding reproduces the encoder's reconstruction bit-exactly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import bitstream, netcode
from .entropy_model import rate_bits, run_coding, EncodeSink
from .errors import ContractViolation, EncodingError
from .latents import LATENT_MAX, LATENT_MIN, init_pyramid, quantize_uniform, \
    relax_noise, relax_ste
from .metrics import psnr
from .models import GROUP_ORDER, build_models, group_flats, group_params
from .pipeline import export_image, upsample, upsample_np
from .rans import RansEncoder

LAMBDA_PRESETS = (0.02, 0.004, 0.001, 0.0004, 0.0001)


@dataclass
class EncodeConfig:
    lam: float = 0.001
    iters: int = 2000
    levels: int = 7
    arm_levels: int = 0
    seed: int = 0
    lr_start: float = 1e-2
    lr_end: float = 1e-5
    phase_a_frac: float = 0.9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    trace_every: int = 100
    param_trace: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ContractViolation("lambda must be nonnegative")
        if self.iters < 1:
            raise ContractViolation("need at least one iteration")
        if not 0 <= self.arm_levels <= self.levels:
            raise ContractViolation("serial level count cannot exceed level count")

    def to_dict(self):
        return {
            "lambda": self.lam, "iters": self.iters, "levels": self.levels,
            "arm_levels": self.arm_levels, "seed": self.seed,
            "lr_start": self.lr_start, "lr_end": self.lr_end,
            "phase_a_frac": self.phase_a_frac,
        }


@dataclass
class EncodeReport:
    final_loss: float = 0.0
    distortion: float = 0.0
    rate_model_bits: float = 0.0
    latent_payload_bits: int = 0
    param_bits: int = 0
    header_bits: int = 0
    stream_bytes: int = 0
    bpp: float = 0.0
    psnr_db: float = 0.0
    objective: float = 0.0
    step_exponents: tuple = (7, 7, 7)
    times: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    prob_floor_hits: int = 0
    config: dict = field(default_factory=dict)
    seed: int = 0
    version: str = ""
    # debug-only, never serialized
    param_trace: list | None = None
    reconstruction: np.ndarray | None = None

    def to_dict(self):
        return {
            "final_loss": self.final_loss,
            "distortion": self.distortion,
            "rate_model_bits": self.rate_model_bits,
            "latent_payload_bits": self.latent_payload_bits,
            "param_bits": self.param_bits,
            "header_bits": self.header_bits,
            "stream_bytes": self.stream_bytes,
            "bpp": self.bpp,
            "psnr_db": self.psnr_db,
            "objective": self.objective,
            "step_exponents": list(self.step_exponents),
            "times": self.times,
            "trace": self.trace,
            "stats": self.stats,
            "prob_floor_hits": self.prob_floor_hits,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
        }


class CodecState:
    """Everything one encoding job trains: image target, latents, models."""

    def __init__(self, image, cfg):
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
            raise ContractViolation("encoder expects an (H, W, 3) uint8 image")
        if image.shape[0] < 1 or image.shape[1] < 1:
            raise ContractViolation("image has no pixels")
        self.cfg = cfg
        self.h, self.w = image.shape[:2]
        self.x = np.ascontiguousarray(
            image.astype(ad.dtype()).transpose(2, 0, 1) / ad.dtype().type(255.0)
        )
        self.rng = np.random.default_rng(cfg.seed)
        self.pyramid = init_pyramid(self.h, self.w, cfg.levels)
        self.extents = self.pyramid.extents
        hdr = bitstream.Header(
            h=self.h, w=self.w, levels=cfg.levels, arm_levels=cfg.arm_levels,
        )
        self.em, self.ups, self.syn = build_models(hdr, self.rng)

    def trainable(self):
        return (
            self.pyramid.levels
            + self.em.parameters()
            + self.ups.parameters()
            + self.syn.parameters()
        )

    def relaxed_levels(self, phase):
        out = []
        for p in self.pyramid.levels:
            y = ad.clamp(p.t, LATENT_MIN, LATENT_MAX)
            out.append(relax_noise(y, self.rng) if phase == "noise" else relax_ste(y))
        return out


def loss(state, relaxed, diag=None):
    """Eq-style objective on [0,1] RGB: distortion + lambda * bits/pixel."""
    x_t = ad.constant(state.x)
    z = upsample(relaxed, state.extents, state.ups)
    xh = state.syn.forward(z)
    d = ad.mse(x_t, xh)
    if state.cfg.lam > 0:
        params = state.em.training_params(relaxed, state.extents)
        bits = rate_bits(relaxed, params, diag)
        npx = state.h * state.w
        total = ad.add(d, ad.mul(bits, state.cfg.lam / npx))
        return total, {"d": float(d.data), "bits": float(bits.data)}
    return d, {"d": float(d.data), "bits": 0.0}


def _cosine_lr(cfg, it):
    if cfg.iters <= 1:
        return cfg.lr_start
    t = it / (cfg.iters - 1)
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1 + math.cos(math.pi * t))


def _distortion_np(state):
    z = upsample_np(state._y_int, state.extents, state.ups)
    xrec = state.syn.infer(z)
    return float(np.mean((state.x.astype(np.float64) - xrec.astype(np.float64)) ** 2)), xrec


def _choose_steps(state, float_flats):
    """Greedy per-group exhaustive step search; groups are frozen in order."""
    cfg = state.cfg
    npx = state.h * state.w
    params = group_params(state.em, state.ups, state.syn)
    chosen, payloads = {}, {}
    for name in GROUP_ORDER:
        best = None
        for e in netcode.STEP_EXPONENTS:
            k = netcode.quantize_ints(float_flats[name], netcode.step_from_exp(e))
            wq = netcode.dequantize(k, netcode.step_from_exp(e))
            netcode.set_group_flat(params[name], wq)
            section = netcode.code_group(k)
            bits = 8 * len(section)
            if name == "entropy":
                latent_bits = (
                    state.em.modeled_bits(state._y_int, state.extents)
                    if cfg.lam > 0 else 0.0
                )
                d = state._d_float
            else:
                latent_bits = state._latent_bits_q
                d, _ = _distortion_np(state)
            j = d + cfg.lam * (latent_bits + bits) / npx
            if best is None or j < best[0]:
                best = (j, e, k, wq, bits)
        _, e, k, wq, bits = best
        netcode.set_group_flat(params[name], wq)
        chosen[name] = e
        payloads[name] = bits
        if name == "entropy":
            state._latent_bits_q = (
                state.em.modeled_bits(state._y_int, state.extents)
                if cfg.lam > 0 else 0.0
            )
    return chosen, payloads


def encode(image, cfg):
    """Train, quantize, code. Returns (stream bytes, EncodeReport)."""
    from . import __version__

    t0 = time.perf_counter()
    state = CodecState(image, cfg)
    npx = state.h * state.w
    phase_a = int(round(cfg.phase_a_frac * cfg.iters))
    diag = {}
    trace = []
    last = {"d": float("nan"), "bits": 0.0}
    loss_val = float("nan")
    t_phase_a = 0.0
    for it in range(cfg.iters):
        phase = "noise" if it < phase_a else "ste"
        relaxed = state.relaxed_levels(phase)
        total, parts = loss(state, relaxed, diag)
        loss_val = float(total.data)
        if not math.isfinite(loss_val):
            raise EncodingError(
                f"loss diverged at iteration {it}: d={parts['d']} bits={parts['bits']}"
            )
        ad.backward(total)
        ad.adam_step(state.trainable(), _cosine_lr(cfg, it), cfg.betas, cfg.eps)
        last = parts
        if it % cfg.trace_every == 0 or it == cfg.iters - 1:
            trace.append(
                {"iter": it, "loss": loss_val, "d": parts["d"],
                 "bpp_model": parts["bits"] / npx}
            )
        if it == phase_a - 1:
            t_phase_a = time.perf_counter() - t0
    t_train = time.perf_counter() - t0
    if phase_a >= cfg.iters:
        t_phase_a = t_train

    # final integer latents and their signaled ranges
    state._y_int = [
        quantize_uniform(np.clip(p.t.data, LATENT_MIN, LATENT_MAX)).reshape(ext)
        for p, ext in zip(state.pyramid.levels, state.extents)
    ]
    ranges = [(int(y.min()), int(y.max())) for y in state._y_int]

    t1 = time.perf_counter()
    state._d_float, _ = _distortion_np(state)
    state._latent_bits_q = 0.0
    float_flats = group_flats(state.em, state.ups, state.syn)
    steps, group_bits = _choose_steps(state, float_flats)
    t_quant = time.perf_counter() - t1

    t2 = time.perf_counter()
    quant_flats = group_flats(state.em, state.ups, state.syn)
    groups_k = {
        name: netcode.quantize_ints(quant_flats[name], netcode.step_from_exp(steps[name]))
        for name in GROUP_ORDER
    }
    params_payload = b"".join(netcode.code_group(groups_k[n]) for n in GROUP_ORDER)

    enc = RansEncoder()
    sink = EncodeSink(enc)
    ptrace = [] if cfg.param_trace else None
    _, stats = run_coding(
        state.em, state.extents, ranges, sink, y_levels=state._y_int, trace=ptrace
    )
    latents_payload = enc.finish()

    hdr = bitstream.Header(
        h=state.h, w=state.w, levels=cfg.levels, arm_levels=cfg.arm_levels,
        step_exponents=(steps["entropy"], steps["upsampler"], steps["synthesis"]),
        level_ranges=ranges,
    )
    stream = bitstream.write_bitstream(hdr, params_payload, latents_payload)
    t_code = time.perf_counter() - t2

    d_final, xrec = _distortion_np(state)
    recon = export_image(xrec)
    img_u8 = np.asarray(image, dtype=np.uint8)
    total_bits = 8 * len(stream)
    report = EncodeReport(
        final_loss=loss_val,
        distortion=d_final,
        rate_model_bits=sink.model_bits,
        latent_payload_bits=8 * len(latents_payload),
        param_bits=8 * len(params_payload),
        header_bits=8 * hdr.packed_size(),
        stream_bytes=len(stream),
        bpp=total_bits / npx,
        psnr_db=psnr(img_u8, recon),
        objective=d_final + cfg.lam * total_bits / npx,
        step_exponents=(steps["entropy"], steps["upsampler"], steps["synthesis"]),
        times={
            "phase_a_s": t_phase_a,
            "phase_b_s": t_train - t_phase_a,
            "quantize_s": t_quant,
            "code_s": t_code,
            "total_s": time.perf_counter() - t0,
        },
        trace=trace,
        stats=stats,
        prob_floor_hits=diag.get("prob_floor_hits", 0),
        config=cfg.to_dict(),
        seed=cfg.seed,
        version=__version__,
        param_trace=ptrace,
        reconstruction=recon,
    )
    return stream, report


def greedy_best_of(candidates):
    """Pick the (stream, report) with minimal objective; ties go to the
    lowest seed."""
    cands = list(candidates)
    if not cands:
        raise ContractViolation("no encoding candidates")
    return min(cands, key=lambda sr: (sr[1].objective, sr[1].seed))
