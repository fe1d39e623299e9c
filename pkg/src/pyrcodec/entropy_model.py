"""Mixed autoregressive entropy model over the latent pyramid.

Two context families produce per-symbol Laplace parameters:

* vectorized cross-level passes -- a whole level's parameters come from
  the previous level in one pass-1 evaluation; the checkerboard
  non-anchor half is then refined by a pass-2 evaluation conditioned on
  the decoded anchors. Two network passes per level, any image size.
* a serial raster model -- one tiny MLP per pixel on its already-decoded
  causal neighborhood, shared across levels via a level-encoding input.

The finest ``arm_levels`` levels use the serial model, the rest the
vectorized passes (``arm_levels == levels`` degenerates to fully serial,
``0`` to fully vectorized). Both the encoder's final coding pass and the
decoder drive :func:`run_coding`, so their (mu, sigma) streams agree
bitwise on one platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation, SymbolRangeError
from .laplace import SIGMA_MAX, SIGMA_MIN, bits_tensor, np_bits
from .latents import anchor_mask, level_encoding, positional_encoding
from .rans import TOTAL, quantize_cdf, quantize_cdf_batch

MU0 = 0.0
SIGMA0 = float(np.exp(-0.5))

# Raster-causal neighborhood, nearest first; OOB reads as zero. Fixed by the
# format (like anchor parity), so it is not signaled.
CAUSAL_OFFSETS = (
    (0, -1), (0, -2),
    (-1, -1), (-1, 0), (-1, 1), (-1, -2), (-1, 2),
    (-2, 0), (-2, -1), (-2, 1), (-2, -2), (-2, 2),
)

_BATCH = 1 << 16


@dataclass
class MixedModelConfig:
    levels: int = 7
    arm_levels: int = 0
    aru_hidden: int = 16
    aru_pass1_kernel: int = 4
    aru_pass2_kernel: int = 3
    arm_context: int = 12
    arm_hidden: int = 12

    def __post_init__(self):
        if not 1 <= self.levels <= 12:
            raise ContractViolation("levels must be in 1..12")
        if not 0 <= self.arm_levels <= self.levels:
            raise ContractViolation("serial level count cannot exceed the level count")
        if not 1 <= self.arm_context <= len(CAUSAL_OFFSETS):
            raise ContractViolation("context size out of range")
        if self.aru_pass2_kernel % 2 == 0:
            raise ContractViolation("pass-2 kernel must be odd")

    @property
    def vector_levels(self):
        return self.levels - self.arm_levels


def _sigma_from_raw(raw):
    return ad.clamp(ad.exp(raw), SIGMA_MIN, SIGMA_MAX)


def _np_sigma_from_raw(raw):
    return np.clip(np.exp(raw), SIGMA_MIN, SIGMA_MAX).astype(raw.dtype, copy=False)


def _mlp_params(width_in, hidden, rng, group="entropy"):
    def w(shape, fan):
        if rng is None:
            return np.zeros(shape, dtype=ad.dtype())
        return ad.he_uniform(shape, fan, rng)

    return [
        ad.Parameter(w((hidden, width_in), width_in), group),
        ad.Parameter(np.zeros(hidden, dtype=ad.dtype()), group),
        ad.Parameter(w((hidden, hidden), hidden), group),
        ad.Parameter(np.zeros(hidden, dtype=ad.dtype()), group),
        ad.Parameter(np.zeros((2, hidden), dtype=ad.dtype()), group),  # zero head
        ad.Parameter(np.zeros(2, dtype=ad.dtype()), group),
    ]


def _mlp_forward(rows, p):
    h = ad.relu(ad.linear(rows, p[0], p[1]))
    h = ad.relu(ad.linear(h, p[2], p[3]))
    return ad.linear(h, p[4], p[5])


def _np_mlp(rows, p):
    h = np.maximum(ad.np_linear(rows, p[0].data, p[1].data), 0)
    h = np.maximum(ad.np_linear(h, p[2].data, p[3].data), 0)
    return ad.np_linear(h, p[4].data, p[5].data)


def _pe_le_rows(h, w, le):
    pe = positional_encoding(h, w).reshape(2, -1).T  # (HW, 2)
    lecol = np.full((h * w, 1), le, dtype=ad.dtype())
    return np.concatenate([pe, lecol], axis=1)


def _heads_to_grids(out, h, w):
    mu = ad.to_grid(ad.narrow(out, 1, 0, 1), h, w)
    sigma = _sigma_from_raw(ad.to_grid(ad.narrow(out, 1, 1, 1), h, w))
    return mu, sigma


class LevelPass1Net:
    """Predicts a level's anchor parameters from the previous level."""

    def __init__(self, cfg, rng):
        k, hid = cfg.aru_pass1_kernel, cfg.aru_hidden
        if rng is None:
            tw = np.zeros((3, hid, k, k), dtype=ad.dtype())
        else:
            tw = ad.he_uniform((3, hid, k, k), 3 * k * k, rng)
        self.tconv = ad.Parameter(tw, "entropy")
        self.mlp = _mlp_params(hid + 3, hid, rng)

    def parameters(self):
        return [self.tconv] + self.mlp

    def forward(self, y_prev, mu_prev, sig_prev, out_hw, le):
        x = ad.concat_channels([y_prev, mu_prev, sig_prev])
        feat = ad.transposed_conv2d(x, self.tconv, 2, out_hw)
        h, w = out_hw
        rows = ad.concat(
            [ad.to_rows(feat), ad.constant(_pe_le_rows(h, w, le))], axis=1
        )
        return _heads_to_grids(_mlp_forward(rows, self.mlp), h, w)

    def infer(self, y_prev, mu_prev, sig_prev, out_hw, le):
        x = np.stack([y_prev, mu_prev, sig_prev]).astype(ad.dtype(), copy=False)
        feat = ad.np_transposed_conv2d(x, self.tconv.data, 2, out_hw)
        h, w = out_hw
        rows = np.concatenate(
            [feat.transpose(1, 2, 0).reshape(h * w, -1), _pe_le_rows(h, w, le)], axis=1
        )
        out = _np_mlp(rows, self.mlp)
        mu = out[:, 0].reshape(h, w)
        return mu, _np_sigma_from_raw(out[:, 1]).reshape(h, w)


class LevelPass2Net:
    """Refines non-anchor parameters from the decoded anchors."""

    def __init__(self, cfg, rng):
        k, hid = cfg.aru_pass2_kernel, cfg.aru_hidden
        if rng is None:
            cw = np.zeros((hid, 3, k, k), dtype=ad.dtype())
        else:
            cw = ad.he_uniform((hid, 3, k, k), 3 * k * k, rng)
        self.conv = ad.Parameter(cw, "entropy")
        self.mlp = _mlp_params(hid + 3, hid, rng)

    def parameters(self):
        return [self.conv] + self.mlp

    def forward(self, y_anchor, mu_anchor, sig_anchor, le):
        x = ad.concat_channels([y_anchor, mu_anchor, sig_anchor])
        feat = ad.conv2d(x, self.conv)
        _, h, w = y_anchor.data.shape
        rows = ad.concat(
            [ad.to_rows(feat), ad.constant(_pe_le_rows(h, w, le))], axis=1
        )
        return _heads_to_grids(_mlp_forward(rows, self.mlp), h, w)

    def infer(self, y_anchor, mu_anchor, sig_anchor, le):
        x = np.stack([y_anchor, mu_anchor, sig_anchor]).astype(ad.dtype(), copy=False)
        feat = ad.np_conv2d(x, self.conv.data)
        h, w = y_anchor.shape
        rows = np.concatenate(
            [feat.transpose(1, 2, 0).reshape(h * w, -1), _pe_le_rows(h, w, le)], axis=1
        )
        out = _np_mlp(rows, self.mlp)
        mu = out[:, 0].reshape(h, w)
        return mu, _np_sigma_from_raw(out[:, 1]).reshape(h, w)


@lru_cache(maxsize=64)
def causal_indices(h, w, context):
    """Flat neighbor indices (HW, ctx) plus a 0/1 validity mask."""
    offs = CAUSAL_OFFSETS[:context]
    rr = np.arange(h)[:, None, None]
    cc = np.arange(w)[None, :, None]
    dr = np.array([o[0] for o in offs])[None, None, :]
    dc = np.array([o[1] for o in offs])[None, None, :]
    nr, nc = rr + dr, cc + dc
    valid = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
    flat = np.where(valid, nr * w + nc, 0).reshape(h * w, context)
    mask = valid.reshape(h * w, context).astype(np.float32)
    flat.flags.writeable = False
    mask.flags.writeable = False
    return flat, mask


class PixelNet:
    """Serial raster-context model, one evaluation per decoded pixel."""

    def __init__(self, cfg, rng):
        self.context = cfg.arm_context
        self.mlp = _mlp_params(cfg.arm_context + 1, cfg.arm_hidden, rng)

    def parameters(self):
        return list(self.mlp)

    def _shift(self, y, dr, dc):
        _, h, w = y.data.shape
        padded = ad.pad2d(y, (-dr, 0, max(0, -dc), max(0, dc)))
        return ad.crop2d(padded, 0, max(0, dc), h, w)

    def forward_grid(self, y, le):
        """Vectorized training path: every context at once from known y."""
        _, h, w = y.data.shape
        chans = [self._shift(y, dr, dc) for dr, dc in CAUSAL_OFFSETS[: self.context]]
        lec = ad.constant(np.full((1, h, w), le, dtype=ad.dtype()))
        rows = ad.to_rows(ad.concat_channels(chans + [lec]))
        return _heads_to_grids(_mlp_forward(rows, self.mlp), h, w)

    def infer_grid(self, y, le):
        h, w = y.shape
        idx, mask = causal_indices(h, w, self.context)
        flat = y.reshape(-1).astype(ad.dtype(), copy=False)
        rows = np.concatenate(
            [
                flat[idx] * mask.astype(ad.dtype(), copy=False),
                np.full((h * w, 1), le, dtype=ad.dtype()),
            ],
            axis=1,
        )
        out = _np_mlp(rows, self.mlp)
        mu = out[:, 0].reshape(h, w)
        return mu, _np_sigma_from_raw(out[:, 1]).reshape(h, w)

    def step(self, ctx):
        """One pixel: ctx is (context+1,) float32 including the level code."""
        p = self.mlp
        h = np.maximum(p[0].data @ ctx + p[1].data, 0)
        h = np.maximum(p[2].data @ h + p[3].data, 0)
        out = p[4].data @ h + p[5].data
        sig = min(max(float(np.exp(out[1])), SIGMA_MIN), SIGMA_MAX)
        return float(out[0]), sig


class EntropyModel:
    """Container for whichever context networks the (L, M) split needs."""

    def __init__(self, cfg, rng=None):
        self.cfg = cfg
        self.pass1 = LevelPass1Net(cfg, rng) if cfg.vector_levels >= 2 else None
        self.pass2 = LevelPass2Net(cfg, rng) if cfg.vector_levels >= 1 else None
        self.pixel = PixelNet(cfg, rng) if cfg.arm_levels >= 1 else None

    def parameters(self):
        out = []
        for net in (self.pixel, self.pass1, self.pass2):
            if net is not None:
                out.extend(net.parameters())
        return out

    # -- differentiable parameter pass (training) ---------------------------

    def training_params(self, y_levels, extents):
        """Per-level merged (mu, sigma) tensors from relaxed latents."""
        cfg = self.cfg
        params = []
        prev = None
        for i in range(cfg.vector_levels):
            h, w = extents[i]
            le = level_encoding(i, cfg.levels)
            if i == 0:
                mu1 = ad.constant(np.zeros((1, h, w), dtype=ad.dtype()))
                sig1 = ad.constant(np.full((1, h, w), SIGMA0, dtype=ad.dtype()))
            else:
                mu1, sig1 = self.pass1.forward(*prev, (h, w), le)
            am = ad.constant(
                anchor_mask(h, w).astype(ad.dtype())[None]
            )
            nm = ad.constant(
                (~anchor_mask(h, w)).astype(ad.dtype())[None]
            )
            y = y_levels[i]
            mu2, sig2 = self.pass2.forward(
                ad.mul(y, am), ad.mul(mu1, am), ad.mul(sig1, am), le
            )
            mu = ad.add(ad.mul(mu1, am), ad.mul(mu2, nm))
            sigma = ad.add(ad.mul(sig1, am), ad.mul(sig2, nm))
            params.append((mu, sigma))
            prev = (y, mu, sigma)
        for i in range(cfg.vector_levels, cfg.levels):
            le = level_encoding(i, cfg.levels)
            params.append(self.pixel.forward_grid(y_levels[i], le))
        return params

    # -- plain-numpy parameter pass (model-bits estimates) ------------------

    def infer_params(self, y_levels, extents):
        cfg = self.cfg
        params = []
        prev = None
        for i in range(cfg.vector_levels):
            h, w = extents[i]
            le = level_encoding(i, cfg.levels)
            y = np.asarray(y_levels[i], dtype=ad.dtype()).reshape(h, w)
            if i == 0:
                mu1 = np.zeros((h, w), dtype=ad.dtype())
                sig1 = np.full((h, w), SIGMA0, dtype=ad.dtype())
            else:
                mu1, sig1 = self.pass1.infer(*prev, (h, w), le)
            am = anchor_mask(h, w).astype(ad.dtype())
            mu2, sig2 = self.pass2.infer(y * am, mu1 * am, sig1 * am, le)
            mu = np.where(anchor_mask(h, w), mu1, mu2)
            sigma = np.where(anchor_mask(h, w), sig1, sig2)
            params.append((mu, sigma))
            prev = (y, mu, sigma)
        for i in range(cfg.vector_levels, cfg.levels):
            le = level_encoding(i, cfg.levels)
            y = np.asarray(y_levels[i], dtype=ad.dtype()).reshape(extents[i])
            params.append(self.pixel.infer_grid(y, le))
        return params

    def modeled_bits(self, y_levels, extents):
        """Total -log2 p of integer latents under the float model."""
        total = 0.0
        for (mu, sigma), y, (h, w) in zip(
            self.infer_params(y_levels, extents), y_levels, extents
        ):
            total += np_bits(np.asarray(y).reshape(h, w), mu, sigma)
        return total


def rate_bits(y_levels, params, diag=None):
    """Differentiable total bits of a pyramid under per-level (mu, sigma)."""
    total = None
    for y, (mu, sigma) in zip(y_levels, params):
        b = bits_tensor(y, mu, sigma, diag)
        total = b if total is None else ad.add(total, b)
    if total is None:
        return ad.constant(np.zeros((), dtype=ad.dtype()))
    return total


# ---------------------------------------------------------------------------
# coding schedule

@dataclass
class CodingPlan:
    steps: list  # ("vector" | "serial", level)
    vector_passes: int
    serial_symbols: int
    symbols: int


def coding_plan(extents, cfg):
    """Deterministic decode plan; pass counts do not depend on extents."""
    if cfg.levels != len(extents):
        raise ContractViolation("plan geometry mismatch")
    steps = []
    for i in range(cfg.levels):
        steps.append(("vector" if i < cfg.vector_levels else "serial", i))
    vector_passes = 0 if cfg.vector_levels == 0 else 2 * cfg.vector_levels - 1
    serial = sum(h * w for h, w in extents[cfg.vector_levels:])
    return CodingPlan(
        steps=steps,
        vector_passes=vector_passes,
        serial_symbols=serial,
        symbols=sum(h * w for h, w in extents),
    )


# ---------------------------------------------------------------------------
# coding executor, shared by encoder (known symbols) and decoder

class EncodeSink:
    """Maps known symbols to (start, freq) pairs on a RansEncoder."""

    def __init__(self, rans_encoder):
        self.enc = rans_encoder
        self.model_bits = 0.0

    def batch(self, mu, sigma, kmin, kmax, known):
        idx = np.asarray(known, dtype=np.int64) - kmin
        if idx.size and (idx.min() < 0 or idx.max() > kmax - kmin):
            raise ContractViolation("latent symbol escapes its declared range")
        out = np.asarray(known, dtype=np.int32)
        for lo in range(0, idx.size, _BATCH):
            sl = slice(lo, min(lo + _BATCH, idx.size))
            cdf = quantize_cdf_batch(mu[sl], sigma[sl], kmin, kmax)
            rows = np.arange(cdf.shape[0])
            starts = cdf[rows, idx[sl]]
            freqs = cdf[rows, idx[sl] + 1] - starts
            for s, f in zip(starts.tolist(), freqs.tolist()):
                self.enc.append(s, f)
            self.model_bits += float(-np.log2(freqs.astype(np.float64) / TOTAL).sum())
        return out

    def scalar(self, mu, sigma, kmin, kmax, known):
        idx = int(known) - kmin
        if not 0 <= idx <= kmax - kmin:
            raise ContractViolation("latent symbol escapes its declared range")
        cdf = quantize_cdf(mu, sigma, kmin, kmax)
        start = int(cdf[idx])
        freq = int(cdf[idx + 1]) - start
        self.enc.append(start, freq)
        self.model_bits += -np.log2(freq / TOTAL)
        return int(known)


class DecodeSink:
    """Pulls symbols out of a RansDecoder under the same models."""

    def __init__(self, rans_decoder, span_check=True):
        self.dec = rans_decoder
        self.span_check = span_check

    def batch(self, mu, sigma, kmin, kmax, known=None):
        n = mu.size
        out = np.empty(n, dtype=np.int32)
        dec = self.dec
        for lo in range(0, n, _BATCH):
            sl = slice(lo, min(lo + _BATCH, n))
            cdf = quantize_cdf_batch(mu[sl], sigma[sl], kmin, kmax)
            for j in range(cdf.shape[0]):
                out[lo + j] = dec.decode_symbol(cdf[j]) + kmin
        return out

    def scalar(self, mu, sigma, kmin, kmax, known=None):
        cdf = quantize_cdf(mu, sigma, kmin, kmax)
        return self.dec.decode_symbol(cdf) + kmin


def run_coding(model, extents, ranges, sink, y_levels=None, trace=None):
    """Drive the fixed coding order: levels coarse to fine, anchors before
    non-anchors inside vector levels, raster order inside serial levels.

    Returns (levels, stats) where levels are the int32 grids that were
    coded/decoded and stats counts network invocations and symbols.
    """
    cfg = model.cfg
    stats = {"vector_passes": 0, "serial_evals": 0, "symbols": 0}
    out_levels = []
    prev = None
    for i in range(cfg.levels):
        h, w = extents[i]
        kmin, kmax = ranges[i]
        if kmax < kmin:
            raise ContractViolation("level range is empty")
        le = level_encoding(i, cfg.levels)
        known = None if y_levels is None else np.asarray(y_levels[i]).reshape(h, w)
        if i < cfg.vector_levels:
            if i == 0:
                mu1 = np.zeros((h, w), dtype=ad.dtype())
                sig1 = np.full((h, w), SIGMA0, dtype=ad.dtype())
            else:
                mu1, sig1 = model.pass1.infer(*prev, (h, w), le)
                stats["vector_passes"] += 1
            am = anchor_mask(h, w)
            if trace is not None:
                trace.append((i, "anchor", mu1[am].copy(), sig1[am].copy()))
            asy = sink.batch(
                mu1[am], sig1[am], kmin, kmax,
                None if known is None else known[am],
            )
            grid = np.zeros((h, w), dtype=np.int32)
            grid[am] = asy
            amf = am.astype(ad.dtype())
            yf = grid.astype(ad.dtype()) * amf
            mu2, sig2 = model.pass2.infer(yf, mu1 * amf, sig1 * amf, le)
            stats["vector_passes"] += 1
            if trace is not None:
                trace.append((i, "non_anchor", mu2[~am].copy(), sig2[~am].copy()))
            nsy = sink.batch(
                mu2[~am], sig2[~am], kmin, kmax,
                None if known is None else known[~am],
            )
            grid[~am] = nsy
            mu_m = np.where(am, mu1, mu2).astype(ad.dtype())
            sig_m = np.where(am, sig1, sig2).astype(ad.dtype())
            prev = (grid.astype(ad.dtype()), mu_m, sig_m)
            stats["symbols"] += h * w
        else:
            net = model.pixel
            idx, mask = causal_indices(h, w, net.context)
            yf = np.zeros(h * w, dtype=ad.dtype())
            grid = np.zeros(h * w, dtype=np.int32)
            kflat = None if known is None else known.reshape(-1)
            ctx = np.empty(net.context + 1, dtype=ad.dtype())
            ctx[-1] = le
            mus = sigs = None
            if trace is not None:
                mus = np.empty(h * w, dtype=ad.dtype())
                sigs = np.empty(h * w, dtype=ad.dtype())
            for t in range(h * w):
                ctx[:-1] = yf[idx[t]] * mask[t]
                mu, sig = net.step(ctx)
                s = sink.scalar(
                    mu, sig, kmin, kmax, None if kflat is None else kflat[t]
                )
                grid[t] = s
                yf[t] = s
                if trace is not None:
                    mus[t] = mu
                    sigs[t] = sig
            if trace is not None:
                trace.append((i, "serial", mus, sigs))
            stats["serial_evals"] += h * w
            stats["symbols"] += h * w
            grid = grid.reshape(h, w)
        out_levels.append(grid if grid.ndim == 2 else grid.reshape(h, w))
    return out_levels, stats
