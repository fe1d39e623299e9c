"""Learnable upsampler, mixed conv+MLP synthesis, and MACs accounting."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation

UPSAMPLER_KERNEL = 8
SYNTH_KERNEL = 7
SYNTH_LAYERS = 3
SYNTH_WIDTH = 12


def catmull_rom(t):
    t = abs(float(t))
    if t <= 1.0:
        return 1.5 * t ** 3 - 2.5 * t ** 2 + 1.0
    if t < 2.0:
        return -0.5 * t ** 3 + 2.5 * t ** 2 - 4.0 * t + 2.0
    return 0.0


def bicubic_stencil(k=UPSAMPLER_KERNEL):
    """Separable stride-2 interpolation taps; each output parity sums to 1."""
    taps = np.array(
        [catmull_rom((n - (k - 1) / 2.0) / 2.0) for n in range(k)], dtype=np.float64
    )
    return np.outer(taps, taps).astype(ad.dtype())


class Upsampler:
    """One shared stride-2 transposed-conv kernel applied per stage."""

    def __init__(self, kernel=UPSAMPLER_KERNEL, init="bicubic"):
        if init == "bicubic":
            w = bicubic_stencil(kernel)[None, None]
        else:
            w = np.zeros((1, 1, kernel, kernel), dtype=ad.dtype())
        self.w = ad.Parameter(w, "upsampler")

    def parameters(self):
        return [self.w]

    def stage(self, x, out_hw):
        return ad.transposed_conv2d(x, self.w, 2, out_hw)

    def stage_np(self, y, out_hw):
        return ad.np_transposed_conv2d(y[None], self.w.data, 2, out_hw)[0]


def upsample(levels, extents, upsampler):
    """Stack every level at full resolution: tensor (L, H, W), differentiable.

    Level i climbs through each intermediate extent with a center crop per
    stage; the finest level passes through unchanged.
    """
    n = len(extents)
    if len(levels) != n:
        raise ContractViolation("pyramid level count mismatch")
    chans = []
    for i, lvl in enumerate(levels):
        t = lvl if isinstance(lvl, ad.Tensor) else ad.as_tensor(lvl)
        for j in range(i + 1, n):
            t = upsampler.stage(t, extents[j])
        chans.append(t)
    return ad.concat_channels(chans)


def upsample_np(levels, extents, upsampler):
    n = len(extents)
    chans = []
    for i, lvl in enumerate(levels):
        y = np.asarray(lvl, dtype=ad.dtype()).reshape(extents[i])
        for j in range(i + 1, n):
            y = upsampler.stage_np(y, extents[j])
        chans.append(y)
    return np.stack(chans)


class Synthesis:
    """Residual separable-conv stack plus a per-pixel MLP branch.

    Wiring (fixed by golden tests): h starts at the dense stack z and takes
    three rounds of h += relu(sepconv(h) + bias); the MLP branch feeds z
    through two hidden layers; [h, mlp] concatenated pixel-wise then
    projected 1x1 to RGB. Depthwise kernels start as Dirac taps, pointwise
    as identity, the MLP output layer at zero, so the initial image is the
    projection of a near-pass-through h.
    """

    def __init__(self, channels, rng=None, layers=SYNTH_LAYERS,
                 kernel=SYNTH_KERNEL, width=SYNTH_WIDTH):
        if kernel % 2 == 0:
            raise ContractViolation("synthesis kernel must be odd")
        self.channels = channels
        self.layers = layers
        self.kernel = kernel
        self.width = width
        c, k = channels, kernel
        self.blocks = []
        for _ in range(layers):
            dw = np.zeros((c, k, k), dtype=ad.dtype())
            dw[:, k // 2, k // 2] = 1.0
            pw = np.eye(c, dtype=ad.dtype())
            if rng is None:
                dw[:] = 0.0
                pw[:] = 0.0
            self.blocks.append(
                (
                    ad.Parameter(dw, "synthesis"),
                    ad.Parameter(pw, "synthesis"),
                    ad.Parameter(np.zeros(c, dtype=ad.dtype()), "synthesis"),
                )
            )

        def w(shape, fan):
            if rng is None:
                return np.zeros(shape, dtype=ad.dtype())
            return ad.he_uniform(shape, fan, rng)

        self.mlp_w1 = ad.Parameter(w((width, c), c), "synthesis")
        self.mlp_b1 = ad.Parameter(np.zeros(width, dtype=ad.dtype()), "synthesis")
        self.mlp_w2 = ad.Parameter(np.zeros((width, width), dtype=ad.dtype()), "synthesis")
        self.mlp_b2 = ad.Parameter(np.zeros(width, dtype=ad.dtype()), "synthesis")
        self.proj_w = ad.Parameter(w((3, c + width), c + width), "synthesis")
        self.proj_b = ad.Parameter(np.zeros(3, dtype=ad.dtype()), "synthesis")

    def parameters(self):
        out = []
        for dw, pw, pb in self.blocks:
            out += [dw, pw, pb]
        out += [self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2,
                self.proj_w, self.proj_b]
        return out

    def param_count(self):
        return sum(p.data.size for p in self.parameters())

    def forward(self, z):
        if z.data.shape[0] != self.channels:
            raise ContractViolation("synthesis channel mismatch")
        _, h, w = z.data.shape
        cur = z
        for dw, pw, pb in self.blocks:
            conv = ad.separable_conv2d(cur, dw, pw)
            conv = ad.add(conv, ad.reshape(pb, (self.channels, 1, 1)))
            cur = ad.add(cur, ad.relu(conv))
        rows = ad.to_rows(z)
        m = ad.relu(ad.linear(rows, self.mlp_w1, self.mlp_b1))
        m = ad.relu(ad.linear(m, self.mlp_w2, self.mlp_b2))
        feat = ad.concat([ad.to_rows(cur), m], axis=1)
        rgb = ad.linear(feat, self.proj_w, self.proj_b)
        return ad.to_grid(rgb, h, w)

    def infer(self, z):
        if z.shape[0] != self.channels:
            raise ContractViolation("synthesis channel mismatch")
        _, h, w = z.shape
        cur = z
        for dw, pw, pb in self.blocks:
            conv = ad.np_channel_mix(ad.np_depthwise_conv2d(cur, dw.data), pw.data)
            conv = conv + pb.data[:, None, None]
            cur = cur + np.maximum(conv, 0)
        rows = z.transpose(1, 2, 0).reshape(h * w, -1)
        m = np.maximum(ad.np_linear(rows, self.mlp_w1.data, self.mlp_b1.data), 0)
        m = np.maximum(ad.np_linear(m, self.mlp_w2.data, self.mlp_b2.data), 0)
        feat = np.concatenate([cur.transpose(1, 2, 0).reshape(h * w, -1), m], axis=1)
        rgb = ad.np_linear(feat, self.proj_w.data, self.proj_b.data)
        return rgb.reshape(h, w, 3).transpose(2, 0, 1)


def synthesize(z, synthesis):
    return synthesis.forward(z) if isinstance(z, ad.Tensor) else synthesis.infer(z)


def export_image(x):
    """(3,H,W) reals -> (H,W,3) uint8: clamp, scale, round half away."""
    arr = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0
    return ad.np_round_half_away(arr).astype(np.uint8).transpose(1, 2, 0)


def count_macs(levels, arm_levels, h, w, *, aru_hidden=16, aru_pass1_kernel=4,
               aru_pass2_kernel=3, arm_context=12, arm_hidden=12,
               synth_layers=SYNTH_LAYERS, synth_kernel=SYNTH_KERNEL,
               synth_width=SYNTH_WIDTH, ups_kernel=UPSAMPLER_KERNEL):
    """Analytic multiply-accumulates per decoded image pixel, by stage."""
    from .latents import level_extents

    ext = level_extents(h, w, levels)
    npx = float(h * w)
    vec_levels = levels - arm_levels

    ups = 0.0
    taps = (ups_kernel / 2.0) ** 2
    for i in range(levels - 1):
        for j in range(i + 1, levels):
            ups += taps * ext[j][0] * ext[j][1]
    ups /= npx

    c = levels
    conv = synth_layers * (c * synth_kernel ** 2 + c * c)
    mlp_in = c * synth_width
    mlp_hidden = synth_width * synth_width
    proj = (c + synth_width) * 3 if (synth_layers or synth_width) else 0
    synth = conv + mlp_in + mlp_hidden + proj

    mlp1 = (aru_hidden + 3) * aru_hidden + aru_hidden * aru_hidden + aru_hidden * 2
    vec = 0.0
    for i in range(vec_levels):
        lvl_px = ext[i][0] * ext[i][1]
        if i > 0:
            vec += ((aru_pass1_kernel / 2.0) ** 2 * 3 * aru_hidden + mlp1) * lvl_px
        vec += (aru_pass2_kernel ** 2 * 3 * aru_hidden + mlp1) * lvl_px
    vec /= npx

    per_symbol = (arm_context + 1) * arm_hidden + arm_hidden * arm_hidden + arm_hidden * 2
    serial = per_symbol * sum(eh * ew for eh, ew in ext[vec_levels:]) / npx

    return {
        "upsampler": ups,
        "synthesis": float(synth),
        "synthesis_conv": float(conv),
        "synthesis_mlp_hidden": float(mlp_hidden),
        "entropy_vector": vec,
        "entropy_serial": serial,
        "total": ups + synth + vec + serial,
    }
