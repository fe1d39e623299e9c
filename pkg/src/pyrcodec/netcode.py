"""Lossless coding of quantized network weights.

Each parameter group is quantized to a uniform step from STEP_CANDIDATES,
mapped to integers, and coded with one zero-mean Laplace model fitted to
the group's empirical scale. Decoding reproduces the quantized weights
exactly, so encoder and decoder run identical networks.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation, TruncatedStream
from .laplace import laplace_pmf
from .rans import RansDecoder, RansEncoder, freqs_to_cdf, quantize_freqs

STEP_EXPONENTS = (4, 5, 6, 7, 8, 9)  # step = 2**-e
WEIGHT_CLAMP = 32.0  # safety net; trained weights stay far inside

_SUBHEADER = struct.Struct("<BfiiI")  # step_exp, scale, kmin, kmax, n_bytes


def step_from_exp(e):
    if e not in STEP_EXPONENTS:
        raise ContractViolation(f"step exponent {e} outside the candidate set")
    return 2.0 ** -e


def quantize_ints(flat, step):
    """Integer grid indices for a flat weight vector."""
    w = np.clip(np.asarray(flat, dtype=np.float64), -WEIGHT_CLAMP, WEIGHT_CLAMP)
    return ad.np_round_half_away(w / step).astype(np.int32)


def dequantize(k, step):
    """Shared by encoder and decoder so both sides hold identical weights."""
    return (np.asarray(k, dtype=ad.dtype()) * ad.dtype().type(step)).astype(ad.dtype())


def _group_cdf(kmin, kmax, scale):
    ks = np.arange(kmin, kmax + 1, dtype=np.float64)
    # scale is the Laplace b parameter; sigma = b * sqrt(2)
    pmf = laplace_pmf(ks, 0.0, scale * math.sqrt(2.0))
    return freqs_to_cdf(quantize_freqs(pmf[None, :]))[0]


def code_group(k):
    """Encode one group's integers; returns the self-contained section bytes."""
    k = np.asarray(k, dtype=np.int32)
    if k.size == 0:
        kmin, kmax, scale = 0, 0, 1.0
        payload = RansEncoder().finish()
    else:
        kmin, kmax = int(k.min()), int(k.max())
        scale = float(np.float32(max(np.abs(k).mean(), 0.05)))
        cdf = _group_cdf(kmin, kmax, scale)
        enc = RansEncoder()
        for s in (k - kmin).tolist():
            enc.append_symbol(cdf, s)
        payload = enc.finish()
    return _SUBHEADER.pack(0, scale, kmin, kmax, len(payload)) + payload


def decode_group(data, offset, count):
    """Inverse of code_group; returns (k int32, bytes consumed)."""
    if offset + _SUBHEADER.size > len(data):
        raise TruncatedStream("parameter group subheader truncated")
    _, scale, kmin, kmax, n = _SUBHEADER.unpack_from(data, offset)
    offset += _SUBHEADER.size
    if kmax < kmin or not math.isfinite(scale) or scale <= 0:
        raise TruncatedStream("parameter group subheader is inconsistent")
    if kmax - kmin + 1 > (1 << 15):
        raise TruncatedStream("parameter alphabet implausibly wide")
    if offset + n > len(data):
        raise TruncatedStream("parameter group payload truncated")
    payload = data[offset:offset + n]
    if count == 0:
        return np.zeros(0, dtype=np.int32), _SUBHEADER.size + n
    cdf = _group_cdf(kmin, kmax, scale)
    dec = RansDecoder(payload)
    k = np.empty(count, dtype=np.int32)
    for i in range(count):
        k[i] = dec.decode_symbol(cdf) + kmin
    return k, _SUBHEADER.size + n


def group_flat(params):
    """Deterministic flat view of a parameter list."""
    if not params:
        return np.zeros(0, dtype=ad.dtype())
    return np.concatenate([p.data.ravel() for p in params])


def set_group_flat(params, flat):
    flat = np.asarray(flat, dtype=ad.dtype())
    n = sum(p.data.size for p in params)
    if flat.size != n:
        raise ContractViolation("flat weight vector does not match the group")
    pos = 0
    for p in params:
        sz = p.data.size
        p.data = flat[pos:pos + sz].reshape(p.data.shape)
        pos += sz


def code_network_params(groups, steps):
    """groups: ordered {name: flat float array}; steps: {name: exponent}.

    Returns the concatenated params section.
    """
    out = bytearray()
    for name, flat in groups.items():
        k = quantize_ints(flat, step_from_exp(steps[name]))
        out += code_group(k)
    return bytes(out)


def decode_network_params(data, counts, steps):
    """Inverse of code_network_params given per-group counts and steps."""
    offset = 0
    out = {}
    for name, count in counts.items():
        k, used = decode_group(data, offset, count)
        offset += used
        out[name] = dequantize(k, step_from_exp(steps[name]))
    if offset != len(data):
        raise TruncatedStream("params section has trailing bytes")
    return out
