"""Self-describing bitstream container.

Fixed-layout little-endian header (magic, geometry, model hyperparameters,
weight-quantization steps, per-level symbol ranges, section lengths) with a
CRC32 over the header bytes, followed by the coded network parameters and
the coded latents. The decoder needs nothing outside these bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

from .errors import HeaderError, TruncatedStream

MAGIC = b"MARM"
VERSION = 1
FAMILY_LAPLACE = 0

_FIXED = struct.Struct("<4sBBHHBBBBBBBBBBBBBBBBII")
_LEVEL = struct.Struct("<hh")
_CRC = struct.Struct("<I")


@dataclass
class Header:
    h: int
    w: int
    levels: int
    arm_levels: int
    channels: int = 1
    family: int = FAMILY_LAPLACE
    aru_hidden: int = 16
    aru_pass1_kernel: int = 4
    aru_pass2_kernel: int = 3
    arm_context: int = 12
    arm_hidden: int = 12
    synth_layers: int = 3
    synth_kernel: int = 7
    synth_width: int = 12
    ups_kernel: int = 8
    step_exponents: tuple = (7, 7, 7)  # entropy, upsampler, synthesis
    level_ranges: list = field(default_factory=list)  # per level (kmin, kmax)
    params_len: int = 0
    latents_len: int = 0

    def validate(self):
        ok = (
            1 <= self.h <= 0xFFFF and 1 <= self.w <= 0xFFFF
            and 1 <= self.levels <= 12
            and 0 <= self.arm_levels <= self.levels
            and self.channels == 1
            and self.family == FAMILY_LAPLACE
            and 1 <= self.aru_hidden <= 128 and 1 <= self.arm_hidden <= 128
            and self.aru_pass1_kernel in (2, 4, 6, 8)
            and self.aru_pass2_kernel % 2 == 1 and 1 <= self.aru_pass2_kernel <= 9
            and 1 <= self.arm_context <= 12
            and 0 <= self.synth_layers <= 8
            and self.synth_kernel % 2 == 1 and 1 <= self.synth_kernel <= 9
            and 1 <= self.synth_width <= 128
            and self.ups_kernel in (2, 4, 6, 8)
            and len(self.step_exponents) == 3
            and all(4 <= e <= 9 for e in self.step_exponents)
            and len(self.level_ranges) == self.levels
            and all(lo <= hi for lo, hi in self.level_ranges)
            and all(-2048 <= lo and hi <= 2047 for lo, hi in self.level_ranges)
        )
        if not ok:
            raise HeaderError("header fields out of range")

    def packed_size(self):
        return _FIXED.size + self.levels * _LEVEL.size + _CRC.size

    def pack(self):
        self.validate()
        body = _FIXED.pack(
            MAGIC, VERSION, 0, self.h, self.w, self.levels, self.arm_levels,
            self.channels, self.family, self.aru_hidden, self.aru_pass1_kernel,
            self.aru_pass2_kernel, self.arm_context, self.arm_hidden,
            self.synth_layers, self.synth_kernel, self.synth_width,
            self.ups_kernel, *self.step_exponents,
            self.params_len, self.latents_len,
        )
        for lo, hi in self.level_ranges:
            body += _LEVEL.pack(lo, hi)
        return body + _CRC.pack(zlib.crc32(body))


def parse_header(data):
    """Parse and verify the header; returns (Header, header_size)."""
    if len(data) < _FIXED.size:
        raise TruncatedStream("stream shorter than a minimal header")
    (magic, version, _flags, h, w, levels, arm_levels, channels, family,
     aru_hidden, k1, k2, arm_ctx, arm_hidden, s_layers, s_kernel, s_width,
     ups_k, e0, e1, e2, params_len, latents_len) = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise HeaderError("bad magic")
    if version != VERSION:
        raise HeaderError(f"unsupported version {version}")
    if not 1 <= levels <= 12:
        raise HeaderError("level count out of range")
    size = _FIXED.size + levels * _LEVEL.size + _CRC.size
    if len(data) < size:
        raise TruncatedStream("header truncated")
    ranges = [
        _LEVEL.unpack_from(data, _FIXED.size + i * _LEVEL.size)
        for i in range(levels)
    ]
    (crc,) = _CRC.unpack_from(data, size - _CRC.size)
    if zlib.crc32(data[:size - _CRC.size]) != crc:
        raise HeaderError("header checksum mismatch")
    hdr = Header(
        h=h, w=w, levels=levels, arm_levels=arm_levels, channels=channels,
        family=family, aru_hidden=aru_hidden, aru_pass1_kernel=k1,
        aru_pass2_kernel=k2, arm_context=arm_ctx, arm_hidden=arm_hidden,
        synth_layers=s_layers, synth_kernel=s_kernel, synth_width=s_width,
        ups_kernel=ups_k, step_exponents=(e0, e1, e2),
        level_ranges=[tuple(r) for r in ranges],
        params_len=params_len, latents_len=latents_len,
    )
    try:
        hdr.validate()
    except HeaderError:
        raise
    return hdr, size


def write_bitstream(header, params_bytes, latents_bytes):
    header.params_len = len(params_bytes)
    header.latents_len = len(latents_bytes)
    return header.pack() + params_bytes + latents_bytes


def read_bitstream(data):
    """Split a stream into (header, params bytes, latents bytes)."""
    hdr, hsize = parse_header(data)
    expected = hsize + hdr.params_len + hdr.latents_len
    if len(data) < expected:
        raise TruncatedStream(
            f"stream holds {len(data)} bytes, header declares {expected}"
        )
    if len(data) > expected:
        raise HeaderError("trailing bytes after the declared sections")
    params = data[hsize:hsize + hdr.params_len]
    latents = data[hsize + hdr.params_len:expected]
    return hdr, params, latents
