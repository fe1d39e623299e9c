"""Latent pyramid: geometry, quantizers, checkerboard split, encodings.

A pyramid holds L single-channel grids whose extents halve (ceil) from the
image down; level L-1 matches the image. Values are trained as reals and
coded as integers clipped to LATENT_MIN..LATENT_MAX.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation

LATENT_MIN = -128
LATENT_MAX = 127


def level_extents(h, w, levels):
    """Extents per level: level i is ceil(size / 2**(levels-1-i))."""
    if levels < 1:
        raise ContractViolation("a pyramid needs at least one level")
    if h < 1 or w < 1:
        raise ContractViolation("image extents must be positive")
    return [
        (-(-h // (1 << (levels - 1 - i))), -(-w // (1 << (levels - 1 - i))))
        for i in range(levels)
    ]


def total_symbols(extents, channels=1):
    """Number of coded latent symbols for a pyramid geometry."""
    return channels * sum(h * w for h, w in extents)


@dataclass
class RealLatentPyramid:
    """Trainable real-valued twin of the coded pyramid."""

    extents: list
    levels: list  # Parameter per level, shape (1, h, w)

    @property
    def n_levels(self):
        return len(self.levels)


def init_pyramid(h, w, levels, channels=1):
    if channels != 1:
        raise ContractViolation("only single-channel latent levels are supported")
    ext = level_extents(h, w, levels)
    params = [
        ad.Parameter(np.zeros((1, lh, lw), dtype=ad.dtype()), group="latent")
        for lh, lw in ext
    ]
    return RealLatentPyramid(extents=ext, levels=params)


def quantize_uniform(y):
    """Round half away from zero; rejects non-finite input."""
    arr = np.asarray(y)
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("cannot quantize non-finite values")
    out = ad.np_round_half_away(arr)
    if np.isscalar(y) or arr.ndim == 0:
        return int(out)
    return out.astype(np.int32)


def relax_noise(y, rng):
    """Additive U(-0.5, 0.5) relaxation; gradient of the output w.r.t. y is 1."""
    y = ad.as_tensor(y)
    noise = rng.uniform(-0.5, 0.5, size=y.data.shape).astype(y.data.dtype)
    return ad.add(y, ad.constant(noise))


def relax_ste(y):
    """Straight-through rounding: forward quantizes, backward passes through."""
    return ad.round_ste(y)


def positional_encoding(h, w):
    """Mesh-grid encoding, channel 0 rows, channel 1 cols, both in [-0.5, 0.5)."""
    rows = (np.arange(h, dtype=ad.dtype()) / h - 0.5)[:, None]
    cols = (np.arange(w, dtype=ad.dtype()) / w - 0.5)[None, :]
    pe = np.empty((2, h, w), dtype=ad.dtype())
    pe[0] = np.broadcast_to(rows, (h, w))
    pe[1] = np.broadcast_to(cols, (h, w))
    return pe


def level_encoding(i, levels):
    if not 0 <= i < levels:
        raise ContractViolation("level index out of range")
    return 2.0 * i / levels


@lru_cache(maxsize=256)
def anchor_mask(h, w):
    """Checkerboard anchors: (row + col) even. Cached per extent."""
    r = np.arange(h)[:, None]
    c = np.arange(w)[None, :]
    m = ((r + c) % 2 == 0)
    m.flags.writeable = False
    return m


def checkerboard_split(grid):
    """Split a 2-D grid into raster-ordered (anchors, non_anchors) values."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ContractViolation("checkerboard split expects a 2-D grid")
    m = anchor_mask(*grid.shape)
    return grid[m], grid[~m]


def checkerboard_merge(anchors, non_anchors, shape):
    m = anchor_mask(*shape)
    anchors = np.asarray(anchors)
    non_anchors = np.asarray(non_anchors)
    if anchors.size != int(m.sum()) or non_anchors.size != int((~m).sum()):
        raise ContractViolation("checkerboard halves do not match the grid extents")
    out = np.empty(shape, dtype=anchors.dtype)
    out[m] = anchors
    out[~m] = non_anchors
    return out


def merge_grids(anchor_src, non_src):
    """Take anchor cells from the first grid, non-anchor cells from the second."""
    a = np.asarray(anchor_src)
    b = np.asarray(non_src)
    if a.shape != b.shape:
        raise ContractViolation("merge expects matching extents")
    m = anchor_mask(*a.shape[-2:])
    return np.where(m, a, b)
