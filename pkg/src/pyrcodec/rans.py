"""64-bit rANS over 16-bit quantized CDFs, byte-aligned output.

The encoder buffers (start, freq) pairs in FIFO order and runs the actual
state machine in reverse at finish(), so the decoder consumes the stream
front to back in the same FIFO order the caller used. State renormalizes
in 32-bit words; the final 64-bit state is flushed at the stream head.
"""

from __future__ import annotations

import numpy as np

from .errors import BitstreamError, ContractViolation, TruncatedStream

PRECISION = 16
TOTAL = 1 << PRECISION
RANS_L = 1 << 31
_MASK32 = (1 << 32) - 1
MAX_ALPHABET = 1 << 15


def quantize_freqs(pmf):
    """Integer frequencies summing to 2^16 with every symbol >= 1.

    ``pmf`` is (N, A) float64, one model per row. Ideal shares are rounded
    half-even, then deterministically repaired largest-remainder style
    (index tie-break) until each row sums to TOTAL. Rows with no mass fall
    back to uniform.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim == 1:
        pmf = pmf[None, :]
    n, a = pmf.shape
    if a < 1 or a > MAX_ALPHABET:
        raise ContractViolation(f"alphabet size {a} out of range")
    mass = pmf.sum(axis=1, keepdims=True)
    dead = ~np.isfinite(mass[:, 0]) | (mass[:, 0] <= 0)
    if dead.any():
        pmf = pmf.copy()
        pmf[dead] = 1.0
        mass = pmf.sum(axis=1, keepdims=True)
    ideal = pmf * (TOTAL / mass)
    f = np.rint(ideal).astype(np.int64)
    np.maximum(f, 1, out=f)
    diff = TOTAL - f.sum(axis=1)

    inc = diff > 0
    if inc.any():
        r = ideal - f
        order = np.argsort(-r, axis=1, kind="stable")
        rows = np.nonzero(inc)[0]
        take = (np.arange(a)[None, :] < diff[rows, None]).astype(np.int64)
        upd = np.zeros((rows.size, a), dtype=np.int64)
        np.put_along_axis(upd, order[rows], take, axis=1)
        f[rows] += upd
        diff = TOTAL - f.sum(axis=1)

    while (diff < 0).any():
        rows = np.nonzero(diff < 0)[0]
        r = ideal[rows] - f[rows]
        eligible = f[rows] > 1
        keys = np.where(eligible, r, np.inf)
        order = np.argsort(keys, axis=1, kind="stable")
        room = eligible.sum(axis=1)
        k = np.minimum(-diff[rows], room)
        take = (np.arange(a)[None, :] < k[:, None]).astype(np.int64)
        upd = np.zeros((rows.size, a), dtype=np.int64)
        np.put_along_axis(upd, order, take, axis=1)
        f[rows] -= upd
        diff = TOTAL - f.sum(axis=1)

    return f.astype(np.uint32)


def freqs_to_cdf(freqs):
    """(N, A) frequencies -> (N, A+1) cumulative table starting at 0."""
    freqs = np.asarray(freqs, dtype=np.uint32)
    if freqs.ndim == 1:
        freqs = freqs[None, :]
    n, a = freqs.shape
    cdf = np.zeros((n, a + 1), dtype=np.uint32)
    np.cumsum(freqs, axis=1, out=cdf[:, 1:], dtype=np.uint32)
    return cdf


def quantize_cdf(mu, sigma, kmin, kmax):
    """CDF table for a discretized-Laplace model over [kmin, kmax]."""
    from .laplace import laplace_pmf

    if kmax < kmin:
        raise ContractViolation("empty symbol range")
    ks = np.arange(kmin, kmax + 1, dtype=np.float64)
    pmf = laplace_pmf(ks, float(mu), float(sigma))
    return freqs_to_cdf(quantize_freqs(pmf[None, :]))[0]


def quantize_cdf_batch(mu, sigma, kmin, kmax):
    """Vectorized quantize_cdf over per-pixel (mu, sigma) vectors."""
    from .laplace import laplace_pmf

    if kmax < kmin:
        raise ContractViolation("empty symbol range")
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 1)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1, 1)
    ks = np.arange(kmin, kmax + 1, dtype=np.float64)[None, :]
    pmf = laplace_pmf(ks, mu, sigma)
    return freqs_to_cdf(quantize_freqs(pmf))


class RansEncoder:
    """Buffered FIFO encoder: append (start, freq) pairs, then finish()."""

    def __init__(self):
        self._pairs = []

    def append(self, start, freq):
        if freq <= 0 or freq > TOTAL or start < 0 or start + freq > TOTAL:
            raise ContractViolation("rANS pair outside the 16-bit total")
        self._pairs.append((int(start), int(freq)))

    def append_symbol(self, cdf, index):
        start = int(cdf[index])
        self.append(start, int(cdf[index + 1]) - start)

    def __len__(self):
        return len(self._pairs)

    def finish(self):
        x = RANS_L
        words = []
        for start, freq in reversed(self._pairs):
            if x >= (freq << 47):
                words.append(x & _MASK32)
                x >>= 32
            x = ((x // freq) << PRECISION) + (x % freq) + start
        out = bytearray(x.to_bytes(8, "little"))
        for wrd in reversed(words):
            out += wrd.to_bytes(4, "little")
        return bytes(out)


class RansDecoder:
    """Streaming decoder over a finished byte string."""

    def __init__(self, data):
        if len(data) < 8:
            raise TruncatedStream("rANS stream shorter than its state flush")
        self._data = data
        self._pos = 8
        self._x = int.from_bytes(data[:8], "little")
        if self._x < RANS_L:
            raise BitstreamError("rANS initial state underflows")

    @property
    def consumed(self):
        return self._pos

    def decode_symbol(self, cdf):
        """Decode one symbol index under a (A+1,) cumulative table."""
        x = self._x
        cf = x & (TOTAL - 1)
        s = int(np.searchsorted(cdf, cf, side="right")) - 1
        start = int(cdf[s])
        freq = int(cdf[s + 1]) - start
        if freq <= 0:
            raise BitstreamError("degenerate model row")
        x = freq * (x >> PRECISION) + cf - start
        if x < RANS_L:
            if self._pos + 4 > len(self._data):
                raise TruncatedStream("rANS stream exhausted mid-symbol")
            x = (x << 32) | int.from_bytes(self._data[self._pos:self._pos + 4], "little")
            self._pos += 4
        self._x = x
        return s


def rans_encode(pairs):
    """Encode an iterable of (start, freq) pairs; FIFO order contract."""
    enc = RansEncoder()
    for start, freq in pairs:
        enc.append(start, freq)
    return enc.finish()


def rans_decode(data, cdfs):
    """Decode one symbol index per model table, in FIFO order."""
    dec = RansDecoder(data)
    return [dec.decode_symbol(c) for c in cdfs]
