"""Transmit chain: bits, Gray M-PAM mapping, ISI channel with AWGN, framing.

Signals are zero outside the block ``0..Q-1``. The channel output is the
causal convolution of the symbols with the taps, truncated to ``Q`` samples,
plus white real Gaussian noise.

Most functions accept a single block (1-D) or a stack of independent blocks
(2-D, one block per row) so that Monte-Carlo code can vectorize over blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

CHANNEL_PRESETS = {
    "h_A": (0.135, 0.450, 0.750, 0.450, 0.135),
    "h_B": (0.877, 0.438, 0.168, 0.084, 0.059),
    "awgn": (1.0,),
}


@dataclass(frozen=True)
class ChannelModel:
    """Known real ISI channel ``z_n = sum_i h_i x_{n-i} + w_n``.

    ``noise_variance == 0`` is accepted and means a noiseless channel.
    """

    taps: np.ndarray
    noise_variance: float
    name: str = "custom"

    def __post_init__(self):
        taps = np.atleast_1d(np.asarray(self.taps, dtype=float))
        if taps.ndim != 1 or taps.size == 0:
            raise ValueError("channel taps must be a nonempty 1-D vector")
        if taps[0] == 0:
            raise ValueError("leading channel tap h_0 must be nonzero")
        if not np.isfinite(self.noise_variance) or self.noise_variance < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.noise_variance}")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def memory(self) -> int:
        return self.taps.size - 1

    @property
    def energy(self) -> float:
        return float(np.dot(self.taps, self.taps))

    def with_noise(self, noise_variance: float) -> "ChannelModel":
        return ChannelModel(self.taps, noise_variance, self.name)

    @classmethod
    def preset(cls, name: str, noise_variance: float = 1.0) -> "ChannelModel":
        try:
            taps = CHANNEL_PRESETS[name]
        except KeyError:
            raise KeyError(
                f"unknown channel preset {name!r}; known: {sorted(CHANNEL_PRESETS)}"
            ) from None
        return cls(np.array(taps), noise_variance, name)


def _gray_labels(order: int) -> np.ndarray:
    q = order.bit_length() - 1
    if order == 2:
        # bit 0 on the positive level so LLR(c) and LLR(x) share a sign
        return np.array([[1], [0]], dtype=np.int8)
    gray = np.arange(order) ^ (np.arange(order) >> 1)
    shifts = np.arange(q - 1, -1, -1)
    return ((gray[:, None] >> shifts) & 1).astype(np.int8)


@dataclass(frozen=True)
class PamConstellation:
    """Unit-energy Gray-labelled M-PAM.

    ``levels`` are sorted ascending; ``bit_labels[i]`` is the q-bit label
    (MSB first) of ``levels[i]``.
    """

    order: int
    levels: np.ndarray = field(init=False, repr=False)
    bit_labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = int(self.order)
        if m < 2 or m & (m - 1):
            raise ValueError(f"PAM order must be a power of two >= 2, got {self.order}")
        amps = np.arange(-(m - 1), m, 2, dtype=float)
        levels = amps / np.sqrt(np.mean(amps**2))
        labels = _gray_labels(m)
        levels.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "order", m)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "bit_labels", labels)

    @property
    def bits_per_symbol(self) -> int:
        return self.order.bit_length() - 1

    @property
    def label_values(self) -> np.ndarray:
        """Integer value of each level's label (MSB first)."""
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return self.bit_labels.astype(np.int64) @ weights

    def symbol_indices(self, bits: np.ndarray) -> np.ndarray:
        """Level indices for a bit array whose last axis is a multiple of q."""
        bits = np.asarray(bits)
        q = self.bits_per_symbol
        if bits.shape[-1] % q:
            raise ValueError(
                f"bit count {bits.shape[-1]} is not divisible by q={q} for {self.order}-PAM"
            )
        groups = bits.reshape(*bits.shape[:-1], -1, q).astype(np.int64)
        values = groups @ (1 << np.arange(q - 1, -1, -1))
        lookup = np.empty(self.order, dtype=np.int64)
        lookup[self.label_values] = np.arange(self.order)
        return lookup[values]

    def bits_of(self, indices: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`symbol_indices`: label bits, flattened per block."""
        indices = np.asarray(indices)
        bits = self.bit_labels[indices]
        return bits.reshape(*indices.shape[:-1], -1)

    def nearest(self, values: np.ndarray) -> np.ndarray:
        """Index of the closest level (hard decision)."""
        values = np.asarray(values, dtype=float)
        edges = 0.5 * (self.levels[1:] + self.levels[:-1])
        return np.searchsorted(edges, values)


@dataclass(frozen=True)
class ObservationFrame:
    """Window ``[z_{n-N2}, ..., z_n, ..., z_{n+N1}]``; the center sits at index ``n2``."""

    samples: np.ndarray
    n1: int
    n2: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.shape[-1] != self.n1 + self.n2 + 1:
            raise ValueError(
                f"frame length {samples.shape[-1]} != n1+n2+1 = {self.n1 + self.n2 + 1}"
            )
        object.__setattr__(self, "samples", samples)

    @property
    def length(self) -> int:
        return self.n1 + self.n2 + 1

    @property
    def center(self) -> float:
        return float(self.samples[self.n2])

    def __neg__(self) -> "ObservationFrame":
        return ObservationFrame(-self.samples, self.n1, self.n2)


@dataclass(frozen=True)
class SymbolBlock:
    symbols: np.ndarray
    source_bits: np.ndarray
    indices: np.ndarray | None = None


def random_bits(count: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2, size=count, dtype=np.int8)


def gray_map(bits, constellation: PamConstellation) -> SymbolBlock:
    """Map bits (last axis) to Gray-labelled PAM symbols."""
    bits = np.asarray(bits, dtype=np.int8)
    idx = constellation.symbol_indices(bits)
    return SymbolBlock(constellation.levels[idx], bits, idx)


def noiseless_output(symbols, taps) -> np.ndarray:
    """Convolution of symbols with taps, truncated to the block (last axis)."""
    return lfilter(np.asarray(taps, dtype=float), [1.0], np.asarray(symbols, dtype=float), axis=-1)


def apply_channel(block, channel: ChannelModel, seed) -> np.ndarray:
    """Pass symbols through the ISI channel and add seeded Gaussian noise.

    ``block`` may be a :class:`SymbolBlock` or a raw symbol array.
    """
    x = block.symbols if isinstance(block, SymbolBlock) else np.asarray(block, dtype=float)
    if x.size == 0:
        raise ValueError("cannot transmit an empty block")
    z = noiseless_output(x, channel.taps)
    if channel.noise_variance > 0:
        rng = np.random.default_rng(seed)
        z = z + np.sqrt(channel.noise_variance) * rng.standard_normal(z.shape)
    return z


def ebn0_to_noise_variance(ebn0_db: float, constellation: PamConstellation, code_rate: float = 1.0) -> float:
    """Per-dimension noise variance for unit-energy real PAM at a given Eb/N0."""
    if not 0 < code_rate <= 1:
        raise ValueError(f"code rate must lie in (0, 1], got {code_rate}")
    ebn0 = 10.0 ** (ebn0_db / 10.0)
    return 1.0 / (2.0 * code_rate * constellation.bits_per_symbol * ebn0)


def extract_frame(z, n: int, n1: int, n2: int) -> ObservationFrame:
    z = np.asarray(z, dtype=float)
    if not 0 <= n < z.size:
        raise IndexError(f"frame center {n} outside block of length {z.size}")
    out = np.zeros(n1 + n2 + 1)
    lo, hi = max(n - n2, 0), min(n + n1, z.size - 1)
    out[lo - (n - n2): hi - (n - n2) + 1] = z[lo: hi + 1]
    return ObservationFrame(out, n1, n2)


def frame_matrix(z, n1: int, n2: int) -> np.ndarray:
    """All frames of a block at once: shape ``(..., Q, n1+n2+1)``, zero-filled at edges."""
    z = np.asarray(z, dtype=float)
    pad = [(0, 0)] * (z.ndim - 1) + [(n2, n1)]
    zp = np.pad(z, pad)
    return np.lib.stride_tricks.sliding_window_view(zp, n1 + n2 + 1, axis=-1)
