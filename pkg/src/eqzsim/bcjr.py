"""Full-state BCJR (MAP) equalization on the channel trellis.

A state holds the previous ``M_h`` symbol indices with ``x_{n-1}`` as the
least significant base-``|B|`` digit, so input ``a`` moves state ``s`` to
``(s * |B| + a) mod |B|**M_h``.

Block mode knows that symbols before the block are zero. Zero is not a
constellation level, so it is handled by starting from a uniform state
distribution and dropping the taps that reach before the block during the
first ``M_h`` steps: the state digits are then dummies that never touch a
likelihood and marginalize out exactly.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .txchain import (
    ChannelModel,
    PamConstellation,
    apply_channel,
    ebn0_to_noise_variance,
    gray_map,
    random_bits,
)

LLR_CLAMP = 40.0
DEFAULT_STATE_BUDGET = 4**8


@dataclass(frozen=True)
class TrellisSpec:
    levels: np.ndarray
    taps: np.ndarray
    memory: int
    state_count: int
    next_state: np.ndarray  # (S, A)
    outputs: np.ndarray  # (S, A) noiseless outputs
    head_outputs: np.ndarray  # (M_h, S, A) outputs at block start, pre-block taps dropped
    incoming_state: np.ndarray = field(repr=False)  # (S, A) predecessor states
    incoming_symbol: np.ndarray = field(repr=False)  # (S, A) matching inputs

    @property
    def alphabet_size(self) -> int:
        return self.levels.size

    def state_symbols(self) -> np.ndarray:
        """``(S, M_h)`` level indices; column ``i-1`` holds ``x_{n-i}``."""
        a = self.alphabet_size
        s = np.arange(self.state_count)
        return (s[:, None] // a ** np.arange(self.memory)) % a


@dataclass(frozen=True)
class LlrSequence:
    values: np.ndarray
    clamp_magnitude: float = LLR_CLAMP


def build_trellis(channel: ChannelModel, constellation: PamConstellation,
                  state_budget: int = DEFAULT_STATE_BUDGET) -> TrellisSpec:
    a = constellation.order
    mh = channel.memory
    states = a**mh
    if states > state_budget:
        raise ValueError(
            f"trellis needs {states} states ({a}^{mh}), above the budget of {state_budget}"
        )
    levels = constellation.levels
    taps = channel.taps
    s_idx = np.arange(states)
    past = (s_idx[:, None] // a ** np.arange(mh)) % a
    past_vals = levels[past]  # (S, M_h)
    isi = past_vals @ taps[1:] if mh else np.zeros(states)
    outputs = taps[0] * levels[None, :] + isi[:, None]
    head = np.empty((mh, states, a))
    for t in range(mh):
        partial = past_vals[:, :t] @ taps[1: t + 1] if t else np.zeros(states)
        head[t] = taps[0] * levels[None, :] + partial[:, None]
    nxt = (s_idx[:, None] * a + np.arange(a)[None, :]) % states

    inc_state = np.empty((states, a), dtype=np.int64)
    inc_sym = np.empty((states, a), dtype=np.int64)
    fill = np.zeros(states, dtype=np.int64)
    for s in range(states):
        for sym in range(a):
            d = nxt[s, sym]
            inc_state[d, fill[d]] = s
            inc_sym[d, fill[d]] = sym
            fill[d] += 1
    for arr in (outputs, head, nxt, inc_state, inc_sym):
        arr.setflags(write=False)
    return TrellisSpec(levels, taps, mh, states, nxt, outputs, head, inc_state, inc_sym)


def _lse(a, axis=-1):
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.squeeze(mx, axis) + np.log(np.sum(np.exp(a - mx), axis=axis))


def bit_priors_to_symbol_logprior(bit_llrs, constellation: PamConstellation) -> np.ndarray:
    """Per-symbol log priors ``(..., Q, M)`` from per-bit LLRs ``(..., Q*q)``."""
    q = constellation.bits_per_symbol
    L = np.asarray(bit_llrs, dtype=float)
    L = L.reshape(*L.shape[:-1], -1, q)
    sign = 1.0 - 2.0 * constellation.bit_labels  # +1 where the label bit is 0
    x = L[..., None, :] * sign  # (..., Q, M, q)
    return -np.logaddexp(0.0, -x).sum(axis=-1)


def symbol_logpost_to_bit_llrs(logpost, constellation: PamConstellation) -> np.ndarray:
    labels = constellation.bit_labels
    q = constellation.bits_per_symbol
    out = np.empty(logpost.shape[:-1] + (q,))
    for m in range(q):
        zero = labels[:, m] == 0
        out[..., m] = _lse(logpost[..., zero]) - _lse(logpost[..., ~zero])
    return out.reshape(*logpost.shape[:-2], -1)


def forward_backward(z, trellis: TrellisSpec, noise_variance: float, *,
                     log_prior=None, zero_start=True, observed=None) -> np.ndarray:
    """Batched log-domain forward-backward.

    Parameters
    ----------
    z : ndarray, shape (B, T)
        Independent observation sequences.
    log_prior : ndarray, shape (B, T, A), optional
        Symbol log priors.
    zero_start : bool or ndarray of bool, shape (B,)
        Rows whose sequence starts at the block origin (zero symbols before).
    observed : ndarray of bool, shape (B, T), optional
        Steps whose observation is used; unobserved steps carry no likelihood.

    Returns
    -------
    ndarray, shape (B, T, A)
        Normalized symbol log posteriors.
    """
    if noise_variance <= 0:
        raise ValueError("BCJR needs a positive noise variance")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    B, T = z.shape
    S, A = trellis.state_count, trellis.alphabet_size
    zero_start = np.broadcast_to(np.asarray(zero_start, dtype=bool), (B,))
    inv2s = 1.0 / (2.0 * noise_variance)

    def gamma(t):
        out = trellis.outputs
        if t < trellis.memory and zero_start.any():
            out = np.where(zero_start[:, None, None], trellis.head_outputs[t][None], out[None])
        g = -((z[:, t, None, None] - out) ** 2) * inv2s
        if g.ndim == 2:
            g = np.broadcast_to(g, (B, S, A))
        if observed is not None:
            g = g * observed[:, t, None, None]
        if log_prior is not None:
            g = g + log_prior[:, t, None, :]
        return g

    nxt = trellis.next_state
    inc_s, inc_a = trellis.incoming_state, trellis.incoming_symbol
    alphas = np.empty((T, B, S))
    alpha = np.full((B, S), -np.log(S))
    for t in range(T):
        alphas[t] = alpha
        m = alpha[:, :, None] + gamma(t)
        alpha = _lse(m[:, inc_s, inc_a])
        alpha -= alpha.max(axis=1, keepdims=True)

    logpost = np.empty((B, T, A))
    beta = np.zeros((B, S))
    for t in range(T - 1, -1, -1):
        g = gamma(t) + beta[:, nxt]
        lp = _lse(alphas[t][:, :, None] + g, axis=1)
        logpost[:, t] = lp - _lse(lp)[:, None]
        beta = _lse(g)
        beta -= beta.max(axis=1, keepdims=True)
    return logpost


def map_equalize(z, trellis: TrellisSpec, noise_variance: float, priors=None,
                 constellation: PamConstellation | None = None):
    """Block MAP equalization.

    ``z`` is one block ``(Q,)`` or a stack ``(B, Q)``; ``priors`` are per-bit
    LLRs of length ``Q*q`` per block. Returns symbol posteriors ``(..., Q, M)``
    and clamped per-bit a-posteriori LLRs ``(..., Q*q)``.
    """
    const = constellation or _constellation_for(trellis)
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = np.atleast_2d(z)
    lp = None
    if priors is not None:
        pr = np.atleast_2d(np.asarray(priors, dtype=float))
        if pr.shape[-1] != zz.shape[-1] * const.bits_per_symbol:
            raise ValueError(
                f"prior length {pr.shape[-1]} != Q*q = {zz.shape[-1] * const.bits_per_symbol}"
            )
        lp = bit_priors_to_symbol_logprior(pr, const)
    logpost = _chunked(zz, trellis, noise_variance, lp)
    llrs = np.clip(symbol_logpost_to_bit_llrs(logpost, const), -LLR_CLAMP, LLR_CLAMP)
    post = np.exp(logpost)
    if single:
        return post[0], LlrSequence(llrs[0])
    return post, LlrSequence(llrs)


def map_extrinsic(z, trellis: TrellisSpec, noise_variance: float, priors,
                  constellation: PamConstellation | None = None) -> np.ndarray:
    """Per-bit extrinsic LLRs ``L_post - L_prior`` for turbo equalization.

    The subtraction happens before clamping, so a saturated prior does not
    cancel an equally saturated posterior into a spurious zero.
    """
    const = constellation or _constellation_for(trellis)
    zz = np.atleast_2d(np.asarray(z, dtype=float))
    pr = np.broadcast_to(np.asarray(priors, dtype=float), (zz.shape[0], zz.shape[1] * const.bits_per_symbol))
    logpost = _chunked(zz, trellis, noise_variance, bit_priors_to_symbol_logprior(pr, const))
    ext = symbol_logpost_to_bit_llrs(logpost, const) - pr
    return np.clip(ext, -LLR_CLAMP, LLR_CLAMP)


def _chunked(z, trellis, noise_variance, log_prior, budget=2_000_000):
    B, T = z.shape
    rows = max(1, budget // max(1, T * trellis.state_count))
    parts = []
    for lo in range(0, B, rows):
        sl = slice(lo, lo + rows)
        parts.append(
            forward_backward(z[sl], trellis, noise_variance,
                             log_prior=None if log_prior is None else log_prior[sl])
        )
    return np.concatenate(parts, axis=0)


def _constellation_for(trellis: TrellisSpec) -> PamConstellation:
    return PamConstellation(trellis.alphabet_size)


def brute_force_map(z, channel: ChannelModel, constellation: PamConstellation,
                    noise_variance: float, priors=None, budget: int = 2**20) -> np.ndarray:
    """Exact symbol posteriors ``(Q, M)`` by enumerating every symbol sequence."""
    z = np.asarray(z, dtype=float)
    Q, M = z.size, constellation.order
    if M**Q > budget:
        raise ValueError(f"enumeration of {M}^{Q} sequences exceeds budget {budget}")
    seqs = np.array(list(itertools.product(range(M), repeat=Q)), dtype=np.int64).reshape(-1, Q)
    x = constellation.levels[seqs]
    clean = np.array([np.convolve(row, channel.taps)[:Q] for row in x]).reshape(-1, Q)
    score = -((z[None, :] - clean) ** 2).sum(axis=1) / (2.0 * noise_variance)
    if priors is not None:
        lp = bit_priors_to_symbol_logprior(np.asarray(priors, dtype=float), constellation)
        score = score + lp[np.arange(Q)[None, :], seqs].sum(axis=1)
    score -= score.max()
    w = np.exp(score)
    w /= w.sum()
    post = np.zeros((Q, M))
    for n in range(Q):
        post[n] = np.bincount(seqs[:, n], weights=w, minlength=M)
    return post


def windowed_map(z, trellis: TrellisSpec, noise_variance: float, window: int,
                 constellation: PamConstellation | None = None) -> LlrSequence:
    """Sliding-window BCJR: each symbol is decided from the window centred on it.

    Window interiors start from a uniform state distribution. A window that is
    clipped by the block start keeps the known zero-state origin, so a window
    covering the whole block reproduces :func:`map_equalize`.
    """
    if window % 2 == 0 or window < 2 * trellis.memory + 1:
        raise ValueError(
            f"window must be odd and >= 2*M_h+1 = {2 * trellis.memory + 1}, got {window}"
        )
    const = constellation or _constellation_for(trellis)
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = np.atleast_2d(z)
    nb, Q = zz.shape
    half = window // 2
    span = min(window, Q)
    centers = np.arange(Q)
    start = np.minimum(np.maximum(centers - half, 0), Q - 1)
    idx = start[:, None] + np.arange(span)[None, :]
    valid = (idx <= np.minimum(centers + half, Q - 1)[:, None]) & (idx < Q)
    idx = np.minimum(idx, Q - 1)
    pos = centers - start
    zero_start = centers - half <= 0

    out = np.empty((nb, Q, const.bits_per_symbol))
    rows_per_chunk = max(1, 2_000_000 // (span * trellis.state_count))
    for b in range(nb):
        for lo in range(0, Q, rows_per_chunk):
            sl = slice(lo, lo + rows_per_chunk)
            lpost = forward_backward(zz[b][idx[sl]], trellis, noise_variance,
                                     zero_start=zero_start[sl], observed=valid[sl])
            centre = lpost[np.arange(lpost.shape[0]), pos[sl]]
            out[b, sl] = symbol_logpost_to_bit_llrs(centre, const).reshape(-1, const.bits_per_symbol)
    llrs = np.clip(out.reshape(nb, -1), -LLR_CLAMP, LLR_CLAMP)
    return LlrSequence(llrs[0] if single else llrs)


@dataclass
class CalibrationResult:
    window: int
    aligned: bool
    reference_ber: float
    table: list = field(default_factory=list)  # (window, ber) pairs, in probe order


def _bit_errors(llrs, bits) -> int:
    return int(np.count_nonzero((np.asarray(llrs) < 0).astype(np.int8) != bits))


def calibrate_window(channel: ChannelModel, constellation: PamConstellation, snr_db: float,
                     target_ber_ratio: float = 1.05, *, bit_count: int = 100_000,
                     block_length: int = 1000, seed: int = 0, max_window: int = 41,
                     state_budget: int = DEFAULT_STATE_BUDGET) -> CalibrationResult:
    """Smallest odd window whose BER is within ``target_ber_ratio`` of block BCJR.

    ``snr_db`` is the uncoded Eb/N0. All probes share one seeded set of blocks.
    If no probed window aligns, the largest probed window is returned with
    ``aligned=False`` and a warning.
    """
    if target_ber_ratio < 1:
        raise ValueError("target BER ratio must be >= 1")
    q = constellation.bits_per_symbol
    sigma2 = ebn0_to_noise_variance(snr_db, constellation, 1.0)
    ch = channel.with_noise(sigma2)
    trellis = build_trellis(ch, constellation, state_budget)
    block_bits = block_length * q
    n_blocks = max(1, -(-bit_count // block_bits))
    ss = np.random.SeedSequence(seed)
    bits = random_bits(n_blocks * block_bits, ss.spawn(1)[0]).reshape(n_blocks, block_bits)
    z = apply_channel(gray_map(bits, constellation), ch, ss.spawn(1)[0])
    _, ref = map_equalize(z, trellis, sigma2, constellation=constellation)
    total = bits.size
    ref_ber = _bit_errors(ref.values, bits) / total

    table = []
    w = 2 * channel.memory + 1
    while True:
        llrs = windowed_map(z, trellis, sigma2, w, constellation).values
        ber = _bit_errors(llrs, bits) / total
        table.append((w, ber))
        if ber <= target_ber_ratio * ref_ber:
            return CalibrationResult(w, True, ref_ber, table)
        if w + 2 > max_window:
            warnings.warn(
                f"no window up to {w} aligned with block BCJR (BER {ber:.3g} vs {ref_ber:.3g})",
                RuntimeWarning,
                stacklevel=2,
            )
            return CalibrationResult(w, False, ref_ber, table)
        w += 2
