"""Turbo equalization: SISO equalizer and LDPC decoder exchanging extrinsic LLRs.

The default schedule runs an EqzNet (trained without priors) on the first
iteration and an LMMSE equalizer with soft interference cancellation on the
remaining ones. All functions work on a batch of independent codeword blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bcjr import LLR_CLAMP, bit_priors_to_symbol_logprior, build_trellis, map_extrinsic
from .eqznet import EqzNetBank, EqzNetParams, forward
from .ldpc import LdpcCode, decode
from .lmmse import convolution_matrix, center_column_index, gaussian_bit_llrs
from .txchain import ChannelModel, PamConstellation, frame_matrix, noiseless_output

EQUALIZERS = ("eqznet", "lmmse", "bcjr")


@dataclass
class TurboConfig:
    iterations: int = 3
    first_iteration_equalizer: str = "eqznet"
    subsequent_equalizer: str = "lmmse"
    decoder_iterations: int = 20
    interleave: bool = True
    interleaver_seed: int = 0
    stop_on_codeword: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("turbo needs at least one iteration")
        if self.first_iteration_equalizer not in EQUALIZERS:
            raise ValueError(f"unknown first-iteration equalizer {self.first_iteration_equalizer!r}")
        if self.subsequent_equalizer not in ("lmmse", "bcjr"):
            raise ValueError(f"subsequent equalizer must be lmmse or bcjr, got {self.subsequent_equalizer!r}")


@dataclass
class SoftState:
    """LLRs of one turbo iteration, in transmission (interleaved) order."""

    priors: np.ndarray
    equalizer_extrinsic: np.ndarray
    decoder_extrinsic: np.ndarray


@dataclass
class TurboResult:
    codeword_bits: np.ndarray  # (B, n) final hard decisions
    message_bits: np.ndarray  # (B, k)
    iteration_message_bits: list = field(default_factory=list)  # per iteration, (B, k)
    converged: np.ndarray | None = None
    states: list = field(default_factory=list)

    def bit_errors(self, message) -> list:
        """Information-bit errors per iteration."""
        return [int(np.count_nonzero(m != message)) for m in self.iteration_message_bits]


def interleaver(n: int, seed: int) -> np.ndarray:
    """Transmission order: transmitted bit ``i`` is code bit ``perm[i]``."""
    return np.random.default_rng(seed).permutation(n)


def symbol_moments(bit_llrs, constellation: PamConstellation):
    """Soft symbol means and variances from per-bit prior LLRs ``(..., Q*q)``."""
    lp = bit_priors_to_symbol_logprior(bit_llrs, constellation)
    p = np.exp(lp - lp.max(axis=-1, keepdims=True))
    p /= p.sum(axis=-1, keepdims=True)
    mean = p @ constellation.levels
    var = np.maximum(p @ constellation.levels**2 - mean**2, 0.0)
    return mean, var


def lmmse_with_priors(z, channel: ChannelModel, constellation: PamConstellation, prior_llrs,
                      n1: int, n2: int) -> np.ndarray:
    """Extrinsic per-bit LLRs from soft interference cancellation + LMMSE.

    One time-invariant filter per block is designed with the block-average
    residual symbol variance; the symbol being estimated keeps unit variance
    and zero mean, so its own prior never reaches its output.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    B, Q = z.shape
    priors = np.broadcast_to(np.asarray(prior_llrs, dtype=float), (B, Q * constellation.bits_per_symbol))
    mean, var = symbol_moments(priors, constellation)
    vbar = var.mean(axis=1)

    H = convolution_matrix(channel.taps, n1, n2)
    h_n = H[:, center_column_index(channel.memory, n2)]
    HH = H @ H.T
    hh = np.outer(h_n, h_n)
    eye = np.eye(H.shape[0])
    R = (channel.noise_variance * eye)[None] + vbar[:, None, None] * HH[None] + (1.0 - vbar)[:, None, None] * hh[None]
    f = np.linalg.solve(R, np.broadcast_to(h_n, (B, h_n.size))[..., None])[..., 0]  # (B, N)
    gain = f @ h_n  # (B,)

    residual = z - noiseless_output(mean, channel.taps)
    est = np.einsum("bqn,bn->bq", frame_matrix(residual, n1, n2), f)
    valid = frame_matrix(np.ones(Q), n1, n2)  # (Q, N) zero where the frame leaves the block
    est += mean * (valid @ (f * h_n).T).T

    out = np.empty_like(priors)
    for b in range(B):
        out[b] = gaussian_bit_llrs(est[b], gain[b], constellation, priors[b])
    return np.clip(out, -LLR_CLAMP, LLR_CLAMP)


def eqznet_llrs(net, z, n1: int, n2: int) -> np.ndarray:
    """Per-bit LLRs ``(B, Q*q)`` from a single network or a per-bit bank."""
    frames = frame_matrix(np.atleast_2d(z), n1, n2)
    if isinstance(net, EqzNetBank):
        out = net.forward(frames)
        return np.clip(out.reshape(out.shape[0], -1), -LLR_CLAMP, LLR_CLAMP)
    return np.clip(forward(net, frames), -LLR_CLAMP, LLR_CLAMP)


def _equalize(kind, z, channel, constellation, priors, net, n1, n2, trellis):
    if kind == "eqznet":
        return eqznet_llrs(net, z, n1, n2)
    if kind == "lmmse":
        return lmmse_with_priors(z, channel, constellation, priors, n1, n2)
    return map_extrinsic(z, trellis, channel.noise_variance, priors, constellation)


def turbo_equalize(z, code: LdpcCode, channel: ChannelModel, constellation: PamConstellation,
                   eqznet: EqzNetParams | EqzNetBank | None = None,
                   config: TurboConfig | None = None, *, geometry=(7, 7),
                   keep_states: bool = False) -> TurboResult:
    """Run the turbo loop on ``z`` of shape ``(B, n/q)`` (or one block).

    ``channel.noise_variance`` must be the true noise level. Returns final
    hard decisions plus the decoded message after every iteration.
    """
    config = config or TurboConfig()
    z = np.atleast_2d(np.asarray(z, dtype=float))
    q = constellation.bits_per_symbol
    if z.shape[1] * q != code.n:
        raise ValueError(f"{z.shape[1]} symbols x {q} bits != code length {code.n}")
    uses = {config.first_iteration_equalizer} | ({config.subsequent_equalizer} if config.iterations > 1 else set())
    if "eqznet" in uses and eqznet is None:
        raise ValueError("EqzNet schedule requested but no network was supplied")
    n1, n2 = geometry
    trellis = build_trellis(channel, constellation) if "bcjr" in uses else None
    perm = interleaver(code.n, config.interleaver_seed) if config.interleave else np.arange(code.n)

    B = z.shape[0]
    priors = np.zeros((B, code.n))
    hard = np.zeros((B, code.n), dtype=np.int8)
    converged = np.zeros(B, dtype=bool)
    active = np.arange(B)
    result = TurboResult(None, None)
    for it in range(config.iterations):
        kind = config.first_iteration_equalizer if it == 0 else config.subsequent_equalizer
        if active.size:
            le = _equalize(kind, z[active], channel, constellation, priors[active], eqznet, n1, n2, trellis)
            le_code = np.empty_like(le)
            le_code[:, perm] = le
            dec = decode(code, le_code, config.decoder_iterations)
            hard[active] = dec.hard_bits
            new_priors = np.clip(dec.extrinsic[:, perm], -LLR_CLAMP, LLR_CLAMP)
            if keep_states:
                result.states.append(SoftState(priors[active].copy(), le, new_priors))
            priors[active] = new_priors
            converged[active] = dec.converged
            if config.stop_on_codeword:
                active = active[~dec.converged]
        result.iteration_message_bits.append(hard[:, code.info_columns].copy())
    result.codeword_bits = hard
    result.message_bits = hard[:, code.info_columns]
    result.converged = converged
    return result


def transmit_coded(code: LdpcCode, constellation: PamConstellation, channel: ChannelModel,
                   n_blocks: int, seed, *, interleave: bool = True, interleaver_seed: int = 0):
    """Encode random messages, interleave, map and transmit.

    Returns ``(messages, codewords, z)``.
    """
    from .ldpc import encode
    from .txchain import apply_channel, gray_map, random_bits

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    msg_seed, noise_seed = ss.spawn(2)
    messages = random_bits(n_blocks * code.k, msg_seed).reshape(n_blocks, code.k)
    codewords = encode(code, messages)
    perm = interleaver(code.n, interleaver_seed) if interleave else np.arange(code.n)
    z = apply_channel(gray_map(codewords[:, perm], constellation), channel, noise_seed)
    return messages, codewords, z
