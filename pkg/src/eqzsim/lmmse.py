"""Linear MMSE equalization with a known channel.

Frame convention: tap ``taps[r]`` multiplies ``z_{n-N2+r}``, so the estimate
of ``x_n`` is ``taps @ frame``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .txchain import ChannelModel, ObservationFrame, PamConstellation


@dataclass(frozen=True)
class LmmseFilter:
    """LMMSE taps plus the geometry and the reliability constant ``C = 1 - h_n.f``."""

    taps: np.ndarray
    n1: int
    n2: int
    reliability_constant: float
    center_column: np.ndarray  # h_n, response of the frame to x_n

    @property
    def length(self) -> int:
        return self.n1 + self.n2 + 1

    @property
    def gain(self) -> float:
        """``h_n . f``, the bias of the estimate toward the true symbol."""
        return 1.0 - self.reliability_constant


def convolution_matrix(taps, n1: int, n2: int) -> np.ndarray:
    """``N x (N + M_h)`` matrix mapping symbols ``x_{n-N2-M_h} .. x_{n+N1}`` to the frame."""
    taps = np.asarray(taps, dtype=float)
    mh = taps.size - 1
    n = n1 + n2 + 1
    H = np.zeros((n, n + mh))
    for r in range(n):
        H[r, r: r + mh + 1] = taps[::-1]
    return H


def center_column_index(memory: int, n2: int) -> int:
    return memory + n2


def _check_geometry(n1: int, n2: int):
    if n1 < 0 or n2 < 0:
        raise ValueError(f"window geometry must be non-negative, got n1={n1}, n2={n2}")


def design_filter(channel: ChannelModel, n1: int, n2: int) -> LmmseFilter:
    """Prior-free LMMSE filter ``f = (s2 I + H H^T)^-1 h_n`` via a Cholesky solve."""
    _check_geometry(n1, n2)
    H = convolution_matrix(channel.taps, n1, n2)
    h_n = H[:, center_column_index(channel.memory, n2)].copy()
    R = H @ H.T + channel.noise_variance * np.eye(H.shape[0])
    try:
        f = cho_solve(cho_factor(R, lower=True), h_n)
    except LinAlgError as exc:
        raise LinAlgError("observation covariance is singular; LMMSE filter undefined") from exc
    return LmmseFilter(f, n1, n2, float(1.0 - h_n @ f), h_n)


def general_lmmse_oracle(channel: ChannelModel, n1: int, n2: int) -> LmmseFilter:
    """LMMSE filter from the generic second-order form ``Cov(x,z) Cov(z,z)^-1``.

    Builds the covariances element by element from the channel autocorrelation
    for i.i.d. zero-mean unit-power symbols; independent of
    :func:`convolution_matrix` and the Cholesky path.
    """
    _check_geometry(n1, n2)
    h = np.asarray(channel.taps, dtype=float)
    n = n1 + n2 + 1

    def tap(i):
        return h[i] if 0 <= i < h.size else 0.0

    def autocorr(lag):
        return sum(tap(i) * tap(i + lag) for i in range(h.size))

    cov_zz = np.empty((n, n))
    for r in range(n):
        for s in range(n):
            cov_zz[r, s] = autocorr(abs(r - s)) + (channel.noise_variance if r == s else 0.0)
    # z_{n-N2+r} holds x_n with coefficient h_{r-N2}
    cov_xz = np.array([tap(r - n2) for r in range(n)])
    f = cov_xz @ np.linalg.inv(cov_zz)
    return LmmseFilter(f, n1, n2, float(1.0 - cov_xz @ f), cov_xz)


def _samples(filt: LmmseFilter, frame) -> np.ndarray:
    z = frame.samples if isinstance(frame, ObservationFrame) else np.asarray(frame, dtype=float)
    if isinstance(frame, ObservationFrame) and (frame.n1, frame.n2) != (filt.n1, filt.n2):
        raise ValueError(
            f"frame geometry ({frame.n1}, {frame.n2}) does not match filter ({filt.n1}, {filt.n2})"
        )
    if z.shape[-1] != filt.length:
        raise ValueError(f"frame length {z.shape[-1]} does not match filter length {filt.length}")
    return z


def estimate_symbol(filt: LmmseFilter, frame):
    """``f^T z_n``; accepts one frame or a ``(..., N)`` stack of frames."""
    est = _samples(filt, frame) @ filt.taps
    return float(est) if np.ndim(est) == 0 else est


def llr(filt: LmmseFilter, frame):
    """2-PAM symbol LLR ``2 f^T z_n / C``."""
    if not filt.reliability_constant > 0:
        raise ZeroDivisionError(
            f"reliability constant C={filt.reliability_constant} is not positive"
        )
    return 2.0 * estimate_symbol(filt, frame) / filt.reliability_constant


def soft_bit(llr_value):
    return np.tanh(np.asarray(llr_value) / 2.0) if np.ndim(llr_value) else float(np.tanh(llr_value / 2.0))


def shifted_filter(filt: LmmseFilter, k: int) -> np.ndarray:
    """Taps cyclically rotated so the response centers on ``x_{n-k}``."""
    if abs(k) >= filt.length:
        raise ValueError(f"shift {k} out of range for filter length {filt.length}")
    return np.roll(filt.taps, -k)


def gaussian_bit_llrs(estimates, gain: float, constellation: PamConstellation,
                      bit_priors=None) -> np.ndarray:
    """Per-bit LLRs from LMMSE estimates modelled as ``gain * x + N(0, gain(1-gain))``.

    ``bit_priors`` (same shape as the output) enter only through the other
    bits of the same symbol, so the result is extrinsic for every bit.
    Output shape is ``estimates.shape[:-1] + (Q * q,)``.
    """
    est = np.asarray(estimates, dtype=float)
    q = constellation.bits_per_symbol
    var = gain * (1.0 - gain)
    if constellation.order == 2:
        return 2.0 * est / (1.0 - gain)
    # log p(est | level), shape (..., Q, M)
    metric = -((est[..., None] - gain * constellation.levels) ** 2) / (2.0 * var)
    labels = constellation.bit_labels  # (M, q)
    sign = 1.0 - 2.0 * labels
    if bit_priors is not None:
        lp = np.asarray(bit_priors, dtype=float).reshape(*est.shape, q)
        # per-bit log prior, half-LLR form (constant offsets cancel)
        half = 0.5 * lp[..., None, :] * sign  # (..., Q, M, q)
        total = half.sum(axis=-1)
    else:
        half = None
    out = np.empty(est.shape + (q,))
    for m in range(q):
        met = metric if half is None else metric + total - half[..., m]
        zero = labels[:, m] == 0
        out[..., m] = _lse(met[..., zero]) - _lse(met[..., ~zero])
    return out.reshape(*est.shape[:-1], -1)


def _lse(a):
    mx = a.max(axis=-1, keepdims=True)
    return (mx + np.log(np.exp(a - mx).sum(axis=-1, keepdims=True)))[..., 0]
