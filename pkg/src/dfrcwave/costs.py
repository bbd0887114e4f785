"""Radar cost functions and their factored building blocks.

All quartic costs are evaluated in the beam domain: the length-``L``
sequence radiated toward angle ``theta`` is ``a(theta)^H X``, and every
correlation quantity reduces to lagged inner products between such
sequences, computed with FFTs zero-padded to at least ``2L - 1``.  The
Kronecker-structured operator matrices behind these formulas are never
materialised here; dense equivalents live in the test suite as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import (
    ArrayGeometry,
    BeamPatternSpec,
    RadarScene,
    WaveformBlock,
    Weights,
    shift_columns,
    steering_matrix,
    steering_vector,
)

__all__ = [
    "CostBreakdown",
    "CorrelationProfile",
    "beam_domain",
    "lag_cross_correlation",
    "apply_lag_weights",
    "beam_gain",
    "beam_gains_on_grid",
    "optimal_alpha",
    "beam_pattern_mse",
    "space_time_correlation",
    "correlation_profile",
    "autocorrelation_isl",
    "crosscorrelation_isl",
    "lfm_reference",
    "angular_similarity",
    "total_objective",
]


@dataclass(frozen=True)
class CostBreakdown:
    """Individual cost terms and their weighted total."""

    bp: float
    ac: float
    cc: float
    sim: float
    total: float


@dataclass
class CorrelationProfile:
    """Squared space-time correlation values over lags ``-(L-1) .. L-1``."""

    lags: np.ndarray
    values: np.ndarray

    def at(self, lag: int) -> float:
        return float(self.values[int(lag) + (self.lags.size - 1) // 2])


def _as_matrix(X) -> np.ndarray:
    """Accept a WaveformBlock (power-normalised view) or a plain matrix."""
    if isinstance(X, WaveformBlock):
        return X.normalized()
    return np.asarray(X, dtype=complex)


def beam_domain(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Project the block onto steering vectors: rows are ``a_q^H X``.

    ``M`` holds steering vectors as columns, so the result has shape
    ``(n_angles, L)``.
    """
    return M.conj().T @ X


def lag_cross_correlation(p: np.ndarray, s: np.ndarray) -> np.ndarray:
    """All lagged inner products ``c[tau] = sum_j p[j - tau] * conj(s[j])``.

    Both sequences have length ``L``; the result covers
    ``tau = -(L-1) .. L-1`` (index ``tau + L - 1``).  Computed via FFT with
    zero padding to ``2L``.  Batched over leading axes.
    """
    p = np.asarray(p)
    s = np.asarray(s)
    L = p.shape[-1]
    n = 2 * L
    P = np.fft.fft(p, n=n, axis=-1)
    S = np.fft.fft(s, n=n, axis=-1)
    full = np.fft.ifft(P * S.conj(), axis=-1)
    lags = np.arange(-(L - 1), L)
    return full[..., (-lags) % n]


def apply_lag_weights(w: np.ndarray, seq: np.ndarray, L: int) -> np.ndarray:
    """Evaluate ``out[j] = sum_tau w[tau] * seq[j - tau]`` for ``j = 0..L-1``.

    ``w`` covers lags ``-(L-1) .. L-1`` (same indexing as
    :func:`lag_cross_correlation`); out-of-range ``seq`` samples are zero.
    This is the linear convolution that applies a masked correlation
    profile to a beam-domain sequence.  Batched over leading axes.
    """
    w = np.asarray(w)
    seq = np.asarray(seq)
    n = 2 * L
    W = np.zeros(w.shape[:-1] + (n,), dtype=complex)
    lags = np.arange(-(L - 1), L)
    W[..., lags % n] = w
    out = np.fft.ifft(np.fft.fft(W, axis=-1) * np.fft.fft(seq, n=n, axis=-1), axis=-1)
    return out[..., :L]


def lag_window_mask(L: int, max_lag: int, include_zero: bool) -> np.ndarray:
    """Boolean mask over lags ``-(L-1)..L-1`` selecting ``|tau| < max_lag``."""
    lags = np.arange(-(L - 1), L)
    mask = np.abs(lags) <= max_lag - 1
    if not include_zero:
        mask &= lags != 0
    return mask


def beam_gain(X, geometry: ArrayGeometry, angle_deg: float) -> float:
    """Transmit beam pattern ``||a(theta)^H X||^2`` at one angle."""
    Xm = _as_matrix(X)
    a = steering_vector(geometry, angle_deg)
    return float(np.sum(np.abs(a.conj() @ Xm) ** 2))


def beam_gains_on_grid(Xm: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Beam pattern at every column of the steering matrix ``M``."""
    return np.sum(np.abs(beam_domain(Xm, M)) ** 2, axis=-1)


def optimal_alpha(X, geometry: ArrayGeometry, spec: BeamPatternSpec, *, clip: bool = True) -> float:
    """Least-squares scale between the desired and realised patterns.

    Minimises ``sum_u |alpha * G_d[u] - G(x, theta_u)|^2`` over
    ``alpha >= 0``.  Both factors are nonnegative so the unclipped optimum
    is never negative in practice; clipping is kept for safety.
    """
    denom = float(np.sum(spec.desired_gain**2))
    if denom <= 0:
        raise ValueError("desired pattern is identically zero")
    Xm = _as_matrix(X)
    M = steering_matrix(geometry, spec.angle_grid_deg)
    gains = beam_gains_on_grid(Xm, M)
    alpha = float(np.dot(spec.desired_gain, gains) / denom)
    return max(alpha, 0.0) if clip else alpha


def beam_pattern_mse(X, geometry: ArrayGeometry, spec: BeamPatternSpec, form: str = "direct") -> float:
    """Beam-pattern shaping cost at the optimal scale.

    ``form='direct'`` evaluates ``sum_u |alpha* G_d[u] - G(x, theta_u)|^2``.
    ``form='bu'`` evaluates the equivalent sum of squared quadratic forms of
    the pattern-error operators via their ``n_tx x n_tx`` factors.  The two
    agree to rounding and are cross-checked in the tests.
    """
    Xm = _as_matrix(X)
    M = steering_matrix(geometry, spec.angle_grid_deg)
    gains = beam_gains_on_grid(Xm, M)
    denom = float(np.sum(spec.desired_gain**2))
    if form == "direct":
        alpha = max(float(np.dot(spec.desired_gain, gains) / denom), 0.0)
        return float(np.sum((alpha * spec.desired_gain - gains) ** 2))
    if form == "bu":
        # x^H B_u x = (G_d[u]/sum G_d^2) * sum_u' G_d[u'] x^H A_u' x - x^H A_u x,
        # with the first factor evaluated through the weighted aperture matrix.
        W = (M * spec.desired_gain) @ M.conj().T
        common = float(np.real(np.sum(Xm.conj() * (W @ Xm)))) / denom
        vals = common * spec.desired_gain - gains
        return float(np.sum(vals**2))
    raise ValueError("form must be 'direct' or 'bu'")


def space_time_correlation(
    X,
    geometry: ArrayGeometry,
    angle_q_deg: float,
    angle_qp_deg: float,
    lag: int,
) -> float:
    """Squared correlation between the waveform toward ``angle_q`` and its
    ``lag``-shifted echo toward ``angle_qp``."""
    Xm = _as_matrix(X)
    L = Xm.shape[1]
    if abs(lag) > L - 1:
        raise ValueError("lag magnitude must be below the block length")
    aq = steering_vector(geometry, angle_q_deg)
    aqp = steering_vector(geometry, angle_qp_deg)
    val = aq.conj() @ shift_columns(Xm, lag) @ Xm.conj().T @ aqp
    return float(np.abs(val) ** 2)


def correlation_profile(
    X,
    geometry: ArrayGeometry,
    angle_q_deg: float,
    angle_qp_deg: float,
) -> CorrelationProfile:
    """Full-lag profile of :func:`space_time_correlation` via one FFT pass."""
    Xm = _as_matrix(X)
    L = Xm.shape[1]
    M = steering_matrix(geometry, [angle_q_deg, angle_qp_deg])
    seqs = beam_domain(Xm, M)
    c = lag_cross_correlation(seqs[0], seqs[1])
    return CorrelationProfile(np.arange(-(L - 1), L), np.abs(c) ** 2)


def _corr_pairs(Xm: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Lagged inner products for every ordered angle pair.

    Entry ``[q, qp, i]`` is ``sum_j seq_q[j - tau] conj(seq_qp[j])`` for
    ``tau = i - (L - 1)``, i.e. the correlation whose squared modulus is the
    space-time correlation between angles ``q`` and ``qp``.
    """
    seqs = beam_domain(Xm, M)
    return lag_cross_correlation(seqs[:, None, :], seqs[None, :, :])


def autocorrelation_isl(X, geometry: ArrayGeometry, angles_deg, max_lag: int) -> float:
    """Sum of squared autocorrelations over nonzero lags within the window."""
    Xm = _as_matrix(X)
    L = Xm.shape[1]
    if max_lag > L:
        raise ValueError("max_lag may not exceed the block length")
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    M = steering_matrix(geometry, angles)
    seqs = beam_domain(Xm, M)
    c = lag_cross_correlation(seqs, seqs)
    mask = lag_window_mask(L, max_lag, include_zero=False)
    return float(np.sum(np.abs(c[:, mask]) ** 2))


def crosscorrelation_isl(X, geometry: ArrayGeometry, angles_deg, max_lag: int) -> float:
    """Sum of squared cross-correlations over all ordered angle pairs and all
    window lags (zero lag included)."""
    Xm = _as_matrix(X)
    L = Xm.shape[1]
    if max_lag > L:
        raise ValueError("max_lag may not exceed the block length")
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    Q = angles.size
    if Q < 2:
        return 0.0
    M = steering_matrix(geometry, angles)
    c = _corr_pairs(Xm, M)
    mask = lag_window_mask(L, max_lag, include_zero=True)
    total = np.sum(np.abs(c[..., mask]) ** 2)
    diag = np.sum(np.abs(c[np.arange(Q), np.arange(Q)][:, mask]) ** 2)
    return float(total - diag)


def lfm_reference(L: int) -> np.ndarray:
    """Linear-FM chirp reference sequence, entry ``exp(1j pi (l-1)^2 / L)``."""
    ell = np.arange(1, L + 1)
    return np.exp(1j * np.pi * (ell - 1) ** 2 / L)


def angular_similarity(X, geometry: ArrayGeometry, angles_deg, reference: np.ndarray) -> float:
    """Total squared distance between each radiated sequence and a reference.

    The sequence toward angle ``theta_q`` is ``X^H a(theta_q)``; the cost is
    zero iff every one of them equals ``reference``.
    """
    Xm = _as_matrix(X)
    reference = np.asarray(reference, dtype=complex)
    if reference.size != Xm.shape[1]:
        raise ValueError("reference length must equal the block length")
    angles = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    M = steering_matrix(geometry, angles)
    radiated = (Xm.conj().T @ M).T  # rows: X^H a_q
    return float(np.sum(np.abs(radiated - reference[None, :]) ** 2))


def total_objective(
    X,
    geometry: ArrayGeometry,
    spec: BeamPatternSpec,
    scene: RadarScene,
    weights: Weights,
    reference: np.ndarray | None = None,
) -> CostBreakdown:
    """Weighted composite objective on the power-normalised variable."""
    Xm = _as_matrix(X)
    angles = scene.unique_angles_deg()
    bp = beam_pattern_mse(Xm, geometry, spec)
    ac = autocorrelation_isl(Xm, geometry, angles, scene.max_lag)
    cc = crosscorrelation_isl(Xm, geometry, angles, scene.max_lag)
    sim = 0.0
    if weights.w_sim > 0:
        if reference is None:
            reference = lfm_reference(Xm.shape[1])
        sim = angular_similarity(Xm, geometry, angles, reference)
    total = weights.w_bp * bp + weights.w_ac * ac + weights.w_cc * cc + weights.w_sim * sim
    return CostBreakdown(bp=bp, ac=ac, cc=cc, sim=sim, total=float(total))
