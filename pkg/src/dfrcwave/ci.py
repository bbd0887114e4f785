"""Constructive-interference constraint construction and feasibility tools.

Each user/subpulse pair contributes two half-space constraints on the
normalised transmit vector: with ``y = h_k^H x_l e^{-j angle(s_lk)}`` the
received-symbol rotation, the pair enforces

    (Re{y} - sigma*sqrt(gamma_k)) * tan(Lambda) >= +/- Im{y},

which keeps the noiseless symbol inside the sector bounded by lines
parallel to the PSK decision boundaries.  Both constraints are stored as
rotated channels so that each reads ``Re{hat_h^H x_l} >= Gamma~``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import CommsConfig, WaveformBlock, mat_block

__all__ = ["CiConstraintSet", "MarginReport", "build_ci_set", "ci_margins", "initialize_waveform"]

FEASIBILITY_TOL = 1e-6


@dataclass
class CiConstraintSet:
    """All ``2K`` half-space constraints per subpulse on the normalised block.

    ``rotated_channels[l, m]`` is the length-``n_tx`` vector whose inner
    product's real part must exceed ``thresholds[m]``; odd/even ``m``
    (0-based: even/odd) carry the two boundary rotations of user
    ``m // 2``.
    """

    rotated_channels: np.ndarray  # (L, 2K, n_tx)
    thresholds: np.ndarray        # (2K,)
    total_power: float
    noise_std: float
    snr_thresholds: np.ndarray    # (K,)
    ci_half_angle: float

    @property
    def block_len(self) -> int:
        return int(self.rotated_channels.shape[0])

    @property
    def n_constraints(self) -> int:
        return int(self.rotated_channels.shape[1])

    @property
    def n_tx(self) -> int:
        return int(self.rotated_channels.shape[2])

    @property
    def n_users(self) -> int:
        return self.n_constraints // 2

    def is_empty(self) -> bool:
        return self.n_constraints == 0

    def user_of(self, m: int) -> int:
        """User index of constraint ``m`` (0-based)."""
        return m // 2

    def evaluate(self, Xn: np.ndarray) -> np.ndarray:
        """Per-constraint values ``Re{hat_h_{l,m}^H x_l}``, shape (2K, L)."""
        if self.is_empty():
            return np.zeros((0, Xn.shape[1]))
        # einsum over antennas: out[l, m] = sum_n conj(h[l,m,n]) X[n,l]
        vals = np.einsum("lmn,nl->lm", self.rotated_channels.conj(), Xn)
        return np.real(vals).T


@dataclass
class MarginReport:
    """Constraint slacks ``Re{hat_h^H x_l} - Gamma~`` for a normalised block."""

    margins: np.ndarray  # (2K, L)
    tol: float = FEASIBILITY_TOL

    @property
    def min_margin(self) -> float:
        return float(self.margins.min()) if self.margins.size else np.inf

    @property
    def max_violation(self) -> float:
        return max(0.0, -self.min_margin) if self.margins.size else 0.0

    @property
    def feasible(self) -> bool:
        return self.margins.size == 0 or self.min_margin >= -self.tol


def empty_ci_set(block_len: int, n_tx: int, total_power: float = 1.0) -> CiConstraintSet:
    """Constraint set of a radar-only design (no users)."""
    return CiConstraintSet(
        rotated_channels=np.zeros((block_len, 0, n_tx), dtype=complex),
        thresholds=np.zeros(0),
        total_power=total_power,
        noise_std=0.0,
        snr_thresholds=np.zeros(0),
        ci_half_angle=np.pi / 4,
    )


def build_ci_set(comms: CommsConfig | None, total_power: float, n_tx: int, block_len: int | None = None) -> CiConstraintSet:
    """Assemble the rotated channels and normalised thresholds.

    With ``comms`` absent (radar-only) an empty set is returned.  Thresholds
    are scaled by ``sqrt(n_tx / total_power)`` to match the unit-modulus
    normalisation of the design variable.
    """
    if comms is None or comms.n_users == 0:
        return empty_ci_set(block_len or 1, n_tx, total_power)
    if comms.channels.shape[1] != n_tx:
        raise ValueError("channel length must equal n_tx")
    L = comms.block_len
    K = comms.n_users
    lam = comms.ci_half_angle
    sigma = np.sqrt(comms.noise_var)

    rot_plus = np.sin(lam) + 1j * np.cos(lam)   # boundary for +Im side
    rot_minus = np.sin(lam) - 1j * np.cos(lam)  # boundary for -Im side
    hat = np.zeros((L, 2 * K, n_tx), dtype=complex)
    sym_phase = np.exp(1j * np.angle(comms.symbols))  # (L, K)
    for k in range(K):
        # column vectors conjugate-adjoint to the paper-form row definitions
        base = sym_phase[:, k, None] * comms.channels[k][None, :]
        hat[:, 2 * k, :] = rot_minus * base   # odd constraint (sin + j cos rotation on h^H)
        hat[:, 2 * k + 1, :] = rot_plus * base

    gamma = sigma * np.sqrt(comms.snr_thresholds) * np.sin(lam)  # (K,)
    thresholds = np.sqrt(n_tx / total_power) * np.repeat(gamma, 2)
    return CiConstraintSet(
        rotated_channels=hat,
        thresholds=thresholds,
        total_power=total_power,
        noise_std=float(sigma),
        snr_thresholds=np.asarray(comms.snr_thresholds, dtype=float),
        ci_half_angle=float(lam),
    )


def ci_margins(X, ci: CiConstraintSet) -> MarginReport:
    """Exact per-constraint slacks for a normalised block (or WaveformBlock)."""
    if isinstance(X, WaveformBlock):
        Xn = X.normalized()
    else:
        Xn = np.asarray(X, dtype=complex)
    if Xn.ndim == 1:
        Xn = mat_block(Xn, ci.n_tx)
    if ci.is_empty():
        return MarginReport(np.zeros((0, Xn.shape[1])))
    vals = ci.evaluate(Xn)
    return MarginReport(vals - ci.thresholds[:, None])


def initialize_waveform(
    ci: CiConstraintSet,
    n_tx: int,
    block_len: int,
    seed=0,
    max_iter: int = 2000,
    step_scale: float = 0.5,
) -> tuple[np.ndarray, MarginReport]:
    """Find a constant-modulus starting block satisfying the CI constraints.

    Runs projected subgradient ascent on the worst constraint margin under
    the per-entry disc relaxation ``|x_n| <= 1`` (each subpulse is an
    independent problem) with diminishing steps, periodically snapping the
    iterate onto the unit circle and keeping the best constant-modulus
    candidate seen.  Deterministic for a given seed.  Returns the
    normalised block and its margin report.
    """
    rng = np.random.default_rng(seed)
    X = np.exp(1j * 2 * np.pi * rng.random((n_tx, block_len)))
    if ci.is_empty():
        return X, MarginReport(np.zeros((0, block_len)))
    if ci.block_len != block_len or ci.n_tx != n_tx:
        raise ValueError("constraint set does not match the requested block shape")

    hat = ci.rotated_channels  # (L, 2K, n_tx)
    norms = np.linalg.norm(hat, axis=2)
    norms[norms == 0] = 1.0
    ells = np.arange(block_len)

    def snap(Y):
        mag = np.abs(Y)
        return np.where(mag == 0, 1.0, Y / np.where(mag == 0, 1.0, mag))

    def per_subpulse_min(Y):
        m = ci.evaluate(Y) - ci.thresholds[:, None]
        return m.min(axis=0)

    best = snap(X)
    best_min = per_subpulse_min(best)
    for t in range(1, max_iter + 1):
        margins = ci.evaluate(X) - ci.thresholds[:, None]  # (2K, L)
        worst = np.argmin(margins, axis=0)  # independent subproblem per subpulse
        g = hat[ells, worst, :].T / norms[ells, worst][None, :]
        X = X + (step_scale / np.sqrt(t)) * g
        mag = np.abs(X)
        X = np.where(mag > 1.0, X / mag, X)
        if t % 10 == 0 or t == max_iter:
            cand = snap(X)
            cand_min = per_subpulse_min(cand)
            gain = cand_min > best_min
            if np.any(gain):
                best[:, gain] = cand[:, gain]
                best_min[gain] = cand_min[gain]
    return best, ci_margins(best, ci)
