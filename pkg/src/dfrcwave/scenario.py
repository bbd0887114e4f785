"""Arrays, scenes, channels, symbols and the waveform container.

Conventions used throughout the package:

* Angles are in degrees with the broadside convention ``theta in [-90, 90]``,
  and the steering phase of element ``n`` (0-based) at angle ``theta`` is
  ``exp(+1j * 2*pi * spacing * n * sin(theta))``.
* The transmit block is an ``(n_tx, block_len)`` complex matrix ``X`` and its
  vectorisation stacks columns (column-major / Fortran order), so the
  per-subpulse slice ``x_l`` is ``X[:, l]``.
* Column shifts are never realised as explicit shift matrices; see
  :func:`shift_columns`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArrayGeometry",
    "WaveformBlock",
    "SceneObject",
    "RadarScene",
    "BeamPatternSpec",
    "CommsConfig",
    "Weights",
    "steering_vector",
    "steering_matrix",
    "shift_columns",
    "vec_block",
    "mat_block",
    "generate_rayleigh_channels",
    "draw_psk_symbols",
    "desired_rect_beam_pattern",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Collocated transmit/receive uniform linear arrays.

    Parameters
    ----------
    n_tx, n_rx : int
        Number of transmit and receive elements.
    spacing_wavelengths : float
        Element spacing in carrier wavelengths (half wavelength by default).
    """

    n_tx: int
    n_rx: int = 1
    spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("array must have at least one element per side")
        if self.spacing_wavelengths <= 0:
            raise ValueError("element spacing must be positive")


@dataclass
class WaveformBlock:
    """Transmit space-time block ``X`` of shape ``(n_tx, block_len)``.

    ``X`` is stored in physical units; when the block is constant modulus
    every entry has magnitude ``sqrt(total_power / n_tx)``.  Solvers operate
    on the power-normalised variable returned by :meth:`normalized`, whose
    entries are unit modulus.
    """

    X: np.ndarray
    total_power: float = 1.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=complex)
        if self.X.ndim != 2:
            raise ValueError("waveform must be a 2-D matrix")
        if self.total_power <= 0:
            raise ValueError("total_power must be positive")

    @property
    def n_tx(self) -> int:
        return self.X.shape[0]

    @property
    def block_len(self) -> int:
        return self.X.shape[1]

    @property
    def entry_modulus(self) -> float:
        """Nominal per-entry magnitude ``sqrt(total_power / n_tx)``."""
        return float(np.sqrt(self.total_power / self.n_tx))

    def normalized(self) -> np.ndarray:
        """Return ``X`` scaled so a constant-modulus block has unit entries."""
        return self.X / self.entry_modulus

    def is_constant_modulus(self, tol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(np.abs(self.X) - self.entry_modulus)) <= tol)

    @classmethod
    def from_normalized(cls, Xn: np.ndarray, total_power: float = 1.0) -> "WaveformBlock":
        """Build a block from the unit-modulus solver variable."""
        Xn = np.asarray(Xn, dtype=complex)
        scale = np.sqrt(total_power / Xn.shape[0])
        return cls(Xn * scale, total_power=total_power)


@dataclass(frozen=True)
class SceneObject:
    """Point scatterer: azimuth angle, absolute range bin and amplitude."""

    angle_deg: float
    range_bin: int
    amplitude: complex = 1.0 + 0.0j


@dataclass
class RadarScene:
    """Targets/clutter plus the correlation suppression window.

    ``max_lag`` is the half-width ``P`` of the lag window: lags
    ``-(P-1) .. P-1`` are shaped.  The first object is the target of
    interest by convention and its range bin is the delay reference.
    """

    objects: list[SceneObject]
    max_lag: int
    noise_var_radar: float = 0.0

    def __post_init__(self):
        if self.max_lag < 1:
            raise ValueError("max_lag must be at least 1")
        if self.noise_var_radar < 0:
            raise ValueError("noise variance cannot be negative")

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def angles_deg(self) -> np.ndarray:
        return np.array([o.angle_deg for o in self.objects], dtype=float)

    @property
    def range_bins(self) -> np.ndarray:
        return np.array([o.range_bin for o in self.objects], dtype=int)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([o.amplitude for o in self.objects], dtype=complex)

    @property
    def reference_bin(self) -> int:
        """Range bin of the first object; echo delays are relative to it."""
        return int(self.objects[0].range_bin)

    def unique_angles_deg(self) -> np.ndarray:
        """Distinct object angles in order of first appearance.

        Correlation costs are driven by the set of angles of interest; a
        scene may place several objects at the same azimuth.
        """
        seen: dict[float, None] = {}
        for o in self.objects:
            seen.setdefault(float(o.angle_deg), None)
        return np.array(list(seen.keys()), dtype=float)

    def validate_against(self, block_len: int) -> None:
        if self.max_lag > block_len:
            raise ValueError("max_lag may not exceed the block length")
        for o in self.objects:
            if not 0 <= o.range_bin <= block_len - 1:
                raise ValueError(f"range bin {o.range_bin} outside 0..{block_len - 1}")


@dataclass
class BeamPatternSpec:
    """Desired transmit beam pattern sampled on an angle grid."""

    angle_grid_deg: np.ndarray
    desired_gain: np.ndarray

    def __post_init__(self):
        self.angle_grid_deg = np.asarray(self.angle_grid_deg, dtype=float)
        self.desired_gain = np.asarray(self.desired_gain, dtype=float)
        if self.angle_grid_deg.size == 0:
            raise ValueError("angle grid is empty")
        if self.angle_grid_deg.shape != self.desired_gain.shape:
            raise ValueError("grid and desired gain must have equal length")
        if np.any(np.diff(self.angle_grid_deg) <= 0):
            raise ValueError("angle grid must be strictly increasing")
        if np.any(self.desired_gain < 0):
            raise ValueError("desired gain must be nonnegative")
        if not np.any(self.desired_gain > 0):
            raise ValueError("desired gain must not be identically zero")

    @property
    def n_bins(self) -> int:
        return int(self.angle_grid_deg.size)


@dataclass
class CommsConfig:
    """Downlink users: channels, PSK codewords and QoS thresholds.

    ``snr_thresholds`` are linear SNR values (one per user) and
    ``ci_half_angle`` is the half-angle of the constructive-interference
    sector in radians (``pi / psk_order`` for M-PSK).
    """

    channels: np.ndarray       # (n_users, n_tx)
    symbols: np.ndarray        # (block_len, n_users), unit modulus
    noise_var: float
    snr_thresholds: np.ndarray  # (n_users,), linear
    psk_order: int = 4
    ci_half_angle: float = np.pi / 4

    def __post_init__(self):
        self.channels = np.atleast_2d(np.asarray(self.channels, dtype=complex))
        self.symbols = np.atleast_2d(np.asarray(self.symbols, dtype=complex))
        self.snr_thresholds = np.atleast_1d(np.asarray(self.snr_thresholds, dtype=float))
        if self.channels.shape[0] != self.snr_thresholds.size:
            raise ValueError("one SNR threshold per user is required")
        if self.symbols.shape[1] != self.channels.shape[0]:
            raise ValueError("symbols must be (block_len, n_users)")
        if np.any(self.snr_thresholds <= 0):
            raise ValueError("SNR thresholds must be positive")
        if not 0 < self.ci_half_angle < np.pi / 2:
            raise ValueError("CI half-angle must lie in (0, pi/2)")
        if np.max(np.abs(np.abs(self.symbols) - 1.0)) > 1e-9:
            raise ValueError("PSK symbols must be unit modulus")

    @property
    def n_users(self) -> int:
        return int(self.channels.shape[0])

    @property
    def block_len(self) -> int:
        return int(self.symbols.shape[0])


@dataclass(frozen=True)
class Weights:
    """Nonnegative weights of the composite design objective."""

    w_bp: float = 1.0
    w_ac: float = 0.0
    w_cc: float = 0.0
    w_sim: float = 0.0

    def __post_init__(self):
        if min(self.w_bp, self.w_ac, self.w_cc, self.w_sim) < 0:
            raise ValueError("weights must be nonnegative")


def steering_vector(geometry: ArrayGeometry, angle_deg: float, side: str = "transmit") -> np.ndarray:
    """Unit-modulus ULA steering vector at ``angle_deg``.

    ``side`` selects the transmit (``n_tx``) or receive (``n_rx``) aperture.
    The first element has phase zero.
    """
    if not -90.0 <= angle_deg <= 90.0:
        raise ValueError("angle must lie in [-90, 90] degrees (broadside convention)")
    if side == "transmit":
        n = geometry.n_tx
    elif side == "receive":
        n = geometry.n_rx
    else:
        raise ValueError("side must be 'transmit' or 'receive'")
    phase = 2.0 * np.pi * geometry.spacing_wavelengths * np.sin(np.deg2rad(angle_deg))
    return np.exp(1j * phase * np.arange(n))


def steering_matrix(geometry: ArrayGeometry, angles_deg: np.ndarray, side: str = "transmit") -> np.ndarray:
    """Stack steering vectors as columns, shape ``(n_elements, n_angles)``."""
    n = geometry.n_tx if side == "transmit" else geometry.n_rx
    angles_deg = np.atleast_1d(np.asarray(angles_deg, dtype=float))
    if np.any(angles_deg < -90.0) or np.any(angles_deg > 90.0):
        raise ValueError("angles must lie in [-90, 90] degrees")
    if side not in ("transmit", "receive"):
        raise ValueError("side must be 'transmit' or 'receive'")
    phase = 2.0 * np.pi * geometry.spacing_wavelengths * np.sin(np.deg2rad(angles_deg))
    return np.exp(1j * np.outer(np.arange(n), phase))


def shift_columns(X: np.ndarray, lag: int) -> np.ndarray:
    """Right-multiply by the delay matrix for ``lag`` without materialising it.

    Output column ``j`` is input column ``j - lag`` where that index exists
    and zero otherwise, so a positive lag moves content toward later
    subpulses.  ``|lag| >= block_len`` yields the all-zero matrix.
    """
    X = np.asarray(X)
    L = X.shape[-1]
    out = np.zeros_like(X)
    if lag >= L or lag <= -L:
        return out
    if lag >= 0:
        out[..., lag:] = X[..., : L - lag]
    else:
        out[..., : L + lag] = X[..., -lag:]
    return out


def vec_block(X: np.ndarray) -> np.ndarray:
    """Column-major vectorisation (stacks the subpulse columns)."""
    return np.asarray(X).flatten(order="F")


def mat_block(x: np.ndarray, n_tx: int) -> np.ndarray:
    """Inverse of :func:`vec_block`."""
    x = np.asarray(x)
    if x.size % n_tx:
        raise ValueError("vector length is not a multiple of n_tx")
    return x.reshape((n_tx, x.size // n_tx), order="F")


def generate_rayleigh_channels(seed, n_users: int, n_tx: int) -> np.ndarray:
    """Draw i.i.d. unit-variance circularly-symmetric Gaussian channels.

    Returns an ``(n_users, n_tx)`` matrix; deterministic for a given seed.
    """
    if n_users < 1:
        raise ValueError("need at least one user")
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((n_users, n_tx)) + 1j * rng.standard_normal((n_users, n_tx))
    return h / np.sqrt(2.0)


def draw_psk_symbols(seed, block_len: int, n_users: int, order: int = 4) -> np.ndarray:
    """Draw uniform M-PSK symbols, shape ``(block_len, n_users)``.

    The constellation is ``exp(1j * (2*pi*m/M + pi/M))`` so that symbols sit
    strictly inside their decision sectors (for QPSK: the four quadrant
    diagonals).
    """
    if order < 2:
        raise ValueError("PSK order must be at least 2")
    rng = np.random.default_rng(seed)
    m = rng.integers(0, order, size=(block_len, n_users))
    return np.exp(1j * (2.0 * np.pi * m / order + np.pi / order))


def desired_rect_beam_pattern(
    target_angles_deg,
    beam_width_deg: float,
    grid_deg: np.ndarray,
) -> BeamPatternSpec:
    """Rectangular desired pattern: unit gain within half a beam width of
    any target angle, zero elsewhere."""
    grid = np.asarray(grid_deg, dtype=float)
    if grid.size == 0:
        raise ValueError("angle grid is empty")
    targets = np.atleast_1d(np.asarray(target_angles_deg, dtype=float))
    half = beam_width_deg / 2.0
    gain = np.zeros_like(grid)
    for t in targets:
        if t - half < grid[0] - 1e-9 or t + half > grid[-1] + 1e-9:
            raise ValueError("grid does not cover every requested beam")
        gain[(grid >= t - half - 1e-12) & (grid <= t + half + 1e-12)] = 1.0
    return BeamPatternSpec(grid, gain)
