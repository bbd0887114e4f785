import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dfrcwave.scenario import (
    ArrayGeometry,
    CommsConfig,
    RadarScene,
    SceneObject,
    Weights,
    desired_rect_beam_pattern,
    draw_psk_symbols,
    generate_rayleigh_channels,
)


def random_unit_modulus(rng, n_tx, L):
    return np.exp(1j * 2 * np.pi * rng.random((n_tx, L)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_small_setup(seed=0, n_tx=2, L=4, n_grid=5, max_lag=3, n_users=1, weights=(1.0, 2.0, 3.0)):
    """Tiny instance on which dense oracles are affordable."""
    rng = np.random.default_rng(seed)
    geom = ArrayGeometry(n_tx=n_tx, n_rx=2)
    grid = np.linspace(-60.0, 60.0, n_grid)
    spec = desired_rect_beam_pattern([-30.0, 40.0], 30.0, grid)
    scene = RadarScene(
        [SceneObject(-30.0, 1, 1.0), SceneObject(40.0, 2, 1.0)],
        max_lag=max_lag,
        noise_var_radar=0.01,
    )
    comms = None
    if n_users:
        comms = CommsConfig(
            channels=generate_rayleigh_channels(seed + 1, n_users, n_tx),
            symbols=draw_psk_symbols(seed + 2, L, n_users, 4),
            noise_var=0.01,
            snr_thresholds=np.full(n_users, 10 ** (6 / 10)),
        )
    w = Weights(w_bp=weights[0], w_ac=weights[1], w_cc=weights[2])
    X0 = random_unit_modulus(rng, n_tx, L)
    return geom, spec, scene, comms, w, X0


def make_paper_setup(seed=0, n_users=2, snr_db=6.0, weights=(1.0, 4.0, 4.0), L=32, n_tx=8):
    """Default experiment-scale scenario: 8x32 block, two mainlobes, QPSK users."""
    geom = ArrayGeometry(n_tx=n_tx, n_rx=8)
    grid = np.arange(-90.0, 90.0 + 0.25, 0.5)
    spec = desired_rect_beam_pattern([-30.0, 40.0], 20.0, grid)
    scene = RadarScene(
        [SceneObject(-30.0, 8, 1.0), SceneObject(40.0, 5, 1.0)],
        max_lag=8,
        noise_var_radar=0.01,
    )
    comms = None
    if n_users:
        comms = CommsConfig(
            channels=generate_rayleigh_channels(seed * 7919 + 11, n_users, n_tx),
            symbols=draw_psk_symbols(seed * 104729 + 13, L, n_users, 4),
            noise_var=0.01,
            snr_thresholds=np.full(n_users, 10 ** (snr_db / 10)),
        )
    w = Weights(w_bp=weights[0], w_ac=weights[1], w_cc=weights[2])
    return geom, spec, scene, comms, w
