"""Shared fixtures and hand-rolled oracles for the test suite.

The oracles deliberately avoid the library's vectorized code paths:
channels are assembled with explicit loops over paths and antennas, and
SINRs with explicit sums over users, so the fast implementations are
checked against independent arithmetic.
"""

import numpy as np
import pytest

from ma_uplink.channel import (
    ArrayGeometry,
    Scenario,
    ScenarioConfig,
    make_user_channel,
    sample_scenario,
)


def oracle_channel_vector(u, pos):
    """Triple-loop h(pos): sum over receive/transmit path pairs."""
    n = u.rx_frm.shape[1]
    h = np.zeros(n, complex)
    coef = 2.0 * np.pi / u.wavelength
    for antenna in range(n):
        acc = 0.0 + 0.0j
        for i in range(u.lr):
            for j in range(u.lt):
                rx_phase = np.conj(u.rx_frm[i, antenna])
                tx_phase = np.exp(1j * coef * float(u.tx_virtual[j] @ pos))
                acc += rx_phase * u.prm[i, j] * tx_phase
        h[antenna] = acc
    return h


def oracle_sinr(W, H, p, sigma2):
    """Scalar-loop per-user SINR."""
    k = H.shape[1]
    out = np.zeros(k)
    for a in range(k):
        w = W[:, a]
        signal = abs(np.vdot(w, H[:, a])) ** 2 * p[a]
        interference = sum(
            abs(np.vdot(w, H[:, b])) ** 2 * p[b] for b in range(k) if b != a
        )
        noise = float(np.vdot(w, w).real) * sigma2
        out[a] = signal / (interference + noise)
    return out


def small_scenario(seed=0, **overrides):
    """A compact random scenario that is cheap to optimize in tests."""
    defaults = dict(n1=2, n2=2, num_users=3, num_paths=3, aoa_pool_size=8)
    defaults.update(overrides)
    cfg = ScenarioConfig(**defaults)
    return sample_scenario(cfg, np.random.default_rng(seed))


def handmade_scenario(seed=0, num_users=2, num_paths=2, n=4, region_wl=1.0):
    """Scenario assembled directly from raw draws (bypasses the sampler)."""
    rng = np.random.default_rng(seed)
    wavelength = 0.01
    geometry = ArrayGeometry.planar(n, 1, wavelength)
    half = region_wl * wavelength / 2.0
    region = np.array([[-half, half]] * 3)
    users = []
    for _ in range(num_users):
        tx = rng.uniform(-1, 1, (num_paths, 3))
        tx /= np.linalg.norm(tx, axis=1, keepdims=True)
        rx = rng.uniform(-1, 1, (num_paths, 3))
        rx /= np.linalg.norm(rx, axis=1, keepdims=True)
        prm = np.diag(
            1e-4 * (rng.standard_normal(num_paths) + 1j * rng.standard_normal(num_paths))
        )
        users.append(make_user_channel(tx, rx, prm, geometry, 50.0, region))
    rates = np.full(num_users, 3.0)
    return Scenario(
        array=geometry,
        users=tuple(users),
        noise_power=1e-11,
        rate_targets=rates,
        snr_targets=2.0**rates - 1.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
