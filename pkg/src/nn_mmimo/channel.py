"""Large-scale propagation, Rayleigh block fading and noisy reception.

Large-scale gains follow a far-field log-distance model with log-normal
shadowing,

    10 log10 beta = 20 log10(lambda / (4 pi d0)) - 10 gamma log10(d / d0) - psi,

valid for d >= d0, with psi ~ N(0, sigma_psi^2) in dB.  Small-scale fading is
i.i.d. unit-variance circularly-symmetric complex Gaussian, held constant
within a frame and redrawn across frames.  Noise power defaults to thermal
noise over the configured bandwidth with a receiver noise figure,
sigma^2 = k0 T0 10^(F0/10) B_w.

Randomness is counter-based (Philox) with named substreams derived from a
master seed, so placement, shadowing, fading and noise draws are independent
and reproducible regardless of evaluation order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PropagationParams",
    "ChannelRealization",
    "Stream",
    "substream",
    "path_loss_linear",
    "noise_power",
    "noise_power_dbw",
    "place_users_uniform",
    "draw_shadowing_db",
    "large_scale_gains",
    "draw_small_scale",
    "transmit",
]

SPEED_OF_LIGHT = 3e8  # m/s
BOLTZMANN = 1.38e-23  # J/K


class Stream:
    """Substream ids keeping the random sources decorrelated by construction."""

    PLACEMENT = 0
    SHADOWING = 1
    FADING = 2
    NOISE = 3
    BITS = 4


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for a named (stream, indices...) key."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seed=seq))


@dataclass(frozen=True)
class PropagationParams:
    """Cell geometry, path-loss law and receiver noise model.

    Defaults are the standard urban-macro style evaluation at 3 GHz: 100 m
    reference distance, exponent 3.71, 3.16 dB shadowing deviation, 1 km
    cell, 20 MHz bandwidth and a 6 dB noise figure at 290 K.
    """

    reference_distance_m: float = 100.0
    carrier_frequency_hz: float = 3e9
    path_loss_exponent: float = 3.71
    shadowing_std_db: float = 3.16
    cell_radius_m: float = 1000.0
    bandwidth_hz: float = 20e6
    noise_figure_db: float = 6.0
    reference_temperature_k: float = 290.0

    def __post_init__(self):
        if self.reference_distance_m <= 0 or self.carrier_frequency_hz <= 0:
            raise ValueError("reference distance and carrier frequency must be positive")
        if self.path_loss_exponent <= 0:
            raise ValueError("path-loss exponent must be positive")
        if self.cell_radius_m < self.reference_distance_m:
            raise ValueError("cell radius must be at least the reference distance")
        if self.bandwidth_hz <= 0 or self.reference_temperature_k <= 0:
            raise ValueError("bandwidth and temperature must be positive")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz


def noise_power_dbw(params: PropagationParams) -> float:
    """10 log10 of k0 T0 10^(F0/10) B_w; -124.97 dBW at the defaults."""
    density = (
        BOLTZMANN
        * params.reference_temperature_k
        * 10.0 ** (params.noise_figure_db / 10.0)
    )
    return 10.0 * np.log10(density * params.bandwidth_hz)


def noise_power(params: PropagationParams) -> float:
    """Receiver noise power sigma^2 in watts."""
    return float(10.0 ** (noise_power_dbw(params) / 10.0))


def path_loss_linear(
    distance_m: float, params: PropagationParams, psi_db: float = 0.0
) -> float:
    """Linear large-scale gain beta at a far-field distance.

    Rejects distances inside the reference distance, where the model does
    not hold.
    """
    d0 = params.reference_distance_m
    if distance_m < d0 * (1 - 1e-12):
        raise ValueError(f"distance {distance_m} m is inside the far-field radius {d0} m")
    loss_db = (
        20.0 * np.log10(params.wavelength_m / (4.0 * np.pi * d0))
        - 10.0 * params.path_loss_exponent * np.log10(max(distance_m, d0) / d0)
        - psi_db
    )
    return float(10.0 ** (loss_db / 10.0))


def place_users_uniform(
    n_users: int, params: PropagationParams, rng: np.random.Generator
) -> np.ndarray:
    """Distances of users dropped uniformly over the annulus [d0, R].

    Area-uniform placement means the radial density is proportional to r;
    inverse-CDF sampling gives r = sqrt(d0^2 + u (R^2 - d0^2)).
    """
    if n_users == 0:
        return np.empty(0)
    d0 = params.reference_distance_m
    r = params.cell_radius_m
    u = rng.random(n_users)
    return np.sqrt(d0**2 + u * (r**2 - d0**2))


def draw_shadowing_db(
    n_users: int, params: PropagationParams, rng: np.random.Generator
) -> np.ndarray:
    """Log-normal shadowing terms psi_k in dB."""
    return rng.normal(0.0, params.shadowing_std_db, size=n_users)


def large_scale_gains(
    distances_m: np.ndarray, psi_db: np.ndarray, params: PropagationParams
) -> np.ndarray:
    return np.array(
        [path_loss_linear(d, params, psi) for d, psi in zip(distances_m, psi_db)]
    )


@dataclass(frozen=True)
class ChannelRealization:
    """Small-scale matrix G (M x K) and the large-scale gains behind H."""

    g_matrix: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        if self.g_matrix.shape[1] != np.asarray(self.beta).size:
            raise ValueError("gain vector length must match the user count")

    @property
    def n_antennas(self) -> int:
        return self.g_matrix.shape[0]

    @property
    def h_matrix(self) -> np.ndarray:
        """H = G D^(1/2)."""
        return self.g_matrix * np.sqrt(np.asarray(self.beta))[None, :]


def draw_small_scale(
    n_antennas: int, n_users: int, rng: np.random.Generator
) -> np.ndarray:
    """i.i.d. CN(0, 1) fading matrix of shape (M, K)."""
    re = rng.standard_normal((n_antennas, n_users))
    im = rng.standard_normal((n_antennas, n_users))
    return (re + 1j * im) / np.sqrt(2.0)


def transmit(
    x,
    ch: ChannelRealization,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Y = H X + noise, with i.i.d. CN(0, sigma2) noise entries.

    ``x`` may be a SignalMatrix (its transmitted part is used) or a raw
    K x T complex array.
    """
    xm = np.asarray(getattr(x, "x_matrix", x))
    y = ch.h_matrix @ xm
    if sigma2 > 0:
        shape = y.shape
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        y = y + np.sqrt(sigma2 / 2.0) * noise
    return y
