"""Downlink channel model: path loss, spectral efficiency and Rayleigh outage.

All randomness is drawn from a :class:`numpy.random.Generator` supplied by the
caller; nothing in this module touches a global RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_nonnegative, check_positive, check_probability
from .exceptions import DomainError


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


@dataclass(frozen=True)
class PathLossParams:
    """Large-scale propagation parameters.

    ``antenna_gain`` is linear, heights are in metres and ``shadow_sigma`` is
    the standard deviation of log-normal shadowing in dB.
    """

    d0: float = 100.0
    exponent: float = 3.5
    antenna_gain: float = 1.0
    h_t: float = 1.0
    h_r: float = 1.0
    shadow_sigma: float = 0.0

    def __post_init__(self) -> None:
        for name in ("d0", "exponent", "antenna_gain", "h_t", "h_r"):
            check_positive(getattr(self, name), name)
        check_nonnegative(self.shadow_sigma, "shadow_sigma")


@dataclass(frozen=True)
class UserChannel:
    """One mobile user's link to the base station.

    ``power_per_hz`` and ``noise_density`` are in W/Hz. ``rayleigh_sigma`` is
    the scale of the Rayleigh-distributed normalised gain ``h / N0`` used by
    the outage-constrained allocator, so ``power_per_hz * rayleigh_sigma`` is
    dimensionless.
    """

    distance: float
    gain_h: float
    power_per_hz: float
    noise_density: float
    rayleigh_sigma: float = 1.0

    def __post_init__(self) -> None:
        check_nonnegative(self.gain_h, "gain_h")
        check_positive(self.power_per_hz, "power_per_hz")
        check_positive(self.noise_density, "noise_density")
        check_positive(self.rayleigh_sigma, "rayleigh_sigma")

    @property
    def snr(self) -> float:
        return self.power_per_hz * self.gain_h / self.noise_density


def path_loss_db(distance: float, params: PathLossParams, shadow_sample: float = 0.0) -> float:
    """Path loss in dB at ``distance`` metres, plus a shadowing sample in dB."""
    if distance < params.d0:
        raise DomainError(
            f"path loss model is only valid for distance >= d0={params.d0} m, got {distance}"
        )
    return (
        40.0 * math.log10(params.d0)
        - 10.0 * math.log10(params.antenna_gain * params.h_t**2 * params.h_r**2)
        + 10.0 * params.exponent * math.log10(distance / params.d0)
        + shadow_sample
    )


def gain_from_path_loss(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def spectral_efficiency(ch: UserChannel) -> float:
    """Shannon spectral efficiency ``log2(1 + p h / N0)`` in bit/s/Hz."""
    return math.log2(1.0 + ch.snr)


def rayleigh_cdf(a: float, sigma: float) -> float:
    if a <= 0:
        return 0.0
    return -math.expm1(-(a * a) / (2.0 * sigma * sigma))


def rayleigh_quantile(epsilon: float, sigma: float) -> float:
    """Inverse of the Rayleigh CDF ``1 - exp(-a^2 / (2 sigma^2))``."""
    check_probability(epsilon)
    check_positive(sigma, "sigma")
    return sigma * math.sqrt(-2.0 * math.log1p(-epsilon))


def outage_spectral_efficiency(ch: UserChannel, epsilon: float) -> float:
    """Largest rate per Hz that the user sustains with outage probability <= epsilon."""
    return math.log2(1.0 + ch.power_per_hz * rayleigh_quantile(epsilon, ch.rayleigh_sigma))


def place_users(
    rng: np.random.Generator, n: int, radius: float, exclusion: float = 0.0
) -> np.ndarray:
    """Uniform positions over the annulus ``exclusion <= |p| <= radius``.

    Returns an ``(n, 2)`` array of Cartesian coordinates in metres.
    """
    if not 0 <= exclusion < radius:
        raise DomainError("need 0 <= exclusion < radius")
    rho = np.sqrt(rng.uniform(exclusion**2, radius**2, size=n))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.column_stack([rho * np.cos(theta), rho * np.sin(theta)])


def draw_user_channels(
    rng: np.random.Generator,
    distances: np.ndarray,
    params: PathLossParams,
    *,
    power_per_hz: float,
    noise_density: float,
    fading: bool = False,
    outage_sigma_scale: float = 1.0,
) -> list[UserChannel]:
    """Build channels for users at ``distances``.

    Distances below the reference distance ``d0`` are evaluated at ``d0``
    (the model is flat inside the reference ring). Shadowing and, if enabled,
    a unit-mean exponential power-fading sample are drawn from ``rng`` in
    user order, so the draw sequence depends only on the user count.

    The Rayleigh scale of each user is chosen so that the mean of the
    normalised gain ``h / N0`` equals its large-scale value, times
    ``outage_sigma_scale``.
    """
    distances = np.asarray(distances, dtype=float)
    n = distances.size
    shadow = (
        rng.normal(0.0, params.shadow_sigma, size=n) if params.shadow_sigma > 0 else np.zeros(n)
    )
    fade = rng.exponential(1.0, size=n) if fading else np.ones(n)
    users = []
    for d, xg, f in zip(distances, shadow, fade):
        large_scale = gain_from_path_loss(path_loss_db(max(d, params.d0), params, xg))
        sigma = outage_sigma_scale * (large_scale / noise_density) / math.sqrt(math.pi / 2.0)
        users.append(
            UserChannel(
                distance=float(d),
                gain_h=large_scale * f,
                power_per_hz=power_per_hz,
                noise_density=noise_density,
                rayleigh_sigma=sigma,
            )
        )
    return users
