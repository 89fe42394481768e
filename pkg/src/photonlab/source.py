"""Phenomenological model of the Rydberg single-photon source.

The source is described at the level of per-trial photon statistics: an
operating point ``(p_gen, g2_0)`` selected by the probe setting, a photon
number law truncated at two photons, and a fixed temporal envelope with a
Gaussian leading edge and an exponential trailing edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InfeasibleError, OutOfRangeError

TWO_LN2 = 2.0 * math.log(2.0)


@dataclass(frozen=True)
class WaveshapeParams:
    """Intensity profile of the emitted photon.

    ``rise_sigma`` is the standard deviation of the Gaussian leading edge of
    |a(t)|^2 and ``decay_tau`` the 1/e time of its exponential trailing edge.
    The two halves meet at ``peak_time`` with equal value.
    """

    rise_sigma: float = 70e-9
    decay_tau: float = 54.218352866352924e-9
    fwhm: float = 120e-9
    peak_time: float = 400e-9

    def __post_init__(self):
        if self.rise_sigma <= 0 or self.decay_tau <= 0:
            raise ConfigError("rise_sigma and decay_tau must be positive")
        if abs(self.derived_fwhm - self.fwhm) > 0.01 * self.fwhm:
            raise ConfigError(
                f"envelope FWHM {self.derived_fwhm * 1e9:.2f} ns deviates from the "
                f"configured {self.fwhm * 1e9:.2f} ns by more than 1%"
            )

    @property
    def derived_fwhm(self) -> float:
        return self.rise_sigma * math.sqrt(TWO_LN2) + self.decay_tau * math.log(2.0)

    @property
    def norm(self) -> float:
        """Integral of the unnormalized intensity."""
        return self.rise_sigma * math.sqrt(math.pi / 2.0) + self.decay_tau

    @classmethod
    def from_fwhm(cls, fwhm: float, rise_sigma: float, peak_time: float = 400e-9) -> "WaveshapeParams":
        decay_tau = (fwhm - rise_sigma * math.sqrt(TWO_LN2)) / math.log(2.0)
        if decay_tau <= 0:
            raise ConfigError("rise_sigma too large for the requested FWHM")
        return cls(rise_sigma=rise_sigma, decay_tau=decay_tau, fwhm=fwhm, peak_time=peak_time)


@dataclass(frozen=True)
class SourceConfig:
    # p_gen(x) = amplitude * sin^2(pi * (x - offset) / period)
    # g2(x) = 1 - (1 - g2_min) * exp(-x / g2_scale)
    probe_setting: float = 1.0
    rabi_amplitude: float = 0.15
    rabi_period: float = 2.8375525375210455
    rabi_offset: float = 0.0
    g2_min: float = 0.17766289692344925
    g2_scale: float = 15.206836422842837
    trial_period: float = 4e-6
    envelope: WaveshapeParams = field(default_factory=WaveshapeParams)
    # explicit operating point; bypasses the probe curves when set
    p_gen: float | None = None
    g2_0: float | None = None
    notes: dict = field(default_factory=lambda: {
        "probe_detuning_mhz": -40.0,
        "rydberg_state": "90S1/2",
    })

    @property
    def calibrated_range(self) -> tuple[float, float]:
        return (self.rabi_offset, self.rabi_offset + self.rabi_period)

    def operating_point(self) -> "OperatingPoint":
        if self.p_gen is not None:
            return OperatingPoint(self.p_gen, self.g2_0 if self.g2_0 is not None else 0.0, True)
        return calibrate_source(self.probe_setting, self)


class OperatingPoint(NamedTuple):
    p_gen: float
    g2_0: float
    g2_defined: bool = True


@dataclass(frozen=True)
class EmissionDistribution:
    pi0: float
    pi1: float
    pi2: float

    def __post_init__(self):
        probs = (self.pi0, self.pi1, self.pi2)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise InfeasibleError(f"not a probability distribution: {probs}")

    @property
    def mean(self) -> float:
        return self.pi1 + 2.0 * self.pi2

    @property
    def g2(self) -> float:
        m = self.mean
        return 2.0 * self.pi2 / m**2 if m > 0 else 0.0

    @property
    def cdf(self) -> np.ndarray:
        return np.array([self.pi0, self.pi0 + self.pi1, 1.0])


def calibrate_source(probe_setting: float, cfg: SourceConfig | None = None) -> OperatingPoint:
    """Map a probe setting to ``(p_gen, g2_0)`` on the calibrated curves.

    With no probe light there is no emission and g2 is undefined; it is
    reported as 0 with ``g2_defined=False``.
    """
    cfg = cfg or SourceConfig()
    lo, hi = cfg.calibrated_range
    if probe_setting < 0 or not lo <= probe_setting <= hi:
        raise OutOfRangeError(f"probe_setting {probe_setting} outside calibrated range [{lo}, {hi}]")
    p_gen = cfg.rabi_amplitude * math.sin(math.pi * (probe_setting - cfg.rabi_offset) / cfg.rabi_period) ** 2
    if probe_setting == cfg.rabi_offset:
        return OperatingPoint(0.0, 0.0, False)
    g2 = 1.0 - (1.0 - cfg.g2_min) * math.exp(-probe_setting / cfg.g2_scale)
    return OperatingPoint(p_gen, g2, True)


def fit_source_curves(low: tuple[float, float], default: tuple[float, float],
                      amplitude: float = 0.15, default_probe: float = 1.0) -> dict:
    """Solve the probe-curve constants that pass through two operating points.

    ``low`` and ``default`` are ``(p_gen, g2)`` pairs, both on the rising side
    of the Rabi curve. Returns keyword arguments for :class:`SourceConfig`
    plus the probe setting of the low point.
    """
    from scipy.optimize import brentq

    (p1, g1), (p2, g2) = low, default
    th1 = math.asin(math.sqrt(p1 / amplitude))
    th2 = math.asin(math.sqrt(p2 / amplitude))
    period = math.pi * default_probe / th2
    x1 = th1 * period / math.pi
    r = x1 / default_probe

    def mismatch(gmin):
        return math.log((1 - gmin) / (1 - g1)) - r * math.log((1 - gmin) / (1 - g2))

    g2_min = brentq(mismatch, 0.0, min(g1, g2) - 1e-12)
    scale = -default_probe / math.log((1 - g2) / (1 - g2_min))
    return {
        "rabi_amplitude": amplitude,
        "rabi_period": period,
        "g2_min": g2_min,
        "g2_scale": scale,
        "low_probe": x1,
    }


def truncation_bound(p_gen: float) -> float:
    """Order-of-magnitude weight of the neglected >=3 photon terms."""
    return p_gen**3


def emission_distribution(p_gen: float, g2_0: float) -> EmissionDistribution:
    """Photon-number mixture of 0, 1 and 2 photons with mean ``p_gen`` and the
    given normalized second-order correlation."""
    if not 0 < p_gen <= 1:
        raise OutOfRangeError(f"p_gen {p_gen} outside (0, 1]")
    if not 0 <= g2_0 <= 2:
        raise OutOfRangeError(f"g2_0 {g2_0} outside [0, 2]")
    pi2 = g2_0 * p_gen**2 / 2.0
    pi1 = p_gen - 2.0 * pi2
    if pi1 < 0:
        raise InfeasibleError(
            f"(p_gen={p_gen}, g2_0={g2_0}) infeasible with at most two photons: g2_0*p_gen must be <= 1"
        )
    pi0 = 1.0 - pi1 - pi2
    if pi0 < 0:
        raise InfeasibleError(f"(p_gen={p_gen}, g2_0={g2_0}) gives negative vacuum probability")
    return EmissionDistribution(pi0, pi1, pi2)


def sample_trial(dist: EmissionDistribution, rng: np.random.Generator) -> int:
    return int(np.searchsorted(dist.cdf, rng.random(), side="right"))


def sample_trials(dist: EmissionDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """Vectorized :func:`sample_trial`; returns photon counts as ``int8``."""
    u = rng.random(n)
    return np.searchsorted(dist.cdf, u, side="right").astype(np.int8)


def input_intensity(params: WaveshapeParams, t) -> np.ndarray:
    """Unnormalized intensity profile, 1 at the peak."""
    x = np.asarray(t, dtype=float) - params.peak_time
    rise = np.exp(-0.5 * (np.minimum(x, 0.0) / params.rise_sigma) ** 2)
    decay = np.exp(-np.maximum(x, 0.0) / params.decay_tau)
    return np.where(x < 0, rise, decay)


def input_envelope(params: WaveshapeParams, t, grid_normalize: bool = False):
    """Real amplitude a(t) of the input photon with ``int |a|^2 dt = 1``.

    The normalization is analytic. With ``grid_normalize`` the samples are
    instead rescaled so that the trapezoid integral over the supplied grid
    is exactly one.
    """
    intensity = input_intensity(params, t)
    if grid_normalize:
        t = np.asarray(t, dtype=float)
        return np.sqrt(intensity / np.trapezoid(intensity, t))
    amp = np.sqrt(intensity / params.norm)
    return amp if np.ndim(amp) else float(amp)
