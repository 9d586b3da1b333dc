"""Domain types and unit conventions shared across the package.

All variances are in shot-noise units: the vacuum variance is exactly 1.
"X dB of squeezing" is quoted as a positive number and means a squeezed
variance of ``10**(-X/10)``; antisqueezing is quoted as positive dB above
shot noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

JitterModel = Literal["fixed-offset", "two-point", "gaussian"]
JITTER_MODELS: tuple[str, ...] = ("fixed-offset", "two-point", "gaussian")


class DomainError(ValueError):
    """Raised when a value lies outside the domain of a model quantity."""


def check_efficiency(value: float, name: str = "efficiency") -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def to_db(value):
    """Convert a linear variance ratio to decibels.

    Accepts scalars or arrays. Non-positive input raises :class:`DomainError`.
    """
    arr = np.asarray(value, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"linear ratio must be > 0 for dB conversion, got {value!r}")
    out = 10.0 * np.log10(arr)
    return float(out) if out.ndim == 0 else out


def from_db(db):
    """Inverse of :func:`to_db`."""
    out = np.power(10.0, np.asarray(db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


def squeezing_db(v_minus: float) -> float:
    """Squeezing as a positive dB figure (``4`` means ``v_minus = 10**-0.4``)."""
    return -to_db(v_minus)


@dataclass(frozen=True)
class DecibelValue:
    db: float

    @classmethod
    def from_linear(cls, value: float) -> "DecibelValue":
        return cls(to_db(value))

    def to_linear(self) -> float:
        return from_db(self.db)

    def __float__(self) -> float:
        return float(self.db)


@dataclass(frozen=True)
class EfficiencyBudget:
    """Efficiencies of every stage of the detection chain.

    Defaults are the central values of the characterised setup (1984 nm
    OPO/OPA pair with a 74 % photodiode).

    Attributes
    ----------
    eta_opo, eta_opa : float
        Escape efficiencies of the squeezer and of the amplifier cavity.
    eta_mode_match : float
        Mode overlap between the OPO output and the OPA.
    eta_prop_other : float
        Residual propagation efficiency, excluding mode mismatch.
    visibility : float
        Homodyne fringe visibility. Enters the power budget squared.
    eta_pd : float
        Photodiode quantum efficiency.
    """

    eta_opo: float = 0.982
    eta_opa: float = 0.973
    eta_mode_match: float = 0.97
    eta_prop_other: float = 0.99
    visibility: float = 0.98
    eta_pd: float = 0.74

    def __post_init__(self):
        for name in ("eta_opo", "eta_opa", "eta_mode_match", "eta_prop_other", "visibility", "eta_pd"):
            object.__setattr__(self, name, check_efficiency(getattr(self, name), name))

    @property
    def eta_hd(self) -> float:
        """Power efficiency of the homodyne overlap (visibility squared)."""
        return self.visibility**2

    @property
    def eta_sqz_tilde(self) -> float:
        """Efficiency of squeezing generation and delivery to the OPA."""
        return self.eta_opo * self.eta_mode_match * self.eta_prop_other

    @property
    def eta_det_total(self) -> float:
        """Detection efficiency after the OPA: photodiode times homodyne overlap."""
        return self.eta_pd * self.eta_hd

    @property
    def eta_direct(self) -> float:
        """Total efficiency with the OPA bypassed (no OPO/OPA mode matching)."""
        return self.eta_opo * self.eta_prop_other * self.eta_det_total


@dataclass(frozen=True)
class PumpDrive:
    """Normalised pump amplitude ``x = sqrt(P / P_thresh)`` of a sub-threshold cavity."""

    x: float

    def __post_init__(self):
        x = float(self.x)
        if not (0.0 <= x < 1.0):
            raise DomainError(f"pump parameter x must satisfy 0 <= x < 1, got {x!r}")
        object.__setattr__(self, "x", x)

    @classmethod
    def from_gain(cls, gain: float) -> "PumpDrive":
        gain = float(gain)
        if not gain >= 1.0:
            raise DomainError(f"nonlinear gain must be >= 1, got {gain!r}")
        return cls(1.0 - 1.0 / math.sqrt(gain))

    @classmethod
    def from_power_ratio(cls, ratio: float) -> "PumpDrive":
        ratio = float(ratio)
        if not (0.0 <= ratio < 1.0):
            raise DomainError(f"P/P_thresh must lie in [0, 1), got {ratio!r}")
        return cls(math.sqrt(ratio))

    def gain(self) -> float:
        return 1.0 / (1.0 - self.x) ** 2

    def power_ratio(self) -> float:
        return self.x**2


@dataclass(frozen=True)
class PhaseJitter:
    """RMS phase noise of a quadrature lock, in radians.

    ``model`` only matters for stochastic simulation; the closed-form
    mixing always uses ``cos**2(rms)`` and ``sin**2(rms)`` weights.
    """

    rms: float = 0.0
    model: JitterModel = "two-point"

    def __post_init__(self):
        rms = float(self.rms)
        if not (0.0 <= rms < math.pi / 2):
            raise DomainError(f"phase jitter rms must satisfy 0 <= rms < pi/2, got {rms!r}")
        if self.model not in JITTER_MODELS:
            raise DomainError(f"unknown jitter model {self.model!r}; expected one of {JITTER_MODELS}")
        object.__setattr__(self, "rms", rms)


@dataclass(frozen=True)
class QuadraturePair:
    """Squeezed and antisqueezed variances relative to shot noise.

    By convention ``v_minus`` is the squeezed quadrature. Ordering is not
    enforced because a quarter-wave phase error legitimately swaps the two;
    see :attr:`is_ordered`.
    """

    v_minus: float
    v_plus: float

    def __post_init__(self):
        for name in ("v_minus", "v_plus"):
            v = float(getattr(self, name))
            if not v > 0.0:
                raise DomainError(f"{name} must be > 0, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def is_ordered(self) -> bool:
        return self.v_minus <= self.v_plus

    @property
    def product(self) -> float:
        return self.v_minus * self.v_plus

    def db(self) -> tuple[float, float]:
        return to_db(self.v_minus), to_db(self.v_plus)

    def swapped(self) -> "QuadraturePair":
        return QuadraturePair(self.v_plus, self.v_minus)


@dataclass(frozen=True)
class ValueWithError:
    value: float
    sigma: float
    flags: tuple[str, ...] = field(default=())
