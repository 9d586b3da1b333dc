"""Closed-form noise budget of a squeezer followed by a phase-sensitive amplifier.

The squeezer (OPO) output passes through propagation loss into the OPA,
which amplifies the squeezed quadrature before lossy homodyne detection.
Variances are normalised to the amplified shot noise, so that the whole
readout behaves like a single detector of efficiency ``eta_eff``.

Pump parameters may be given as :class:`~sqzchain.core.PumpDrive` or as a
plain float ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

from .core import (
    DomainError,
    EfficiencyBudget,
    PhaseJitter,
    PumpDrive,
    QuadraturePair,
    check_efficiency,
    to_db,
)

Quadrature = Literal["amplify", "deamplify"]


class OutOfModelError(DomainError):
    """Inputs for which the closed-form cavity model is not trusted."""


def _x(pump: PumpDrive | float) -> float:
    if isinstance(pump, PumpDrive):
        return pump.x
    return PumpDrive(pump).x


def _angle(theta: PhaseJitter | float) -> float:
    return theta.rms if isinstance(theta, PhaseJitter) else float(theta)


def pump_gain_convert(gain: float) -> PumpDrive:
    """Pump parameter from the nonlinear gain, ``x = 1 - 1/sqrt(G)``."""
    return PumpDrive.from_gain(gain)


def gain_from_pump(pump: PumpDrive | float) -> float:
    """Nonlinear gain ``G = 1/(1-x)**2``; inverse of :func:`pump_gain_convert`."""
    return 1.0 / (1.0 - _x(pump)) ** 2


def opo_output_variance(pump: PumpDrive | float, eta_tot: float) -> QuadraturePair:
    """Squeezed/antisqueezed variance of a lossy sub-threshold squeezer at zero sideband frequency."""
    x = _x(pump)
    eta = check_efficiency(eta_tot, "eta_tot")
    return QuadraturePair(1.0 - 4.0 * x * eta / (1.0 + x) ** 2, 1.0 + 4.0 * x * eta / (1.0 - x) ** 2)


def cavity_response(pump: PumpDrive | float, eta: float, omega: float) -> QuadraturePair:
    """Lorentzian generalisation of :func:`opo_output_variance`.

    ``omega`` is the sideband frequency in units of the cavity half-linewidth.
    """
    x = _x(pump)
    eta = check_efficiency(eta, "eta")
    omega = float(omega)
    if not omega >= 0.0:
        raise DomainError(f"omega must be >= 0, got {omega!r}")
    w2 = omega * omega
    return QuadraturePair(
        1.0 - 4.0 * x * eta / ((1.0 + x) ** 2 + w2),
        1.0 + 4.0 * x * eta / ((1.0 - x) ** 2 + w2),
    )


def apply_phase_jitter(pair: QuadraturePair, theta: PhaseJitter | float) -> QuadraturePair:
    """Mix the two quadratures with weights ``cos**2`` and ``sin**2`` of the rms phase error.

    A bare float angle bypasses the ``< pi/2`` cap of :class:`PhaseJitter`.
    """
    t = _angle(theta)
    c2, s2 = math.cos(t) ** 2, math.sin(t) ** 2
    return QuadraturePair(pair.v_minus * c2 + pair.v_plus * s2, pair.v_plus * c2 + pair.v_minus * s2)


def apply_loss(pair: QuadraturePair, eta: float) -> QuadraturePair:
    eta = check_efficiency(eta, "eta")
    return QuadraturePair(eta * pair.v_minus + 1.0 - eta, eta * pair.v_plus + 1.0 - eta)


def _shot(y: float, eta_opa: float, eta_det: float, w2: float = 0.0) -> float:
    # y is the signed pump: +x on the amplified quadrature, -x on the deamplified one
    return 1.0 + 4.0 * y * eta_opa * eta_det / ((1.0 - y) ** 2 + w2)


def _eff(y: float, eta_opa: float, eta_det: float, w2: float = 0.0) -> float:
    return eta_det * ((2.0 * eta_opa + y - 1.0) ** 2 + w2) / ((1.0 - y) ** 2 + w2 + 4.0 * y * eta_det * eta_opa)


def _check_opa(eta_opa: float, eta_det: float) -> tuple[float, float]:
    eta_opa = check_efficiency(eta_opa, "eta_opa")
    eta_det = check_efficiency(eta_det, "eta_det")
    if eta_opa < 0.5:
        raise OutOfModelError(f"eta_opa = {eta_opa} < 0.5 is outside the amplifier model")
    return eta_opa, eta_det


def effective_efficiency(x_opa: PumpDrive | float, eta_opa: float, eta_det: float) -> float:
    """Efficiency of the amplified readout viewed as a single lossy detector.

    ``eta_det * (2*eta_opa + x - 1)**2 / ((1 - x)**2 + 4*x*eta_det*eta_opa)``.
    Rises from ``eta_det*(2*eta_opa - 1)**2`` at zero pump towards ``eta_opa``
    as the OPA approaches threshold.

    Raises
    ------
    OutOfModelError
        If ``eta_opa < 0.5``.
    """
    eta_opa, eta_det = _check_opa(eta_opa, eta_det)
    return _eff(_x(x_opa), eta_opa, eta_det)


def amplified_shot_gain(x_opa: PumpDrive | float, eta_opa: float, eta_det: float) -> float:
    """Detected vacuum variance after the OPA, i.e. the amplified shot-noise level."""
    eta_opa = check_efficiency(eta_opa, "eta_opa")
    eta_det = check_efficiency(eta_det, "eta_det")
    return _shot(_x(x_opa), eta_opa, eta_det)


def internal_loss_pump(eta_opa: float, eta_det: float) -> PumpDrive:
    """Pump at which the OPA exactly compensates its own intracavity loss.

    At this pump ``effective_efficiency`` equals ``eta_det``; below it the
    OPA makes the readout worse than detecting directly.
    """
    eta_opa = check_efficiency(eta_opa, "eta_opa")
    eta_det = check_efficiency(eta_det, "eta_det")
    if eta_det == 1.0:
        raise DomainError("no detection loss: eta_det = 1 leaves nothing to compensate")
    x_int = (1.0 - eta_opa) / (1.0 - eta_det)
    if x_int >= 1.0:
        raise DomainError(
            f"OPA loss exceeds compensable range: x_int = {x_int:.6g} >= 1 "
            f"(L_opa = {1 - eta_opa:.6g}, L_det = {1 - eta_det:.6g})"
        )
    return PumpDrive(x_int)


@dataclass(frozen=True)
class ChainConfig:
    """Full operating point of the amplified readout.

    ``visibility_in_detection`` selects whether the homodyne overlap is part
    of the post-OPA detection efficiency (``eta_pd * visibility**2``) or
    whether the photodiode efficiency alone is used.
    """

    budget: EfficiencyBudget = field(default_factory=EfficiencyBudget)
    x_opo: PumpDrive = field(default_factory=lambda: PumpDrive.from_gain(10.0))
    x_opa: PumpDrive = field(default_factory=lambda: PumpDrive.from_gain(12.0))
    theta_opo: PhaseJitter = field(default_factory=lambda: PhaseJitter(0.033))
    theta_opa: PhaseJitter = field(default_factory=lambda: PhaseJitter(0.218))
    opa_quadrature: Quadrature = "amplify"
    visibility_in_detection: bool = True

    def __post_init__(self):
        if self.opa_quadrature not in ("amplify", "deamplify"):
            raise DomainError(f"opa_quadrature must be 'amplify' or 'deamplify', got {self.opa_quadrature!r}")
        for name in ("x_opo", "x_opa"):
            v = getattr(self, name)
            if not isinstance(v, PumpDrive):
                object.__setattr__(self, name, PumpDrive(v))
        for name in ("theta_opo", "theta_opa"):
            v = getattr(self, name)
            if not isinstance(v, PhaseJitter):
                object.__setattr__(self, name, PhaseJitter(v))

    @property
    def eta_det(self) -> float:
        b = self.budget
        return b.eta_det_total if self.visibility_in_detection else b.eta_pd


@dataclass(frozen=True)
class ReadoutPrediction:
    """Amplified-readout variances normalised to the amplified shot noise.

    ``v_amp_minus``/``v_amp_plus`` are the unnormalised detected variances and
    ``shot_reference`` the (phase-jittered) amplified shot noise they are
    divided by; ``amplified_shot_gain`` is the jitter-free reference.
    """

    v_eff_minus: float
    v_eff_plus: float
    amplified_shot_gain: float
    eta_eff: float
    v_amp_minus: float
    v_amp_plus: float
    shot_reference: float

    @property
    def pair(self) -> QuadraturePair:
        return QuadraturePair(self.v_eff_minus, self.v_eff_plus)

    @property
    def squeezing_db(self) -> float:
        return to_db(self.v_eff_minus)

    @property
    def antisqueezing_db(self) -> float:
        return to_db(self.v_eff_plus)


def amplified_readout(cfg: ChainConfig, omega: float = 0.0) -> ReadoutPrediction:
    """Predict the amplified squeezing and antisqueezing for ``cfg``.

    The squeezer output (efficiency ``eta_sqz_tilde``, phase jitter
    ``theta_opo``) is aligned with the OPA's pumped quadrature. The homodyne
    angle jitters by ``theta_opa`` about that quadrature, mixing in the
    orthogonal OPA output; the amplified shot-noise reference sees the same
    mixing. With ``theta_opa = 0`` this reduces to
    ``1 -/+ 4*x*eta_sqz_tilde*eta_eff/(1 +/- x)**2``.

    A nonzero ``omega`` (sideband frequency in half-linewidths, equal for both
    cavities) applies the Lorentzian response to OPO and OPA alike.
    """
    b = cfg.budget
    eta_opa, eta_det = _check_opa(b.eta_opa, cfg.eta_det)
    omega = float(omega)
    if not omega >= 0.0:
        raise DomainError(f"omega must be >= 0, got {omega!r}")
    w2 = omega * omega

    src = cavity_response(cfg.x_opo, b.eta_sqz_tilde, omega)
    src = apply_phase_jitter(src, cfg.theta_opo)

    sign = 1.0 if cfg.opa_quadrature == "amplify" else -1.0
    y_main, y_orth = sign * cfg.x_opa.x, -sign * cfg.x_opa.x
    shot_main, shot_orth = _shot(y_main, eta_opa, eta_det, w2), _shot(y_orth, eta_opa, eta_det, w2)
    eff_main, eff_orth = _eff(y_main, eta_opa, eta_det, w2), _eff(y_orth, eta_opa, eta_det, w2)

    t = cfg.theta_opa.rms
    c2, s2 = math.cos(t) ** 2, math.sin(t) ** 2

    def detected(v_main: float, v_orth: float) -> float:
        return c2 * shot_main * (1.0 + eff_main * (v_main - 1.0)) + s2 * shot_orth * (1.0 + eff_orth * (v_orth - 1.0))

    reference = c2 * shot_main + s2 * shot_orth
    amp_minus = detected(src.v_minus, src.v_plus)
    amp_plus = detected(src.v_plus, src.v_minus)
    return ReadoutPrediction(
        v_eff_minus=amp_minus / reference,
        v_eff_plus=amp_plus / reference,
        amplified_shot_gain=shot_main,
        eta_eff=eff_main,
        v_amp_minus=amp_minus,
        v_amp_plus=amp_plus,
        shot_reference=reference,
    )


def direct_readout(
    budget: EfficiencyBudget,
    x_opo: PumpDrive | float,
    theta: PhaseJitter | float = 0.0,
    omega: float = 0.0,
) -> QuadraturePair:
    """Squeezing seen by the homodyne detector with the OPA bypassed."""
    return apply_phase_jitter(cavity_response(x_opo, budget.eta_direct, omega), theta)


SWEEP_VARIABLES = ("g_opo", "g_opa", "omega")


@dataclass(frozen=True)
class SweepRow:
    var_name: str
    var_value: float
    x_opo: float
    x_opa: float
    eta_eff: float
    v_minus_db: float
    v_plus_db: float
    v_eff_minus_db: float
    v_eff_plus_db: float


def sweep(
    cfg: ChainConfig,
    variable: str,
    values: Sequence[float],
    theta_direct: PhaseJitter | float = 0.0,
    omega: float = 0.0,
) -> list[SweepRow]:
    """Evaluate direct and amplified readouts along one axis.

    ``v_minus_db``/``v_plus_db`` are the direct-detection (OPA bypassed)
    values with phase jitter ``theta_direct``; ``v_eff_*`` come from
    :func:`amplified_readout`.
    """
    if variable not in SWEEP_VARIABLES:
        raise DomainError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {variable!r}")
    if len(values) == 0:
        raise DomainError("sweep range is empty")
    rows = []
    for v in values:
        point, w = cfg, omega
        if variable == "g_opo":
            point = replace(cfg, x_opo=PumpDrive.from_gain(v))
        elif variable == "g_opa":
            point = replace(cfg, x_opa=PumpDrive.from_gain(v))
        else:
            w = float(v)
        direct = direct_readout(point.budget, point.x_opo, theta_direct, w)
        amp = amplified_readout(point, w)
        rows.append(
            SweepRow(
                var_name=variable,
                var_value=float(v),
                x_opo=point.x_opo.x,
                x_opa=point.x_opa.x,
                eta_eff=amp.eta_eff,
                v_minus_db=to_db(direct.v_minus),
                v_plus_db=to_db(direct.v_plus),
                v_eff_minus_db=amp.squeezing_db,
                v_eff_plus_db=amp.antisqueezing_db,
            )
        )
    return rows
