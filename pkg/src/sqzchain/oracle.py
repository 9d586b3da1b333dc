"""Gaussian-state covariance simulator used as an independent check of :mod:`sqzchain.chain`.

States are stored in shot-noise units (vacuum covariance = identity) with
interleaved quadrature ordering ``(x1, p1, x2, p2, ...)``. Every operation
accepts a leading batch dimension on the covariance, which is how the Monte
Carlo phase-jitter averages are vectorised.

Sub-threshold cavities are modelled from their quantum Langevin equations
(intracavity quadrature driven through an escape port and a loss port),
solved in steady state. Nothing here evaluates the closed-form budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import JITTER_MODELS, DomainError, QuadraturePair, check_efficiency

# Monte Carlo batches are processed in this fixed size so that results do not
# depend on memory limits; each batch gets its own child seed.
BATCH_SIZE = 100_000


def symplectic_form(n_modes: int) -> np.ndarray:
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def rotation_matrix(angle) -> np.ndarray:
    """Phase-space rotation by ``angle``; an array of angles gives a stack of matrices."""
    a = np.asarray(angle, dtype=float)
    c, s = np.cos(a), np.sin(a)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def squeeze_matrix(r: float, angle: float = 0.0) -> np.ndarray:
    """Single-mode squeezer; ``angle`` is the orientation of the squeezed quadrature."""
    rot = rotation_matrix(angle)
    return rot @ np.diag([math.exp(-r), math.exp(r)]) @ rot.T


def beamsplitter_matrix(eta: float) -> np.ndarray:
    """Two-mode beamsplitter of power transmissivity ``eta``."""
    t, r = math.sqrt(eta), math.sqrt(1.0 - eta)
    eye = np.eye(2)
    return np.block([[t * eye, r * eye], [-r * eye, t * eye]])


def squeeze_parameter(x: float) -> float:
    """Single-pass squeeze factor equivalent to a cavity at pump ``x`` and zero sideband frequency."""
    return math.log((1.0 + x) / (1.0 - x))


def cavity_transfer(x: float, eta: float, omega: float = 0.0, angle: float = 0.0) -> np.ndarray:
    """Input-output matrix of a degenerate parametric cavity with two ports.

    Port 1 is the coupler (escape efficiency ``eta``), port 2 the
    intracavity loss. Decay rates are in units where the total half-linewidth
    is 1 and ``x`` is the parametric rate relative to it; ``angle`` is the
    orientation of the amplified quadrature. Returns the 4x4 map from input
    to output quadrature amplitudes of both ports at sideband ``omega``
    (complex unless ``omega == 0``).
    """
    kappa_e, kappa_l = 2.0 * eta, 2.0 * (1.0 - eta)
    rot = rotation_matrix(angle)
    gain = x * rot @ np.diag([1.0, -1.0]) @ rot.T
    drive = np.hstack([math.sqrt(kappa_e) * np.eye(2), math.sqrt(kappa_l) * np.eye(2)])
    inner = np.eye(2) - gain - 1j * omega * np.eye(2)
    out = drive.T @ np.linalg.solve(inner, drive) - np.eye(4)
    return out.real if omega == 0.0 else out


@dataclass(frozen=True)
class GaussianState:
    """Mean vector and covariance of ``n_modes`` bosonic modes.

    ``cov`` may carry leading batch dimensions, shape ``(..., 2N, 2N)``.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        if cov.shape[-1] != cov.shape[-2] or cov.shape[-1] % 2:
            raise DomainError(f"covariance must be (..., 2N, 2N), got shape {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov), initial=0.0)))
        if float(np.max(np.abs(cov - np.swapaxes(cov, -1, -2)), initial=0.0)) > 1e-12 * scale:
            raise DomainError("covariance matrix is not symmetric")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mean", mean)

    @classmethod
    def vacuum(cls, n_modes: int = 1) -> "GaussianState":
        return cls(np.zeros(2 * n_modes), np.eye(2 * n_modes))

    @property
    def n_modes(self) -> int:
        return self.cov.shape[-1] // 2

    def is_physical(self, tol: float = 1e-10) -> bool:
        """Check ``cov + i*Omega >= 0`` (uncertainty principle), per batch element."""
        herm = self.cov + 1j * symplectic_form(self.n_modes)
        eig = np.linalg.eigvalsh(herm)
        return bool(np.all(eig >= -tol))

    def mode_block(self, mode: int) -> np.ndarray:
        i = 2 * mode
        return self.cov[..., i : i + 2, i : i + 2]

    def add_vacuum_mode(self) -> "GaussianState":
        n = self.cov.shape[-1]
        cov = np.zeros(self.cov.shape[:-2] + (n + 2, n + 2))
        cov[..., :n, :n] = self.cov
        cov[..., n, n] = cov[..., n + 1, n + 1] = 1.0
        mean = np.concatenate([self.mean, np.zeros(self.mean.shape[:-1] + (2,))], -1)
        return GaussianState(mean, cov)

    def trace_out(self, mode: int) -> "GaussianState":
        keep = [i for i in range(self.cov.shape[-1]) if i // 2 != mode]
        return GaussianState(self.mean[..., keep], self.cov[..., keep, :][..., :, keep])

    def apply_symplectic(self, matrix: np.ndarray, modes: tuple[int, ...]) -> "GaussianState":
        """Conjugate by a local symplectic (possibly batched) acting on ``modes``."""
        n = self.cov.shape[-1]
        idx = [2 * m + k for m in modes for k in (0, 1)]
        matrix = np.asarray(matrix, dtype=float)
        full = np.broadcast_to(np.eye(n), matrix.shape[:-2] + (n, n)).copy()
        full[..., np.ix_(idx, idx)[0], np.ix_(idx, idx)[1]] = matrix
        cov = full @ self.cov @ np.swapaxes(full, -1, -2)
        mean = np.einsum("...ij,...j->...i", full, self.mean)
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        return GaussianState(mean, cov)


def apply_squeezer(state: GaussianState, mode: int, r: float, angle: float = 0.0) -> GaussianState:
    return state.apply_symplectic(squeeze_matrix(r, angle), (mode,))


def apply_rotation(state: GaussianState, mode: int, angle) -> GaussianState:
    return state.apply_symplectic(rotation_matrix(angle), (mode,))


def apply_beamsplitter_loss(state: GaussianState, mode: int, eta: float) -> GaussianState:
    """Mix ``mode`` with a fresh vacuum ancilla on a beamsplitter and discard the ancilla."""
    eta = check_efficiency(eta, "eta")
    widened = state.add_vacuum_mode()
    ancilla = widened.n_modes - 1
    mixed = widened.apply_symplectic(beamsplitter_matrix(eta), (mode, ancilla))
    return mixed.trace_out(ancilla)


def apply_parametric_cavity(state: GaussianState, mode: int, x: float, eta: float, angle: float = 0.0) -> GaussianState:
    """Reflect ``mode`` off a sub-threshold parametric cavity whose loss port sees vacuum."""
    eta = check_efficiency(eta, "eta")
    widened = state.add_vacuum_mode()
    port = widened.n_modes - 1
    out = widened.apply_symplectic(cavity_transfer(x, eta, 0.0, angle), (mode, port))
    return out.trace_out(port)


def homodyne_variance(state: GaussianState, mode: int, angle=0.0):
    """Variance of the quadrature ``x*cos(angle) + p*sin(angle)`` of ``mode``."""
    a = np.asarray(angle, dtype=float)
    u = np.stack([np.cos(a), np.sin(a)], -1)
    block = state.mode_block(mode)
    out = np.einsum("...i,...ij,...j->...", u, block, u)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class JitterSampler:
    """Seeded source of phase-error samples.

    The stream is numpy's PCG64 generator seeded through
    ``SeedSequence(seed)``; batch ``k`` uses child ``k`` of that sequence.
    ``fixed-offset`` always returns ``+rms``, ``two-point`` returns ``+/-rms``
    with equal probability, ``gaussian`` draws from ``N(0, rms**2)``.
    """

    model: str = "two-point"
    rms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in JITTER_MODELS:
            raise DomainError(f"unknown jitter model {self.model!r}")
        if not self.rms >= 0.0:
            raise DomainError(f"jitter rms must be >= 0, got {self.rms!r}")

    def unit_deviates(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.model == "fixed-offset":
            return np.ones(n)
        if self.model == "two-point":
            return rng.integers(0, 2, size=n) * 2.0 - 1.0
        return rng.standard_normal(n)

    def batches(self, n: int, width: int = 1):
        """Yield ``(width, batch)`` arrays of unit deviates covering ``n`` samples in fixed order."""
        children = np.random.SeedSequence(self.seed).spawn(-(-n // BATCH_SIZE))
        for k, child in enumerate(children):
            size = min(BATCH_SIZE, n - k * BATCH_SIZE)
            rng = np.random.Generator(np.random.PCG64(child))
            yield np.stack([self.unit_deviates(rng, size) for _ in range(width)])

    def sample(self, n: int) -> np.ndarray:
        return self.rms * np.concatenate([b[0] for b in self.batches(n)])


def _prepared_source(x_opo: float, eta: float) -> GaussianState:
    state = apply_squeezer(GaussianState.vacuum(1), 0, squeeze_parameter(x_opo))
    return apply_beamsplitter_loss(state, 0, eta)


def propagate_amplified(cfg, theta_opo=0.0, theta_opa=0.0, rotate_source=0.0):
    """Detected variance and amplified shot noise of the full chain at given phase errors.

    The squeezed quadrature of the source lies along ``x`` before the OPA and
    ``rotate_source = pi/2`` turns the antisqueezed quadrature onto it
    instead. The OPA pumps the ``x`` quadrature (amplify) or the ``p``
    quadrature (deamplify); the homodyne reads ``x`` offset by ``theta_opa``.
    ``theta_opo``/``theta_opa`` may be arrays of equal length.

    Returns ``(signal, shot)`` in unnormalised shot-noise units.
    """
    b = cfg.budget
    eta_det = cfg.eta_det
    opa_angle = 0.0 if cfg.opa_quadrature == "amplify" else math.pi / 2
    theta_opo = np.asarray(theta_opo, dtype=float)

    state = _prepared_source(cfg.x_opo.x, b.eta_sqz_tilde)
    state = apply_rotation(state, 0, theta_opo + rotate_source)
    state = apply_parametric_cavity(state, 0, cfg.x_opa.x, b.eta_opa, opa_angle)
    state = apply_beamsplitter_loss(state, 0, eta_det)
    signal = homodyne_variance(state, 0, theta_opa)

    vac = apply_parametric_cavity(GaussianState.vacuum(1), 0, cfg.x_opa.x, b.eta_opa, opa_angle)
    vac = apply_beamsplitter_loss(vac, 0, eta_det)
    shot = homodyne_variance(vac, 0, theta_opa)
    return signal, shot


def propagate_direct(cfg, theta=0.0, rotate_source: float = 0.0):
    """Homodyne variance of the source with the OPA bypassed."""
    state = _prepared_source(cfg.x_opo.x, cfg.budget.eta_direct)
    return homodyne_variance(state, 0, np.asarray(theta, dtype=float) + rotate_source)


def oracle_readout(cfg) -> QuadraturePair:
    """Jitter-free amplified readout normalised to amplified shot noise."""
    signal, shot = propagate_amplified(cfg, rotate_source=np.array([0.0, math.pi / 2]))
    return QuadraturePair(signal[0] / shot, signal[1] / shot)


def sideband_spectrum(cfg, omega: float) -> QuadraturePair:
    """Frequency-domain chain at sideband ``omega`` (both cavities share one linewidth).

    Uses the complex cavity transfer matrices on spectral covariance
    matrices of (signal, port) pairs; no jitter.
    """
    b = cfg.budget

    def through_cavity(spec2: np.ndarray, x: float, eta: float, angle: float) -> np.ndarray:
        m = cavity_transfer(x, eta, omega, angle)
        full = np.zeros((4, 4), dtype=complex)
        full[:2, :2] = spec2
        full[2:, 2:] = np.eye(2)
        out = m @ full @ m.conj().T
        return out[:2, :2]

    def loss(spec2: np.ndarray, eta: float) -> np.ndarray:
        return eta * spec2 + (1.0 - eta) * np.eye(2)

    opa_angle = 0.0 if cfg.opa_quadrature == "amplify" else math.pi / 2
    # OPO pumped so that x is squeezed: amplified axis along p
    src = loss(through_cavity(np.eye(2, dtype=complex), cfg.x_opo.x, b.eta_opo, math.pi / 2),
               b.eta_mode_match * b.eta_prop_other)
    results = []
    for rot in (0.0, math.pi / 2):
        r = rotation_matrix(rot)
        s = r @ src @ r.T
        det = loss(through_cavity(s, cfg.x_opa.x, b.eta_opa, opa_angle), cfg.eta_det)
        results.append(det[0, 0].real)
    shot = loss(through_cavity(np.eye(2, dtype=complex), cfg.x_opa.x, b.eta_opa, opa_angle), cfg.eta_det)[0, 0].real
    return QuadraturePair(results[0] / shot, results[1] / shot)


@dataclass(frozen=True)
class SimulationResult:
    pair: QuadraturePair
    stderr_minus: float
    stderr_plus: float
    n_samples: int


def simulate_chain(cfg, sampler: JitterSampler, n_samples: int, direct: bool = False) -> SimulationResult:
    """Monte Carlo average of the chain over sampled phase errors.

    The sampler supplies the jitter model and seed; each jitter's scale is
    taken from ``cfg.theta_opo`` / ``cfg.theta_opa`` (``sampler.rms`` is not
    used here). Each sample is normalised to the amplified shot noise at the
    same phase error. With ``direct=True`` the OPA is bypassed and only
    ``cfg.theta_opo`` applies. Standard errors are ``std / sqrt(n)``.
    """
    n_samples = int(n_samples)
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    t_opo, t_opa = cfg.theta_opo.rms, cfg.theta_opa.rms
    acc = {"minus": [], "plus": []}
    for dev in sampler.batches(n_samples, width=2):
        for key, rot in (("minus", 0.0), ("plus", math.pi / 2)):
            if direct:
                v = propagate_direct(cfg, t_opo * dev[0], rot)
            else:
                sig, shot = propagate_amplified(cfg, t_opo * dev[0], t_opa * dev[1], rot)
                v = sig / shot
            acc[key].append(np.atleast_1d(v))
    out = {}
    for key, chunks in acc.items():
        v = np.concatenate(chunks)
        se = float(v.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
        out[key] = (float(v.mean()), se)
    return SimulationResult(QuadraturePair(out["minus"][0], out["plus"][0]), out["minus"][1], out["plus"][1], n_samples)
