"""Acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line to the terminal (visible even when
output is captured) before asserting, so ``pytest -v`` shows the verdicts.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from sqzchain.chain import (
    ChainConfig,
    amplified_readout,
    amplified_shot_gain,
    direct_readout,
    effective_efficiency,
    internal_loss_pump,
)
from sqzchain.cli.config import load_config
from sqzchain.cli.main import oracle_check
from sqzchain.core import PhaseJitter, PumpDrive, to_db
from sqzchain.fit import MeasurementRecord, bootstrap_fit, fit_squeezing_model, squeezing_model
from sqzchain.oracle import JitterSampler, simulate_chain
from sqzchain.spectra import NoiseFloor, chain_trace_levels, dark_limited_variance

ETA_OPA, PD = 0.973, 0.74


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail

    return report


def per_call(fn, repeats=2000):
    """Median over five batches of the mean wall time per call."""
    fn()
    times = []
    for _ in range(5):
        t = time.perf_counter()
        for _ in range(repeats):
            fn()
        times.append((time.perf_counter() - t) / repeats)
    return float(np.median(times))


def test_criterion_01_loss_compensation_gain(verdict):
    g = internal_loss_pump(ETA_OPA, PD).gain()
    dt = per_call(lambda: internal_loss_pump(ETA_OPA, PD))
    ok = abs(g - 1.245) <= 0.005 and dt < 1e-3
    verdict(1, "loss-compensation gain", ok, f"G_int = {g:.4f} (1.245 +/- 0.005), {dt * 1e6:.1f} us/call")


def test_criterion_02_effective_efficiency_plateau(verdict):
    eta = effective_efficiency(PumpDrive.from_gain(12.0), ETA_OPA, PD)
    x_int = internal_loss_pump(ETA_OPA, PD).x
    gains = np.linspace(1.0, 20.0, 2001)
    curve = np.array([effective_efficiency(PumpDrive.from_gain(g), ETA_OPA, PD) for g in gains])
    above = curve[1 - 1 / np.sqrt(gains) >= x_int]
    monotone = bool(np.all(np.diff(above) >= 0))
    bounded = bool(np.all(curve <= ETA_OPA))
    ok = abs(eta - 0.953) <= 0.003 and monotone and bounded
    verdict(2, "effective-efficiency plateau", ok,
            f"eta_eff(12) = {eta:.4f} (0.953 +/- 0.003), monotone above x_int: {monotone}, <= eta_opa: {bounded}")


def test_criterion_03_compensation_identity(verdict):
    rng = np.random.default_rng(20260301)
    worst = 0.0
    for _ in range(100):
        eta_opa = rng.uniform(0.5, 0.999)
        eta_det = rng.uniform(0.05, eta_opa)
        x_int = internal_loss_pump(eta_opa, eta_det).x
        assert x_int < 1
        worst = max(worst, abs(effective_efficiency(x_int, eta_opa, eta_det) - eta_det))
    verdict(3, "eta_eff(x_int) = eta_det", worst <= 1e-10, f"max |deviation| = {worst:.2e} over 100 pairs (<= 1e-10)")


def test_criterion_04_squeezing_improvement(verdict):
    cfg = load_config("paper_table1")
    chain = cfg.chain()
    direct = to_db(direct_readout(chain.budget, chain.x_opo, cfg.theta_direct).v_minus)
    amplified = amplified_readout(chain).squeezing_db
    dt = per_call(lambda: amplified_readout(chain))
    ok = abs(direct + 4.3) <= 0.5 and abs(amplified + 8.1) <= 1.0 and dt < 1e-3
    verdict(4, "squeezing improvement", ok,
            f"direct {direct:.2f} dB (-4.3 +/- 0.5), amplified {amplified:.2f} dB (-8.1 +/- 1.0), "
            f"{dt * 1e6:.1f} us/call")


def test_criterion_05_amplification_level(verdict):
    chain = load_config("paper_table1").chain()
    gain_db = to_db(amplified_shot_gain(chain.x_opa, chain.budget.eta_opa, chain.eta_det))
    # the photodiode-only detection efficiency gives the other end of the window
    alt_db = to_db(amplified_shot_gain(chain.x_opa, chain.budget.eta_opa, PD))
    ok = 13.8 <= gain_db <= 14.3 and 13.8 <= alt_db <= 14.3
    verdict(5, "amplification level", ok, f"{gain_db:.2f} dB, photodiode-only {alt_db:.2f} dB (in [13.8, 14.3])")


def test_criterion_06_opa_phase_noise_tolerance(verdict):
    base = load_config("paper_table1").chain()
    worst = 0.0
    for g in (10.0, 12.0):
        cfg = replace(base, x_opo=PumpDrive.from_gain(g))
        noisy = amplified_readout(cfg).squeezing_db
        clean = amplified_readout(replace(cfg, theta_opa=PhaseJitter(0.0))).squeezing_db
        worst = max(worst, abs(noisy - clean))
    verdict(6, "OPA phase-noise tolerance", worst < 0.5,
            f"max change {worst:.3f} dB toggling theta_opa 0 <-> 218 mrad at G_opo in {{10, 12}} (< 0.5)")


def test_criterion_07_oracle_equivalence(verdict):
    t = time.perf_counter()
    report = oracle_check(1000, seed=0)
    dt = time.perf_counter() - t
    ok = report["max_rel_deviation"] <= 1e-9 and dt < 5.0
    verdict(7, "oracle equivalence", ok,
            f"max rel deviation {report['max_rel_deviation']:.2e} over 1000 configs (<= 1e-9), {dt:.2f} s (< 5)")


def test_criterion_08_monte_carlo_jitter(verdict):
    cfg = ChainConfig(theta_opo=PhaseJitter(0.046))
    pred = amplified_readout(cfg)
    t = time.perf_counter()
    res = simulate_chain(cfg, JitterSampler("two-point", seed=8), 1_000_000)
    dt = time.perf_counter() - t
    z_minus = abs(res.pair.v_minus - pred.v_eff_minus) / res.stderr_minus
    z_plus = abs(res.pair.v_plus - pred.v_eff_plus) / res.stderr_plus
    # direct path: +/-theta give identical variances, so agreement is at roundoff
    chain = load_config("paper_table1").chain()
    direct = simulate_chain(replace(chain, theta_opo=PhaseJitter(0.046)), JitterSampler("two-point", seed=8),
                            1_000_000, direct=True)
    exact = direct_readout(chain.budget, chain.x_opo, 0.046)
    d_dev = max(abs(direct.pair.v_minus - exact.v_minus), abs(direct.pair.v_plus - exact.v_plus) / exact.v_plus)
    ok = z_minus <= 3 and z_plus <= 3 and d_dev <= max(3 * direct.stderr_minus, 1e-12) and dt < 10.0
    verdict(8, "Monte Carlo two-point jitter", ok,
            f"amplified |z| = {z_minus:.2f}, {z_plus:.2f} (<= 3), direct deviation {d_dev:.1e}, {dt:.2f} s (< 10)")


def test_criterion_09_fit_roundtrip_and_coverage(verdict):
    gains = np.array([2.0, 4.0, 8.0, 16.0])
    eta, theta, sigma = 0.6909, 0.046, 0.1
    vm, vp = squeezing_model(1 - 1 / np.sqrt(gains), eta, theta)
    clean = np.concatenate([to_db(vm), to_db(vp)])

    def records(data):
        return [MeasurementRecord(g, data[i], data[i + len(gains)], sigma) for i, g in enumerate(gains)]

    t = time.perf_counter()
    exact = fit_squeezing_model(records(clean))
    err = max(abs(exact.params["eta"] - eta), abs(exact.params["theta"] - theta))

    hits = np.zeros(2)
    children = np.random.SeedSequence(0).spawn(500)
    for k, child in enumerate(children):
        data = clean + np.random.default_rng(child).normal(0.0, sigma, clean.size)
        recs = records(data)
        res = fit_squeezing_model(recs)
        boot = bootstrap_fit(recs, res, n_resamples=200, seed=k)
        hits += [abs(res.params["eta"] - eta) <= boot.stderr["eta"],
                 abs(res.params["theta"] - theta) <= boot.stderr["theta"]]
    dt = time.perf_counter() - t
    coverage = hits / len(children)
    ok = err <= 1e-6 and bool(np.all(np.abs(coverage - 0.68) <= 0.05)) and dt < 60.0
    verdict(9, "fit round-trip and bootstrap coverage", ok,
            f"noiseless error {err:.1e} (<= 1e-6), 1-sigma coverage eta {coverage[0]:.3f} theta {coverage[1]:.3f} "
            f"(0.68 +/- 0.05), {dt:.1f} s (< 60)")


def test_criterion_10_dark_noise_clearance(verdict):
    cfg = load_config("paper_fig5")
    floor = NoiseFloor(cfg.run.dark_rel_shot_db)
    levels = chain_trace_levels(cfg.chain(), floor, amplification_db=cfg.run.amplification_db)
    v = amplified_readout(cfg.chain()).v_eff_minus
    loss_bare = to_db(dark_limited_variance(v, floor, 0.0)) - to_db(v)
    loss_amp = to_db(dark_limited_variance(v, floor, cfg.run.amplification_db)) - to_db(v)
    observed = levels.observed_squeezing_db
    ok = -8.0 <= observed <= -5.0 and -8.0 <= -6.5 <= -5.0 and loss_bare >= 3.0 and loss_amp < loss_bare
    verdict(10, "dark-noise clearance", ok,
            f"observed {observed:.2f} dB (in [-8, -5]), unamplified loss {loss_bare:.2f} dB (>= 3), "
            f"amplified loss {loss_amp:.2f} dB")
    assert math.isclose(levels.amplification_db, 12.0)
