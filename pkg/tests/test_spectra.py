import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqzchain.chain import ChainConfig, amplified_readout
from sqzchain.core import DomainError, PumpDrive, to_db
from sqzchain.spectra import (
    TRACE_LABELS,
    NoiseFloor,
    TraceSet,
    chain_trace_levels,
    clearance,
    dark_limited_variance,
    synthesize_zero_span,
)

FIG5 = ChainConfig(x_opo=PumpDrive.from_gain(3.0), x_opa=PumpDrive.from_gain(19.0))


def test_clearance_cases():
    assert clearance(-95.0, -95.0) == 0.0
    # dark 1 dB below shot noise without amplification
    assert clearance(0.0, -1.0) == 1.0
    assert clearance(12.0, -1.0) == 13.0


@given(st.floats(-200, 200), st.floats(-200, 200))
def test_clearance_antisymmetric(a, b):
    assert clearance(a, b) == -clearance(b, a)


def test_no_dark_noise_leaves_variance():
    assert dark_limited_variance(0.25, NoiseFloor(-400.0), 0.0) == pytest.approx(0.25)


def test_dark_limited_amplified_and_unamplified():
    v = 0.243
    floor = NoiseFloor(-1.0)
    amp = dark_limited_variance(v, floor, 12.0)
    d = 10 ** (-13 / 10)
    assert amp == pytest.approx((v + d) / (1 + d), rel=1e-14)
    assert amp == pytest.approx(0.279, abs=1e-3)
    assert to_db(amp) == pytest.approx(-5.5, abs=0.05)
    bare = dark_limited_variance(v, floor, 0.0)
    assert bare == pytest.approx(0.58, abs=0.01)
    assert to_db(bare) == pytest.approx(-2.4, abs=0.05)


def test_dark_limited_rejects_nonpositive():
    with pytest.raises(DomainError):
        dark_limited_variance(0.0, NoiseFloor(-1.0))
    with pytest.raises(DomainError):
        NoiseFloor(float("nan"))


@given(st.floats(0.01, 10.0), st.floats(-40, 40), st.floats(-40, 40))
def test_dark_limited_monotone_in_dark_level(v, dark_a, dark_b):
    lo, hi = sorted((dark_a, dark_b))
    a = dark_limited_variance(v, NoiseFloor(lo))
    b = dark_limited_variance(v, NoiseFloor(hi))
    if v < 1:
        assert b >= a - 1e-15
    elif v > 1:
        assert b <= a + 1e-15
    assert dark_limited_variance(1.0, NoiseFloor(lo)) == pytest.approx(1.0, abs=1e-15)


def test_dark_limited_limits():
    assert dark_limited_variance(0.2, NoiseFloor(-300.0)) == pytest.approx(0.2, rel=1e-12)
    assert dark_limited_variance(0.2, NoiseFloor(300.0)) == pytest.approx(1.0, rel=1e-12)


# --- traces ------------------------------------------------------------------


def test_zero_scatter_gives_flat_traces():
    ts = synthesize_zero_span({"shot": -3.0, "amplified_shot": 0.0}, 50, 0.0, seed=1)
    np.testing.assert_array_equal(ts.samples["shot"], np.full(50, -3.0))
    assert ts.reference == "amplified_shot"
    assert ts.relative_db("shot") == -3.0


def test_seed_reproducibility():
    levels = {"squeezing": -8.0, "amplified_shot": 0.0}
    a = synthesize_zero_span(levels, 100, 0.2, seed=4)
    b = synthesize_zero_span(levels, 100, 0.2, seed=4)
    for k in levels:
        np.testing.assert_array_equal(a.samples[k], b.samples[k])
    c = synthesize_zero_span(levels, 100, 0.2, seed=5)
    assert not np.array_equal(a.samples["squeezing"], c.samples["squeezing"])


def test_trace_statistics():
    n, sigma = 4000, 0.2
    ts = synthesize_zero_span({"squeezing": -8.0, "amplified_shot": 0.0}, n, sigma, seed=8)
    for label, level in (("squeezing", -8.0), ("amplified_shot", 0.0)):
        s = ts.samples[label]
        assert abs(s.mean() - level) <= 3 * sigma / math.sqrt(n)
        # chi-square with n-1 dof: relative spread of the variance is sqrt(2/(n-1))
        ratio = s.var(ddof=1) / sigma**2
        assert abs(ratio - 1) <= 4 * math.sqrt(2 / (n - 1))


def test_trace_set_validation():
    with pytest.raises(DomainError):
        TraceSet(("a",), "b", {"a": np.zeros(3)})
    with pytest.raises(DomainError):
        TraceSet(("a", "b"), "a", {"a": np.zeros(3), "b": np.zeros(4)})
    with pytest.raises(DomainError):
        synthesize_zero_span({"a": 0.0}, 0)
    with pytest.raises(DomainError):
        synthesize_zero_span({"a": 0.0}, 5, scatter_db=-1)


def test_csv_roundtrip():
    ts = synthesize_zero_span({"squeezing": -8.0, "amplified_shot": 0.0}, 5, 0.2, seed=2, bin_duration=0.01)
    text = ts.to_csv()
    assert text.splitlines()[0] == "bin_index,time_s,squeezing,amplified_shot"
    back = TraceSet.read_csv(io.StringIO(text), "amplified_shot")
    assert back.labels == ts.labels and back.bin_duration == pytest.approx(0.01)
    np.testing.assert_allclose(back.samples["squeezing"], ts.samples["squeezing"], rtol=1e-8)


def test_chain_levels_at_operating_point():
    cfg = ChainConfig()
    lv = chain_trace_levels(cfg)
    pred = amplified_readout(cfg)
    assert tuple(lv.levels) == ("squeezing", "antisqueezing", "amplified_shot", "shot")
    assert lv.levels["amplified_shot"] == 0.0
    assert lv.levels["squeezing"] == pytest.approx(pred.squeezing_db, abs=1e-12)
    assert lv.levels["squeezing"] == pytest.approx(-8.1, abs=1.0)
    assert lv.levels["antisqueezing"] == pytest.approx(14.0, abs=0.5)
    assert lv.levels["shot"] == pytest.approx(-lv.amplification_db, abs=1e-12)


def test_chain_levels_with_dark_floor():
    lv = chain_trace_levels(FIG5, NoiseFloor(-1.0), amplification_db=12.0)
    assert tuple(lv.levels) == TRACE_LABELS
    # the displayed shot trace carries the dark floor: 1 dB optical clearance shows as 10*log10(1 + 1/d)
    d = 10 ** (-0.1)
    assert lv.levels["shot"] - lv.levels["dark"] == pytest.approx(to_db(1 + 1 / d), abs=1e-12)
    v = amplified_readout(FIG5).v_eff_minus
    expected = to_db(dark_limited_variance(v, NoiseFloor(-1.0), 12.0))
    assert lv.observed_squeezing_db == pytest.approx(expected, abs=1e-12)
    assert -8.0 <= lv.observed_squeezing_db <= -5.0


def test_unknown_trace_label():
    with pytest.raises(DomainError):
        chain_trace_levels(ChainConfig(), labels=("squeezing", "blue"))
