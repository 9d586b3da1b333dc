"""Zero-span noise traces and dark-noise clearance.

A zero-span trace records noise power against time at one analysis
frequency. Traces here are stored in dB; the convention for levels follows
a spectrum analyzer that does not subtract the dark floor, so every optical
trace carries the dark-noise contribution.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, TextIO

import numpy as np

from .chain import ChainConfig, amplified_readout
from .core import DomainError, to_db

TRACE_LABELS: tuple[str, ...] = ("squeezing", "antisqueezing", "amplified_shot", "shot", "dark")
DEFAULT_BIN_DURATION = 1e-3


@dataclass(frozen=True)
class NoiseFloor:
    """Detector dark noise in dB relative to the unamplified shot noise.

    Negative when the dark floor lies below shot noise; a value of ``-1``
    is one decibel of clearance.
    """

    dark_rel_shot_db: float

    def __post_init__(self):
        value = float(self.dark_rel_shot_db)
        if not math.isfinite(value):
            raise DomainError(f"dark_rel_shot_db must be finite, got {value!r}")
        object.__setattr__(self, "dark_rel_shot_db", value)

    @property
    def linear(self) -> float:
        return 10.0 ** (self.dark_rel_shot_db / 10.0)


def clearance(shot_db: float, dark_db: float) -> float:
    """Dark-noise clearance ``shot_db - dark_db`` in dB."""
    return float(shot_db) - float(dark_db)


def dark_limited_variance(v: float, floor: NoiseFloor, amplification_db: float = 0.0) -> float:
    """Variance observed against a shot-noise reference that also contains dark noise.

    Parameters
    ----------
    v : float
        True variance in units of the (amplified) shot noise.
    floor : NoiseFloor
        Dark noise relative to the unamplified shot noise.
    amplification_db : float
        Gain of the shot noise ahead of the detector, which lifts the
        signal above a fixed electronic floor.

    Returns
    -------
    float
        ``(v + d) / (1 + d)`` with ``d = 10**((dark - amplification)/10)``.
    """
    v = float(v)
    if not v > 0.0:
        raise DomainError(f"variance must be > 0, got {v!r}")
    d = 10.0 ** ((floor.dark_rel_shot_db - float(amplification_db)) / 10.0)
    return (v + d) / (1.0 + d)


@dataclass(frozen=True)
class TraceSet:
    """A group of equally long zero-span traces in dB.

    ``samples`` maps each label to its trace; ``reference`` names the trace
    that other traces are normalised to. ``metadata`` carries instrument
    settings such as RBW and VBW, which do not enter any computation.
    """

    labels: tuple[str, ...]
    reference: str
    samples: Mapping[str, np.ndarray]
    bin_duration: float = DEFAULT_BIN_DURATION
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = tuple(self.labels)
        if not labels:
            raise DomainError("a trace set needs at least one trace")
        if len(set(labels)) != len(labels):
            raise DomainError(f"duplicate trace labels in {labels}")
        if self.reference not in labels:
            raise DomainError(f"reference trace {self.reference!r} is not among {labels}")
        if set(self.samples) != set(labels):
            raise DomainError("samples must have exactly one array per label")
        arrays = {k: np.asarray(self.samples[k], dtype=float) for k in labels}
        lengths = {a.shape for a in arrays.values()}
        if len(lengths) != 1 or arrays[labels[0]].ndim != 1:
            raise DomainError("all traces must be one-dimensional and of equal length")
        if not self.bin_duration > 0:
            raise DomainError(f"bin_duration must be > 0, got {self.bin_duration!r}")
        for a in arrays.values():
            a.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "samples", arrays)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n_bins(self) -> int:
        return self.samples[self.labels[0]].size

    def times(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_duration

    def mean_db(self, label: str) -> float:
        """Mean level of a trace, averaged in dB as a spectrum analyzer display would."""
        return float(self.samples[label].mean())

    def relative_db(self, label: str) -> float:
        """Mean level of ``label`` minus the mean level of the reference trace."""
        return self.mean_db(label) - self.mean_db(self.reference)

    def normalized(self) -> "TraceSet":
        """Copy with the reference trace's mean subtracted from every trace."""
        ref = self.mean_db(self.reference)
        return TraceSet(
            self.labels,
            self.reference,
            {k: v - ref for k, v in self.samples.items()},
            self.bin_duration,
            self.metadata,
        )

    def write_csv(self, stream: TextIO) -> None:
        """Write ``bin_index,time_s,<labels>`` rows with 9 significant digits."""
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["bin_index", "time_s", *self.labels])
        t = self.times()
        columns = [self.samples[k] for k in self.labels]
        for i in range(self.n_bins):
            writer.writerow([i, f"{t[i]:.9g}", *(f"{c[i]:.9g}" for c in columns)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, stream: TextIO, reference: str) -> "TraceSet":
        rows = list(csv.reader(stream))
        if not rows or rows[0][:2] != ["bin_index", "time_s"] or len(rows[0]) < 3:
            raise DomainError("trace CSV must start with 'bin_index,time_s,<labels>'")
        labels = tuple(rows[0][2:])
        body = rows[1:]
        if not body:
            raise DomainError("trace CSV has no data rows")
        try:
            data = np.array([[float(v) for v in r] for r in body])
        except ValueError as exc:
            raise DomainError(f"non-numeric value in trace CSV: {exc}") from None
        if data.shape[1] != len(labels) + 2:
            raise DomainError("ragged trace CSV")
        dt = data[1, 1] - data[0, 1] if len(body) > 1 else DEFAULT_BIN_DURATION
        return cls(labels, reference, {k: data[:, 2 + i] for i, k in enumerate(labels)}, dt)


def synthesize_zero_span(
    levels: Mapping[str, float],
    n_bins: int,
    scatter_db: float = 0.0,
    seed: int = 0,
    reference: str | None = None,
    bin_duration: float = DEFAULT_BIN_DURATION,
    metadata: Mapping[str, str] | None = None,
) -> TraceSet:
    """Flat traces at the given dB levels plus Gaussian scatter.

    Trace ``k`` (in the iteration order of ``levels``) draws from child ``k``
    of ``SeedSequence(seed)``, so adding a trace does not perturb the others.
    ``reference`` defaults to ``"amplified_shot"`` when present, otherwise
    the first label.
    """
    n_bins = int(n_bins)
    if n_bins < 1:
        raise DomainError(f"n_bins must be >= 1, got {n_bins!r}")
    if not scatter_db >= 0:
        raise DomainError(f"scatter_db must be >= 0, got {scatter_db!r}")
    labels = tuple(levels)
    if reference is None:
        reference = "amplified_shot" if "amplified_shot" in labels else labels[0]
    samples = {}
    for label, child in zip(labels, np.random.SeedSequence(seed).spawn(len(labels))):
        rng = np.random.Generator(np.random.PCG64(child))
        samples[label] = float(levels[label]) + scatter_db * rng.standard_normal(n_bins)
    return TraceSet(labels, reference, samples, bin_duration, metadata or {})


@dataclass(frozen=True)
class TraceLevels:
    """Mean trace levels in dB relative to the amplified shot noise."""

    levels: dict[str, float]
    amplification_db: float
    observed_squeezing_db: float
    model_squeezing_db: float


def chain_trace_levels(
    cfg: ChainConfig,
    floor: NoiseFloor | None = None,
    amplification_db: float | None = None,
    labels: Sequence[str] = TRACE_LABELS,
) -> TraceLevels:
    """Trace levels predicted by the amplified chain.

    Powers are first expressed in units of the unamplified shot noise: the
    amplified shot noise is ``A``, the squeezed trace ``A * v_eff_minus``,
    and each optical trace also carries the dark floor. All are then
    referred to the amplified shot trace. ``amplification_db`` replaces the
    modelled ``A`` by a measured value; without a ``floor`` the dark trace
    is omitted and no dark noise is added.
    """
    pred = amplified_readout(cfg)
    a_db = to_db(pred.shot_reference) if amplification_db is None else float(amplification_db)
    a = 10.0 ** (a_db / 10.0)
    d = floor.linear if floor is not None else 0.0
    power = {
        "squeezing": a * pred.v_eff_minus + d,
        "antisqueezing": a * pred.v_eff_plus + d,
        "amplified_shot": a + d,
        "shot": 1.0 + d,
        "dark": d,
    }
    wanted = [k for k in labels if not (k == "dark" and floor is None)]
    unknown = set(wanted) - set(power)
    if unknown:
        raise DomainError(f"unknown trace labels {sorted(unknown)}; expected a subset of {TRACE_LABELS}")
    ref = power["amplified_shot"]
    levels = {k: to_db(power[k] / ref) for k in wanted}
    observed = to_db(power["squeezing"] / ref)
    return TraceLevels(levels, a_db, observed, pred.squeezing_db)
