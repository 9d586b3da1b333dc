"""``sqzchain`` command line: budget, sweep, fit, oracle-check and spectra.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 fit failure (no convergence or unidentifiable parameters), 4 oracle
mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import astuple, fields, replace
from typing import Callable, Sequence, TextIO

import numpy as np

from .. import oracle
from ..chain import (
    ChainConfig,
    OutOfModelError,
    SweepRow,
    amplified_readout,
    direct_readout,
    internal_loss_pump,
    sweep,
)
from ..core import DomainError, EfficiencyBudget, PumpDrive, to_db
from ..fit import (
    DEFAULT_SIGMA_DB,
    FitError,
    MeasurementRecord,
    bootstrap_fit,
    extract_effective_efficiency,
    fit_squeezing_model,
)
from ..spectra import NoiseFloor, chain_trace_levels, clearance, dark_limited_variance, synthesize_zero_span
from .config import ConfigError, RunConfig, emit_config, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_FIT, EXIT_ORACLE = 0, 1, 2, 3, 4
ORACLE_TOLERANCE = 1e-9
MEASUREMENT_HEADER = ("gain_opo", "v_minus_db", "v_plus_db", "sigma_db")
SWEEP_HEADER = tuple(f.name for f in fields(SweepRow))


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _g(value: float) -> str:
    return f"{value:.9g}"


def _num(value):
    """Round to the 9 significant digits used in every output."""
    if value is None:
        return None
    value = float(value)
    return float(_g(value)) if math.isfinite(value) else None


def _rounded(obj):
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    return _num(obj)


def _emit_report(report: dict, args, stream: TextIO) -> None:
    report = _rounded(report)
    if args.json:
        stream.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
        return
    for key, value in report.items():
        if isinstance(value, dict):
            stream.write(f"{key}:\n")
            for k, v in value.items():
                stream.write(f"  {k}: {_human(v)}\n")
        else:
            stream.write(f"{key}: {_human(value)}\n")


def _human(value) -> str:
    if isinstance(value, float):
        return _g(value)
    if isinstance(value, list):
        return ", ".join(_human(v) for v in value) if value else "none"
    return str(value)


# --- budget ------------------------------------------------------------------


def budget_report(cfg: RunConfig) -> dict:
    chain = cfg.chain()
    b = cfg.budget
    warnings = []
    direct = direct_readout(b, cfg.x_opo, cfg.theta_direct)
    amp = amplified_readout(chain)
    try:
        x_int = internal_loss_pump(b.eta_opa, chain.eta_det).x
    except DomainError as exc:
        x_int = None
        warnings.append(f"no loss-compensation point: {exc}")
    if x_int is not None and cfg.x_opa.x < x_int:
        warnings.append(
            f"G_opa = {_g(cfg.x_opa.gain())} is below the loss-compensation gain "
            f"{_g(PumpDrive(x_int).gain())}; eta_eff {_g(amp.eta_eff)} < eta_det {_g(chain.eta_det)}"
        )
    return {
        "g_opo": cfg.x_opo.gain(),
        "x_opo": cfg.x_opo.x,
        "g_opa": cfg.x_opa.gain(),
        "x_opa": cfg.x_opa.x,
        "eta_sqz_tilde": b.eta_sqz_tilde,
        "eta_det_total": b.eta_det_total,
        "eta_det": chain.eta_det,
        "eta_direct": b.eta_direct,
        "eta_eff": amp.eta_eff,
        "x_int": x_int,
        "g_int": PumpDrive(x_int).gain() if x_int is not None else None,
        "amplified_shot_gain_db": to_db(amp.amplified_shot_gain),
        "squeezing_without_opa_db": to_db(direct.v_minus),
        "antisqueezing_without_opa_db": to_db(direct.v_plus),
        "squeezing_with_opa_db": amp.squeezing_db,
        "antisqueezing_with_opa_db": amp.antisqueezing_db,
        "warnings": warnings,
    }


def _cmd_budget(cfg: RunConfig, args, out: TextIO) -> int:
    report = budget_report(cfg)
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    _emit_report(report, args, out)
    return EXIT_OK


# --- sweep -------------------------------------------------------------------


def sweep_rows(cfg: RunConfig, values: Sequence[float], variable: str, noise_db: float, seed: int) -> list[SweepRow]:
    rows = sweep(cfg.chain(), variable, values, theta_direct=cfg.theta_direct, omega=cfg.run.omega)
    if noise_db > 0:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        noisy = []
        for row in rows:
            n = noise_db * rng.standard_normal(4)
            noisy.append(
                replace(
                    row,
                    v_minus_db=row.v_minus_db + n[0],
                    v_plus_db=row.v_plus_db + n[1],
                    v_eff_minus_db=row.v_eff_minus_db + n[2],
                    v_eff_plus_db=row.v_eff_plus_db + n[3],
                )
            )
        rows = noisy
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        values = astuple(row)
        writer.writerow([values[0], *(_g(v) for v in values[1:])])


def _cmd_sweep(cfg: RunConfig, args, out: TextIO) -> int:
    run = cfg.run
    variable = args.variable or run.sweep_variable
    try:
        if args.values is not None:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        elif args.range:
            start, stop, n = args.range
            n = int(n)
            if n < 0:
                raise ValueError("N must be >= 0")
            values = replace(run, sweep_start=float(start), sweep_stop=float(stop), sweep_points=n).sweep_values()
        else:
            values = run.sweep_values()
    except ValueError as exc:
        raise UsageError(f"invalid sweep range: {exc}") from None
    noise = run.noise_db if args.noise_db is None else args.noise_db
    if noise < 0:
        raise UsageError("--noise-db must be >= 0")
    if variable in ("g_opo", "g_opa") and any(v < 1 for v in values):
        raise ConfigError(f"{variable} sweep values must be >= 1")
    write_sweep_csv(sweep_rows(cfg, values, variable, noise, run.seed), out)
    return EXIT_OK


# --- fit ---------------------------------------------------------------------


def _float_cell(text: str, column: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {lineno}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {lineno}: column {column!r} is not finite: {text!r}")
    return value


def read_measurements(stream: TextIO, model: str, sigma_db: float = DEFAULT_SIGMA_DB) -> list[MeasurementRecord]:
    """Read measurement records from either the measurement or the sweep CSV schema.

    The measurement schema may carry an optional trailing ``pump_power``
    column. For sweep output the OPO gain follows from ``x_opo`` and the
    amplified (``v_eff_*``) or direct (``v_*``) columns are used according
    to ``model``. Row numbers in errors count the header as row 1.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: expected a CSV header") from None
    header = tuple(h.strip() for h in header)
    if header[:4] == MEASUREMENT_HEADER and header[4:] in ((), ("pump_power",)):
        kind = "measurement"
    elif header == SWEEP_HEADER:
        kind = "sweep"
    else:
        raise DataError(
            "row 1: unrecognised header; expected " + ",".join(MEASUREMENT_HEADER) + " or " + ",".join(SWEEP_HEADER)
        )
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"row {lineno}: expected {len(header)} columns, got {len(row)}")
        cells = dict(zip(header, (c.strip() for c in row)))
        if kind == "measurement":
            vals = {k: _float_cell(cells[k], k, lineno) for k in header}
            gain, vm, vp, sig = vals["gain_opo"], vals["v_minus_db"], vals["v_plus_db"], vals["sigma_db"]
            power = vals.get("pump_power")
        else:
            x = _float_cell(cells["x_opo"], "x_opo", lineno)
            if not 0 <= x < 1:
                raise DataError(f"row {lineno}: x_opo must lie in [0, 1), got {x!r}")
            gain = 1.0 / (1.0 - x) ** 2
            prefix = "v_eff" if model == "amplified" else "v"
            vm = _float_cell(cells[f"{prefix}_minus_db"], f"{prefix}_minus_db", lineno)
            vp = _float_cell(cells[f"{prefix}_plus_db"], f"{prefix}_plus_db", lineno)
            sig, power = sigma_db, None
        try:
            records.append(MeasurementRecord(gain, vm, vp, sig, power))
        except DomainError as exc:
            raise DataError(f"row {lineno}: {exc}") from None
    if not records:
        raise DataError("no data rows")
    return records


def _parse_fix(items: Sequence[str]) -> dict[str, float]:
    fixed = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--fix expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            fixed[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--fix {k.strip()}: not a number: {v!r}") from None
    return fixed


def fit_report(records, cfg: RunConfig, args) -> dict:
    fixed = _parse_fix(args.fix)
    free = [s.strip() for s in args.free.split(",") if s.strip()] if args.free else None
    try:
        result = fit_squeezing_model(
            records, model=args.model, fixed=fixed, free=free, space=args.space, fit_threshold=args.fit_threshold
        )
    except DomainError as exc:
        raise DataError(str(exc)) from None
    stderr = result.stderr
    report = {
        "model": args.model,
        "space": args.space,
        "n_records": len(records),
        "params": dict(result.params),
        "stderr": stderr,
        "fixed": dict(result.fixed),
        "chi2": result.chi2,
        "n_dof": result.n_dof,
        "n_iter": result.n_iter,
        "converged": result.converged,
        "uncertainty_method": "jacobian",
    }
    if args.bootstrap:
        bs = bootstrap_fit(
            records,
            result,
            n_resamples=args.bootstrap,
            seed=cfg.run.seed,
            method=args.bootstrap_method,
            space=args.space,
            fit_threshold=args.fit_threshold,
        )
        report["jacobian_stderr"] = stderr
        report["stderr"] = bs.stderr
        report["uncertainty_method"] = f"bootstrap-{args.bootstrap_method}"
        report["bootstrap"] = {"n_resamples": args.bootstrap, "n_failed": bs.n_failed}
        result.covariance = bs.covariance
        result.uncertainty_method = report["uncertainty_method"]
    if args.extract_eta_eff:
        if args.model != "amplified" or "eta" not in result.params:
            raise UsageError("--extract-eta-eff needs --model amplified with the product parameter 'eta' free")
        tilde = cfg.budget.eta_sqz_tilde if args.eta_sqz_tilde is None else args.eta_sqz_tilde
        try:
            value = extract_effective_efficiency(result, tilde, args.eta_sqz_tilde_err)
        except DomainError as exc:
            raise UsageError(str(exc)) from None
        report["eta_sqz_tilde"] = tilde
        report["eta_eff"] = {"value": value.value, "sigma": value.sigma, "flags": list(value.flags)}
    return report


def _cmd_fit(cfg: RunConfig, args, out: TextIO, stdin: TextIO) -> int:
    sigma = cfg.run.sigma_db if args.sigma_db is None else args.sigma_db
    if not sigma > 0:
        raise UsageError("--sigma-db must be > 0")
    if args.data == "-":
        records = read_measurements(stdin, args.model, sigma)
    else:
        try:
            with open(args.data, newline="") as fh:
                records = read_measurements(fh, args.model, sigma)
        except OSError as exc:
            raise DataError(f"cannot read {args.data!r}: {exc.strerror}") from None
    _emit_report(fit_report(records, cfg, args), args, out)
    return EXIT_OK


# --- oracle-check ------------------------------------------------------------


def random_chain(rng: np.random.Generator) -> ChainConfig:
    """A random zero-jitter operating point inside the model's domain."""
    u = rng.uniform(size=9)
    budget = EfficiencyBudget(
        eta_opo=0.3 + 0.7 * u[0],
        eta_opa=0.5 + 0.5 * u[1],
        eta_mode_match=0.3 + 0.7 * u[2],
        eta_prop_other=0.3 + 0.7 * u[3],
        visibility=0.3 + 0.7 * u[4],
        eta_pd=0.3 + 0.7 * u[5],
    )
    return ChainConfig(
        budget=budget,
        x_opo=PumpDrive(0.95 * u[6]),
        x_opa=PumpDrive(0.95 * u[7]),
        theta_opo=0.0,
        theta_opa=0.0,
        opa_quadrature="amplify" if u[8] < 0.5 else "deamplify",
        visibility_in_detection=bool(rng.integers(0, 2)),
    )


def _describe(chain: ChainConfig) -> dict:
    b = chain.budget
    out = {f.name: getattr(b, f.name) for f in fields(EfficiencyBudget)}
    out.update(
        x_opo=chain.x_opo.x,
        x_opa=chain.x_opa.x,
        opa_quadrature=chain.opa_quadrature,
        visibility_in_detection=chain.visibility_in_detection,
    )
    return out


def oracle_check(
    n_random: int,
    seed: int,
    closed_form: Callable[[ChainConfig], object] | None = None,
    tolerance: float = ORACLE_TOLERANCE,
) -> dict:
    """Compare the closed-form readout with the covariance simulator on random chains.

    Checked quantities: normalised squeezed and antisqueezed variances,
    the amplified shot noise, and the direct (OPA bypassed) variance.
    ``closed_form`` defaults to :func:`~sqzchain.chain.amplified_readout`
    and is injectable so a deliberately broken formula can serve as a
    negative control.
    """
    if n_random < 1:
        raise UsageError("n_random must be >= 1")
    closed_form = closed_form or amplified_readout
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    worst, worst_case, worst_quantity = -1.0, None, None
    for _ in range(n_random):
        chain = random_chain(rng)
        pred = closed_form(chain)
        signal, shot = oracle.propagate_amplified(chain, rotate_source=np.array([0.0, math.pi / 2]))
        direct = direct_readout(chain.budget, chain.x_opo)
        sim_direct = oracle.propagate_direct(chain, rotate_source=np.array([0.0, math.pi / 2]))
        pairs = {
            "v_eff_minus": (pred.v_eff_minus, signal[0] / shot),
            "v_eff_plus": (pred.v_eff_plus, signal[1] / shot),
            "amplified_shot": (pred.shot_reference, shot),
            "v_direct_minus": (direct.v_minus, sim_direct[0]),
            "v_direct_plus": (direct.v_plus, sim_direct[1]),
        }
        for name, (a, b) in pairs.items():
            dev = abs(a - b) / abs(b)
            if not dev <= worst:
                worst, worst_case, worst_quantity = dev, chain, name
    passed = bool(worst <= tolerance)
    return {
        "n_random": n_random,
        "seed": seed,
        "tolerance": tolerance,
        "max_rel_deviation": worst,
        "worst_quantity": worst_quantity,
        "worst_case": _describe(worst_case),
        "passed": passed,
    }


def _cmd_oracle_check(cfg: RunConfig, args, out: TextIO) -> int:
    n = cfg.run.n_random if args.n_random is None else args.n_random
    report = oracle_check(n, cfg.run.seed)
    _emit_report(report, args, out)
    if not report["passed"]:
        print(
            f"oracle mismatch: max relative deviation {_g(report['max_rel_deviation'])} "
            f"in {report['worst_quantity']} exceeds {_g(ORACLE_TOLERANCE)}",
            file=sys.stderr,
        )
        return EXIT_ORACLE
    return EXIT_OK


# --- spectra -----------------------------------------------------------------


def spectra_summary(cfg: RunConfig, levels) -> dict:
    run = cfg.run
    summary = {
        "model_squeezing_db": levels.model_squeezing_db,
        "observed_squeezing_db": levels.observed_squeezing_db,
        "amplification_db": levels.amplification_db,
        "levels_db": dict(levels.levels),
    }
    if run.dark_rel_shot_db is not None:
        floor = NoiseFloor(run.dark_rel_shot_db)
        v = 10.0 ** (levels.model_squeezing_db / 10.0)
        summary["clearance_unamplified_db"] = clearance(0.0, floor.dark_rel_shot_db)
        summary["clearance_amplified_db"] = clearance(levels.amplification_db, floor.dark_rel_shot_db)
        summary["observed_squeezing_unamplified_db"] = to_db(dark_limited_variance(v, floor, 0.0))
    return summary


def _cmd_spectra(cfg: RunConfig, args, out: TextIO) -> int:
    run = cfg.run
    floor = NoiseFloor(run.dark_rel_shot_db) if run.dark_rel_shot_db is not None else None
    levels = chain_trace_levels(cfg.chain(), floor, run.amplification_db)
    scatter = 0.0 if args.zero_scatter else run.scatter_db
    n_bins = run.n_bins if args.n_bins is None else args.n_bins
    if n_bins < 1:
        raise UsageError("--n-bins must be >= 1")
    metadata = {k: _g(getattr(run, k)) for k in ("rbw_hz", "vbw_hz", "analysis_freq_hz") if getattr(run, k) is not None}
    traces = synthesize_zero_span(levels.levels, n_bins, scatter, run.seed, "amplified_shot", run.bin_duration, metadata)
    traces.write_csv(out)
    summary = _rounded(spectra_summary(cfg, levels))
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True), file=sys.stderr)
    else:
        for key in ("observed_squeezing_db", "model_squeezing_db", "amplification_db"):
            print(f"{key}: {_human(summary[key])}", file=sys.stderr)
    return EXIT_OK


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="config file or bundled name (paper_table1, paper_fig5)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override [run] seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="write the primary output to PATH")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable report")
    common.add_argument("--emit-config", action="store_true", default=argparse.SUPPRESS, help="print the normalised config and exit")

    parser = _Parser(prog="sqzchain", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("budget", parents=[common], help="noise budget at the configured operating point")

    p = sub.add_parser("sweep", parents=[common], help="sweep one variable and write CSV")
    p.add_argument("--variable", choices=("g_opo", "g_opa", "omega"))
    p.add_argument("--range", nargs=3, metavar=("START", "STOP", "N"))
    p.add_argument("--values", help="comma-separated explicit values")
    p.add_argument("--noise-db", type=float, help="add seeded Gaussian noise (dB) to the level columns")

    p = sub.add_parser("fit", parents=[common], help="fit efficiency and phase noise to squeezing data")
    p.add_argument("data", help="CSV file, or - for stdin")
    p.add_argument("--model", choices=("direct", "amplified"), default="direct")
    p.add_argument("--free", help="comma-separated free parameters")
    p.add_argument("--fix", action="append", metavar="NAME=VALUE", help="hold a parameter fixed (repeatable)")
    p.add_argument("--space", choices=("db", "linear"), default="db")
    p.add_argument("--fit-threshold", action="store_true", help="fit the threshold power from pump_power")
    p.add_argument("--sigma-db", type=float, help="uncertainty for sweep-schema input")
    p.add_argument("--bootstrap", type=int, metavar="N", default=0)
    p.add_argument("--bootstrap-method", choices=("parametric", "residual"), default="parametric")
    p.add_argument("--extract-eta-eff", action="store_true")
    p.add_argument("--eta-sqz-tilde", type=float)
    p.add_argument("--eta-sqz-tilde-err", type=float, default=0.0)

    p = sub.add_parser("oracle-check", parents=[common], help="closed form vs covariance simulator")
    p.add_argument("--n-random", type=int)

    p = sub.add_parser("spectra", parents=[common], help="synthesise zero-span traces as CSV")
    p.add_argument("--zero-scatter", action="store_true")
    p.add_argument("--n-bins", type=int)
    return parser


def run(argv: Sequence[str] | None = None, stdout: TextIO | None = None, stdin: TextIO | None = None) -> int:
    stdout = stdout or sys.stdout
    stdin = stdin or sys.stdin
    try:
        args = build_parser().parse_args(argv)
        for name, default in (("config", None), ("seed", None), ("out", None), ("json", False), ("emit_config", False)):
            if not hasattr(args, name):
                setattr(args, name, default)
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise UsageError("--seed must be >= 0")
            cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
        if args.emit_config:
            stdout.write(emit_config(cfg))
            return EXIT_OK
        if args.command is None:
            raise UsageError("sqzchain: a subcommand is required (budget, sweep, fit, oracle-check, spectra)")
        buf = io.StringIO()
        if args.command == "fit":
            code = _cmd_fit(cfg, args, buf, stdin)
        else:
            handler = {
                "budget": _cmd_budget,
                "sweep": _cmd_sweep,
                "oracle-check": _cmd_oracle_check,
                "spectra": _cmd_spectra,
            }[args.command]
            code = handler(cfg, args, buf)
        if args.out:
            try:
                with open(args.out, "w", newline="") as fh:
                    fh.write(buf.getvalue())
            except OSError as exc:
                raise UsageError(f"cannot write {args.out!r}: {exc.strerror}") from None
        else:
            stdout.write(buf.getvalue())
        return code
    except (UsageError, ConfigError, OutOfModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))
