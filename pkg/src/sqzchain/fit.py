"""Least-squares estimation of efficiency and phase noise from squeezing-vs-gain data.

The squeezing and antisqueezing of each record are fitted simultaneously,
by default on dB residuals. Direct detection and the amplified readout share
one functional form: the amplified readout simply replaces the detection
efficiency by the product ``eta_sqz_tilde * eta_eff``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import DomainError, ValueWithError

DEFAULT_SIGMA_DB = 0.2
_ROUNDOFF = 1e-14
_DB = 10.0 / math.log(10.0)


class FitError(RuntimeError):
    """Base class for fitting failures."""


class ConvergenceError(FitError):
    def __init__(self, message: str, best: "FitResult"):
        super().__init__(message)
        self.best = best


class RankDeficiencyError(FitError):
    def __init__(self, message: str, direction: dict[str, float]):
        super().__init__(message)
        self.direction = direction


class NonFiniteObjectiveError(FitError, ValueError):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    """One measured squeezing/antisqueezing pair at a given OPO gain.

    ``pump_power`` is only needed when the threshold power is fitted.
    """

    gain_opo: float
    v_minus_db: float
    v_plus_db: float
    sigma_db: float = DEFAULT_SIGMA_DB
    pump_power: float | None = None

    def __post_init__(self):
        if not self.gain_opo >= 1.0:
            raise DomainError(f"gain_opo must be >= 1, got {self.gain_opo!r}")
        if not self.sigma_db > 0.0:
            raise DomainError(f"sigma_db must be > 0, got {self.sigma_db!r}")


@dataclass
class FitResult:
    """Outcome of a least-squares fit.

    ``covariance`` is in natural parameter units; ``covariance_internal`` in
    the unconstrained coordinates the optimiser works in (logit for
    efficiencies, the signed value for phase noise, log for threshold power).
    """

    params: dict[str, float]
    covariance: np.ndarray
    residuals: np.ndarray
    chi2: float
    n_dof: int
    param_names: tuple[str, ...] = ()
    covariance_internal: np.ndarray | None = None
    internal: np.ndarray | None = None
    n_iter: int = 0
    converged: bool = True
    message: str = ""
    fixed: dict[str, float] = field(default_factory=dict)
    uncertainty_method: str = "jacobian"

    @property
    def stderr(self) -> dict[str, float]:
        d = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))
        return dict(zip(self.param_names, map(float, d)))

    def to_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "stderr": self.stderr,
            "covariance": np.asarray(self.covariance).tolist(),
            "chi2": self.chi2,
            "n_dof": self.n_dof,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "fixed": dict(self.fixed),
            "uncertainty_method": self.uncertainty_method,
        }


def _jacobian(fun, P, R, rows, lo, hi):
    """Central-difference Jacobian for a batch of parameter vectors, shape (B, m, n)."""
    B, n = P.shape
    h = np.maximum(1e-7, 1e-7 * np.abs(P))
    up = np.minimum(P + h, hi)
    dn = np.maximum(P - h, lo)
    probe = np.repeat(P[:, None, :], 2 * n, axis=1)
    k = np.arange(n)
    probe[:, k, k] = up
    probe[:, n + k, k] = dn
    out = fun(probe.reshape(B * 2 * n, n), np.repeat(rows, 2 * n)).reshape(B, 2 * n, -1)
    return np.swapaxes((out[:, :n] - out[:, n:]) / (up - dn)[:, :, None], 1, 2)


def _rank_check(jac, names, rcond=1e-6):
    norms = np.linalg.norm(jac, axis=0)
    if np.any(norms == 0.0):
        i = int(np.argmin(norms))
        return {names[k]: float(k == i) for k in range(len(names))}
    _, s, vt = np.linalg.svd(jac / norms, full_matrices=False)
    if s[-1] < rcond * s[0]:
        v = vt[-1] / norms
        v = v / np.abs(v).max()
        return dict(zip(names, map(float, v)))
    return None


_STATUS = {
    0: "maximum iterations reached",
    1: "gradient norm below tolerance",
    2: "relative step below tolerance",
    3: "predicted reduction at roundoff level",
}


@dataclass
class _BatchState:
    P: np.ndarray
    R: np.ndarray
    cost: np.ndarray
    J: np.ndarray
    status: np.ndarray
    n_iter: np.ndarray


def _lm_batch(fun, P0, rows, lo, hi, names, max_iter, xtol, gtol) -> _BatchState:
    """Levenberg-Marquardt on a batch of independent problems sharing one residual function.

    ``fun(P, rows)`` maps parameter rows ``P`` (k, n) belonging to problems
    ``rows`` (k,) to residuals (k, m). Every problem keeps its own damping
    and stopping state; the iteration is otherwise identical to running them
    one at a time.
    """

    def evaluate(P, r):
        R = np.asarray(fun(P, r), dtype=float)
        if not np.isfinite(R).all():
            bad = int(np.flatnonzero(~np.isfinite(R).all(axis=1))[0])
            raise NonFiniteObjectiveError(
                "objective is not finite at " + ", ".join(f"{k}={v:.10g}" for k, v in zip(names, P[bad]))
            )
        return R

    P = np.clip(np.array(P0, dtype=float), lo, hi)
    B, n = P.shape
    bounded = bool(np.isfinite(lo).any() or np.isfinite(hi).any())
    R = evaluate(P, rows)
    if R.shape[1] < n:
        raise RankDeficiencyError(f"{n} free parameters but only {R.shape[1]} residuals", {k: 1.0 for k in names})
    cost = np.einsum("bm,bm->b", R, R)
    J = _jacobian(evaluate, P, R, rows, lo, hi)
    mu, nu = np.full(B, 1e-6), np.full(B, 2.0)
    status = np.zeros(B, dtype=int)
    n_iter = np.zeros(B, dtype=int)
    eye = np.eye(n)

    g = np.empty((B, n))
    frozen = np.zeros((B, n), dtype=bool)
    gnorm = np.empty(B)
    jtj = np.empty((B, n, n))

    def normal_equations(idx):
        gi = np.einsum("bmn,bm->bn", J[idx], R[idx])
        if bounded:
            fr = ((P[idx] <= lo) & (gi > 0)) | ((P[idx] >= hi) & (gi < 0))
            frozen[idx] = fr
            gnorm[idx] = np.sqrt(np.einsum("bn,bn->b", np.where(fr, 0.0, gi), np.where(fr, 0.0, gi)))
        else:
            gnorm[idx] = np.sqrt(np.einsum("bn,bn->b", gi, gi))
        g[idx] = gi
        jtj[idx] = np.einsum("bmi,bmj->bij", J[idx], J[idx])

    normal_equations(np.arange(B))
    for _ in range(max_iter):
        status[(status == 0) & (gnorm < gtol)] = 1
        idx = np.flatnonzero(status == 0)
        if idx.size == 0:
            break
        A = jtj[idx] + mu[idx, None, None] * (np.maximum(np.diagonal(jtj[idx], axis1=1, axis2=2), 1e-300)[:, :, None] * eye)
        rhs = -g[idx]
        if bounded:
            fr = frozen[idx]
            mask = fr[:, :, None] | fr[:, None, :]
            A = np.where(mask, 0.0, A) + fr[:, :, None] * eye
            rhs = np.where(fr, 0.0, rhs)
        try:
            step = np.linalg.solve(A, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(a, b, rcond=None)[0] for a, b in zip(A, rhs)])
        trial = np.clip(P[idx] + step, lo, hi)
        step = trial - P[idx]
        pn = np.sqrt(np.einsum("bn,bn->b", P[idx], P[idx]))
        small = np.sqrt(np.einsum("bn,bn->b", step, step)) <= xtol * (pn + xtol)
        lin = R[idx] + np.einsum("bmn,bn->bm", J[idx], step)
        predicted = cost[idx] - np.einsum("bm,bm->b", lin, lin)
        # no further improvement is resolvable in floating point
        tiny = ~small & (predicted <= _ROUNDOFF * cost[idx])
        status[idx[small]] = 2
        status[idx[tiny]] = 3
        go = ~(small | tiny)
        if not go.any():
            continue
        sub = idx[go]
        R_new = evaluate(trial[go], rows[sub])
        c_new = np.einsum("bm,bm->b", R_new, R_new)
        rho = (cost[sub] - c_new) / predicted[go]
        ok = (c_new < cost[sub]) & (rho > 0)
        acc = sub[ok]
        if acc.size:
            P[acc], R[acc], cost[acc] = trial[go][ok], R_new[ok], c_new[ok]
            J[acc] = _jacobian(evaluate, P[acc], R[acc], rows[acc], lo, hi)
            normal_equations(acc)
            mu[acc] *= np.maximum(1.0 / 3.0, 1.0 - (2.0 * rho[ok] - 1.0) ** 3)
            nu[acc] = 2.0
            n_iter[acc] += 1
        rej = sub[~ok]
        mu[rej] *= nu[rej]
        nu[rej] *= 2.0
    return _BatchState(P, R, cost, J, status, n_iter)


def _bounds(bounds, n):
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    return tuple(np.broadcast_to(np.asarray(b, dtype=float), (n,)).copy() for b in bounds)


def lm_optimize(
    objective: Callable[[np.ndarray], np.ndarray],
    init: Sequence[float],
    bounds: tuple[Sequence[float], Sequence[float]] | None = None,
    names: Sequence[str] | None = None,
    max_iter: int = 200,
    xtol: float = 1e-10,
    gtol: float = 1e-12,
    vectorized: bool = False,
) -> FitResult:
    """Minimise ``sum(objective(p)**2)`` with a damped Gauss-Newton (Levenberg-Marquardt) iteration.

    The Jacobian is taken by central differences with step
    ``max(1e-7, 1e-7*|p|)``. Box ``bounds`` are enforced by projection;
    parameters sitting on a bound with the gradient pushing outward are
    frozen for the step. The iteration stops when the relative step falls
    below ``xtol``, the gradient norm below ``gtol``, or the predicted
    reduction reaches floating-point resolution. Accepted steps never
    increase the cost.

    With ``vectorized=True`` the objective receives a 2-D array of parameter
    rows and must return one residual row per parameter row.

    Returns a :class:`FitResult` whose covariance is ``(J^T J)^-1``, i.e.
    residuals are assumed to be already weighted by their uncertainties.

    Raises
    ------
    NonFiniteObjectiveError
        If the objective returns NaN or Inf.
    ConvergenceError
        After ``max_iter`` iterations; carries the best point found.
    RankDeficiencyError
        If the Jacobian at the solution is singular.
    """
    p0 = np.atleast_1d(np.array(init, dtype=float))
    n = p0.size
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(n))
    lo, hi = _bounds(bounds, n)
    if vectorized:
        fun = lambda P, rows: objective(P)  # noqa: E731
    else:
        fun = lambda P, rows: np.stack([np.asarray(objective(p), dtype=float) for p in P])  # noqa: E731
    st = _lm_batch(fun, p0[None, :], np.zeros(1, dtype=int), lo, hi, names, max_iter, xtol, gtol)
    p, r, jac = st.P[0], st.R[0], st.J[0]
    converged = bool(st.status[0] != 0)
    result = FitResult(
        params=dict(zip(names, map(float, p))),
        covariance=np.full((n, n), np.nan),
        residuals=r,
        chi2=float(st.cost[0]),
        n_dof=r.size - n,
        param_names=names,
        internal=p.copy(),
        n_iter=int(st.n_iter[0]),
        converged=converged,
        message=_STATUS[int(st.status[0])],
    )
    direction = _rank_check(jac, names)
    if direction is not None:
        raise RankDeficiencyError(
            "Jacobian is rank deficient; unidentifiable direction: "
            + ", ".join(f"{k}:{v:+.3g}" for k, v in direction.items()),
            direction,
        )
    cov = np.linalg.inv(jac.T @ jac)
    cov = 0.5 * (cov + cov.T)
    result.covariance = cov
    result.covariance_internal = cov
    if not converged:
        raise ConvergenceError(f"no convergence after {max_iter} iterations", result)
    return result


# --- squeezing model -------------------------------------------------------

_EFFICIENCY_PARAMS = ("eta", "eta_sqz", "eta_eff")
KNOWN_PARAMS = _EFFICIENCY_PARAMS + ("theta", "p_thresh")


def _logistic(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))


def _to_internal(name, value):
    if name in _EFFICIENCY_PARAMS:
        v = min(max(value, 1e-12), 1.0 - 1e-12)
        return math.log(v / (1.0 - v))
    if name == "p_thresh":
        return math.log(value)
    return value


def _to_natural(name, u):
    if name in _EFFICIENCY_PARAMS:
        return _logistic(u)
    if name == "p_thresh":
        return np.exp(u)
    return np.abs(u)


def _natural_derivative(name, u):
    if name in _EFFICIENCY_PARAMS:
        s = _logistic(u)
        return s * (1.0 - s)
    if name == "p_thresh":
        return math.exp(u)
    return 1.0 if u >= 0 else -1.0


def squeezing_model(x, eta, theta):
    """Squeezed and antisqueezed variance (linear) of a lossy squeezer with phase jitter.

    Broadcasts over all arguments.
    """
    x = np.asarray(x, dtype=float)
    vm = 1.0 - 4.0 * x * eta / (1.0 + x) ** 2
    vp = 1.0 + 4.0 * x * eta / (1.0 - x) ** 2
    c2 = np.cos(theta) ** 2
    s2 = 1.0 - c2
    return vm * c2 + vp * s2, vp * c2 + vm * s2


class _Problem:
    """Weighted residuals of a squeezing fit, vectorised over parameter rows.

    Holds one data vector, or a stack of them (one per bootstrap resample)
    indexed by the ``rows`` argument.
    """

    def __init__(self, records, names, fixed, space, fit_threshold):
        self.names = tuple(names)
        self.fixed = dict(fixed)
        self.space = space
        self.fit_threshold = fit_threshold
        self.gain = np.array([r.gain_opo for r in records], float)
        self.x = 1.0 - 1.0 / np.sqrt(self.gain)
        self.power = None
        if fit_threshold:
            if any(r.pump_power is None for r in records):
                raise DomainError("fitting the threshold power needs pump_power on every record")
            self.power = np.array([r.pump_power for r in records], float)
        self.sigma_db = np.array([r.sigma_db for r in records], float)
        self.m = len(records)
        self.set_data(np.array([[r.v_minus_db for r in records] + [r.v_plus_db for r in records]], float))

    def set_data(self, data_db):
        """Install data rows ``(k, 2m)``: squeezing columns first, then antisqueezing."""
        self.data_db = np.atleast_2d(np.asarray(data_db, dtype=float))
        sig = np.concatenate([self.sigma_db, self.sigma_db])
        if self.space == "db":
            self.data = self.data_db
            self.weight = np.broadcast_to(1.0 / sig, self.data.shape)
        else:
            self.data = 10.0 ** (self.data_db / 10.0)
            self.weight = 1.0 / (self.data * sig / _DB)

    def natural(self, U) -> dict:
        U = np.atleast_2d(U)
        out = {k: np.full(U.shape[0], v, dtype=float) for k, v in self.fixed.items()}
        for i, name in enumerate(self.names):
            out[name] = _to_natural(name, U[:, i])
        return out

    def predict(self, values):
        if "eta" in values:
            eta = values["eta"]
        else:
            eta = values["eta_sqz"] * values["eta_eff"]
        eta = np.asarray(eta, dtype=float)[:, None]
        theta = np.asarray(values.get("theta", np.zeros(len(eta))), dtype=float)[:, None]
        if self.fit_threshold:
            ratio = self.power[None, :] / np.asarray(values["p_thresh"], dtype=float)[:, None]
            # keep trial points above threshold finite so the step is simply rejected
            x = np.minimum(np.sqrt(ratio), 1.0 - 1e-9)
        else:
            x = self.x[None, :]
        vm, vp = squeezing_model(x, eta, theta)
        lin = np.concatenate([vm, vp], axis=1)
        if self.space == "db":
            with np.errstate(divide="ignore", invalid="ignore"):
                return _DB * np.log(lin)
        return lin

    def __call__(self, U, rows=None):
        U = np.atleast_2d(U)
        if rows is None:
            rows = np.zeros(U.shape[0], dtype=int)
        model = self.predict(self.natural(U))
        return (model - self.data[rows]) * self.weight[rows]


def _initial_guess(problem: _Problem, user: Mapping[str, float]) -> dict[str, float]:
    guess = {}
    i = int(np.argmax(problem.gain))
    x = problem.x[i]
    vp = 10.0 ** (problem.data_db[0, problem.m + i] / 10.0)
    eta0 = min(max((vp - 1.0) * (1.0 - x) ** 2 / (4.0 * x), 0.05), 0.99) if x > 0 else 0.8
    for name in problem.names:
        if name in user:
            guess[name] = float(user[name])
        elif name == "eta":
            guess[name] = eta0
        elif name in ("eta_sqz", "eta_eff"):
            guess[name] = math.sqrt(eta0)
        elif name == "theta":
            guess[name] = 0.02
        elif name == "p_thresh":
            ratio = problem.power / np.maximum(problem.x, 1e-6) ** 2
            guess[name] = float(np.median(ratio))
    return guess


def fit_squeezing_model(
    records: Sequence[MeasurementRecord],
    model: str = "direct",
    fixed: Mapping[str, float] | None = None,
    free: Sequence[str] | None = None,
    space: str = "db",
    fit_threshold: bool = False,
    init: Mapping[str, float] | None = None,
    max_iter: int = 200,
) -> FitResult:
    """Fit efficiency and squeezing phase noise to squeezing/antisqueezing data.

    Parameters
    ----------
    records : sequence of MeasurementRecord
        At least two gain settings.
    model : {"direct", "amplified"}
        For ``"direct"`` the efficiency ``eta`` is the total detection
        efficiency; for ``"amplified"`` it is ``eta_sqz_tilde * eta_eff``.
        The amplified model may instead be given the split pair
        ``("eta_sqz", "eta_eff")`` as free parameters, which is
        unidentifiable and raises :class:`RankDeficiencyError`.
    fixed : mapping, optional
        Parameters held at given values, e.g. ``{"theta": 0.033}``.
    free : sequence of str, optional
        Free parameters; defaults to ``("eta", "theta")`` minus ``fixed``,
        plus ``"p_thresh"`` when ``fit_threshold`` is set.
    space : {"db", "linear"}
        Residuals in dB or in linear variance (same per-point weights).
    fit_threshold : bool
        Derive the pump from ``pump_power`` and a fitted threshold power
        instead of from the recorded gain.

    Returns
    -------
    FitResult
        Natural-unit parameters and covariance; also the covariance in
        the optimiser's internal coordinates.
    """
    if model not in ("direct", "amplified"):
        raise DomainError(f"model must be 'direct' or 'amplified', got {model!r}")
    if space not in ("db", "linear"):
        raise DomainError(f"space must be 'db' or 'linear', got {space!r}")
    records = list(records)
    if len(records) < 2:
        raise DomainError("at least two records are needed for a fit")
    fixed = dict(fixed or {})
    if free is None:
        free = [k for k in ("eta", "theta") if k not in fixed]
        if fit_threshold and "p_thresh" not in fixed:
            free.append("p_thresh")
    free = list(free)
    for name in list(free) + list(fixed):
        if name not in KNOWN_PARAMS:
            raise DomainError(f"unknown fit parameter {name!r}; expected one of {KNOWN_PARAMS}")
    if model == "direct" and any(k in ("eta_sqz", "eta_eff") for k in free + list(fixed)):
        raise DomainError("eta_sqz/eta_eff only apply to the amplified model")
    present = set(free) | set(fixed)
    if "eta" not in present and not {"eta_sqz", "eta_eff"} <= present:
        raise DomainError("the model needs 'eta' or both 'eta_sqz' and 'eta_eff'")
    if fit_threshold and "p_thresh" not in present:
        raise DomainError("fit_threshold requires 'p_thresh' free or fixed")

    problem = _Problem(records, free, fixed, space, fit_threshold)
    guess = _initial_guess(problem, init or {})
    u0 = [_to_internal(k, guess[k]) for k in free]
    raw = lm_optimize(problem, u0, names=free, max_iter=max_iter, vectorized=True)
    return _naturalize(raw, problem)


def _naturalize(raw: FitResult, problem: _Problem) -> FitResult:
    u = raw.internal
    d = np.array([_natural_derivative(k, v) for k, v in zip(problem.names, u)])
    values = problem.natural(u)
    return FitResult(
        params={k: float(values[k][0]) for k in problem.names},
        covariance=raw.covariance_internal * np.outer(d, d),
        residuals=raw.residuals,
        chi2=raw.chi2,
        n_dof=raw.n_dof,
        param_names=problem.names,
        covariance_internal=raw.covariance_internal,
        internal=u,
        n_iter=raw.n_iter,
        converged=raw.converged,
        message=raw.message,
        fixed=dict(problem.fixed),
    )


@dataclass(frozen=True)
class BootstrapResult:
    samples: np.ndarray
    param_names: tuple[str, ...]
    n_failed: int

    @property
    def stderr(self) -> dict[str, float]:
        return dict(zip(self.param_names, map(float, self.samples.std(axis=0, ddof=1))))

    @property
    def covariance(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.samples, rowvar=False))


def bootstrap_fit(
    records: Sequence[MeasurementRecord],
    result: FitResult,
    n_resamples: int = 200,
    seed: int = 0,
    method: str = "parametric",
    model: str = "direct",
    space: str = "db",
    fit_threshold: bool = False,
) -> BootstrapResult:
    """Bootstrap the parameter distribution of a converged squeezing fit.

    ``"parametric"`` redraws every point from the fitted model with its
    stated ``sigma_db``; ``"residual"`` resamples the fit's weighted
    residuals with replacement. Each refit starts from the original optimum.
    Resample ``k`` uses child ``k`` of ``SeedSequence(seed)``.
    """
    if method not in ("parametric", "residual"):
        raise DomainError(f"unknown bootstrap method {method!r}")
    if n_resamples < 2:
        raise DomainError(f"need at least two bootstrap resamples, got {n_resamples!r}")
    records = list(records)
    names = result.param_names
    problem = _Problem(records, names, result.fixed, space, fit_threshold)
    best = problem.predict(problem.natural(result.internal))[0]
    best_db = best if space == "db" else _DB * np.log(best)
    sig = np.concatenate([problem.sigma_db, problem.sigma_db])
    resid_db = best_db - problem.data_db[0]
    data = np.empty((n_resamples, sig.size))
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(n_resamples)):
        rng = np.random.Generator(np.random.PCG64(child))
        if method == "parametric":
            data[k] = best_db + sig * rng.standard_normal(sig.size)
        else:
            data[k] = best_db - resid_db[rng.integers(0, sig.size, sig.size)]
    problem.set_data(data)
    n = len(names)
    lo, hi = _bounds(None, n)
    P0 = np.repeat(np.asarray(result.internal, dtype=float)[None, :], n_resamples, axis=0)
    # all resamples iterate in lockstep; each keeps its own damping and stopping state
    st = _lm_batch(problem, P0, np.arange(n_resamples), lo, hi, names, 200, 1e-10, 1e-12)
    ok = st.status != 0
    if not ok.any():
        raise FitError("every bootstrap resample failed")
    values = problem.natural(st.P[ok])
    samples = np.column_stack([values[k] for k in names])
    return BootstrapResult(samples, names, int((~ok).sum()))


def extract_effective_efficiency(
    fit: FitResult, eta_sqz_tilde: float, eta_sqz_tilde_err: float = 0.0
) -> ValueWithError:
    """Effective readout efficiency from an amplified fit: ``eta_eff = eta / eta_sqz_tilde``.

    The uncertainty combines the fit error of ``eta`` and ``eta_sqz_tilde_err``
    in quadrature. A value above ``1 + 3 sigma`` is flagged ``"unphysical"``.
    """
    if "eta" not in fit.params:
        raise DomainError("fit has no 'eta' (product) parameter")
    if not 0.0 < eta_sqz_tilde <= 1.0:
        raise DomainError(f"eta_sqz_tilde must lie in (0, 1], got {eta_sqz_tilde!r}")
    prod = fit.params["eta"]
    sig_prod = fit.stderr["eta"]
    value = prod / eta_sqz_tilde
    sigma = math.hypot(sig_prod / eta_sqz_tilde, prod * eta_sqz_tilde_err / eta_sqz_tilde**2)
    flags: tuple[str, ...] = ()
    if value > 1.0 + 3.0 * sigma:
        flags = ("unphysical",)
        warnings.warn(
            f"eta_eff = {value:.4f} exceeds 1 by more than 3 sigma ({sigma:.2g}); data and model disagree",
            stacklevel=2,
        )
    return ValueWithError(value, sigma, flags)
