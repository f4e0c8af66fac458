"""Robust M-estimation pipeline for two-regime TARMA models.

The estimator minimizes ``rho_n(lambda, r, d) = sum_t rho(eps_t / sigma)``
profiled in two stages: for fixed ``(r, d)`` the coefficient vector is
found by iteratively reweighted least squares (IRLS), where each
reweighting step solves a weighted nonlinear least-squares problem by
damped Gauss-Newton on the exact residual Jacobian; the threshold and
delay are then chosen by grid search over the profiled objective, which
is piecewise constant in ``r`` between order statistics of the switching
variable.

Scale handling: with the "mad" policy the scale is re-estimated from the
current residuals at every IRLS iteration, so the fit converges to the
joint fixed point of the coefficient and scale updates.  Each IRLS step
is step-halved against the objective at its own prevailing scale (a
guaranteed descent direction), and the recorded convergence trace
accumulates these per-step decreases, hence never increases; under a
fixed scale the trace entries are exactly the objective values.

For the ``alpha = 0`` / least-squares losses all internal comparisons use
the scale-free residual sum of squares (equivalent to the ML objective at
any fixed scale), which keeps grid points with different scale estimates
comparable and makes the ``alpha = 0`` pipeline agree exactly with a
direct nonlinear least-squares minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import hessian_accumulate, jacobian_full, residuals_full
from .errors import InvalidInputError, NumericFailureError
from .loss import LossSpec, dpsi, irls_weight, m_scale, psi, rho
from .model import TarmaParams, validate
from .series import TimeSeries

__all__ = [
    "ThresholdGrid",
    "FitConfig",
    "FixedThresholdFit",
    "FitResult",
    "initial_estimate",
    "fit_fixed_threshold",
    "profile_search",
    "sandwich_covariance",
    "robust_outlier_weights",
    "model_selection_criterion",
]

COND_LIMIT = 1e12  # sensitivity matrices worse than this are treated as singular


@dataclass(frozen=True)
class ThresholdGrid:
    """Candidate thresholds: data quantiles, an explicit list, or fixed.

    Quantile grids span ``lo_pct``..``hi_pct`` percent of the observed
    switching variable with at most ``max_points`` candidates
    (``max_points=None`` keeps every distinct data value in the span).
    """

    kind: str = "data_quantiles"
    lo_pct: float = 10.0
    hi_pct: float = 90.0
    max_points: int | None = 100
    values: tuple[float, ...] | None = None
    r: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("data_quantiles", "explicit", "fixed"):
            raise InvalidInputError(f"unknown threshold grid kind {self.kind!r}")
        if self.kind == "data_quantiles":
            if not 0.0 <= self.lo_pct < self.hi_pct <= 100.0:
                raise InvalidInputError("need 0 <= lo_pct < hi_pct <= 100")
            if self.max_points is not None and self.max_points < 1:
                raise InvalidInputError("max_points must be >= 1")
        if self.kind == "explicit" and not self.values:
            raise InvalidInputError("explicit grid needs values")
        if self.kind == "fixed" and self.r is None:
            raise InvalidInputError("fixed grid needs r")

    @classmethod
    def fixed(cls, r: float) -> "ThresholdGrid":
        return cls(kind="fixed", r=float(r))

    @classmethod
    def explicit(cls, values) -> "ThresholdGrid":
        return cls(kind="explicit", values=tuple(float(v) for v in values))

    def to_dict(self) -> dict:
        if self.kind == "fixed":
            return {"kind": "fixed", "r": self.r}
        if self.kind == "explicit":
            return {"kind": "explicit", "values": list(self.values)}
        return {"kind": "data_quantiles", "lo_pct": self.lo_pct,
                "hi_pct": self.hi_pct, "max_points": self.max_points}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdGrid":
        kind = d.get("kind", "data_quantiles")
        if kind == "fixed":
            return cls.fixed(d["r"])
        if kind == "explicit":
            return cls.explicit(d["values"])
        return cls(kind="data_quantiles",
                   lo_pct=float(d.get("lo_pct", 10.0)),
                   hi_pct=float(d.get("hi_pct", 90.0)),
                   max_points=d.get("max_points", 100))


@dataclass(frozen=True)
class FitConfig:
    """Everything a fit needs besides the data.

    ``delay_set`` is the finite set of candidate delays; the grid search
    always enumerates it.  ``trim_fraction`` controls the trimmed-LS
    initialization.  The inner solver is damped Gauss-Newton with
    step-halving against the true objective.
    """

    p: int = 1
    q: int = 1
    loss: LossSpec = field(default_factory=LossSpec)
    threshold_grid: ThresholdGrid = field(default_factory=ThresholdGrid)
    delay_set: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    max_irls_iters: int = 50
    irls_tol: float = 1e-8
    inner_max_iters: int = 100
    inner_damping: float = 1e-6
    inner_step_tol: float = 1e-11
    trim_fraction: float = 0.10
    exact_hessian: bool = True
    ma_bound: float | None = 0.999

    def __post_init__(self) -> None:
        if self.p < 0 or self.q < 0:
            raise InvalidInputError("orders p and q must be non-negative")
        ds = tuple(sorted(set(int(d) for d in self.delay_set)))
        if not ds or ds[0] < 1:
            raise InvalidInputError("delay_set must be a non-empty set of ints >= 1")
        object.__setattr__(self, "delay_set", ds)
        if not 0.0 <= self.trim_fraction < 0.5:
            raise InvalidInputError("trim_fraction must lie in [0, 0.5)")
        for name in ("irls_tol", "inner_damping", "inner_step_tol"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.max_irls_iters < 1 or self.inner_max_iters < 1:
            raise InvalidInputError("iteration limits must be >= 1")

    def to_dict(self) -> dict:
        return {
            "p": self.p, "q": self.q,
            "loss": self.loss.to_dict(),
            "threshold_grid": self.threshold_grid.to_dict(),
            "delay_set": list(self.delay_set),
            "max_irls_iters": self.max_irls_iters,
            "irls_tol": self.irls_tol,
            "inner_max_iters": self.inner_max_iters,
            "inner_damping": self.inner_damping,
            "inner_step_tol": self.inner_step_tol,
            "trim_fraction": self.trim_fraction,
            "exact_hessian": self.exact_hessian,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        kwargs: dict = {}
        for key in ("p", "q", "max_irls_iters", "inner_max_iters"):
            if key in d:
                kwargs[key] = int(d[key])
        for key in ("irls_tol", "inner_damping", "inner_step_tol", "trim_fraction"):
            if key in d:
                kwargs[key] = float(d[key])
        if "loss" in d:
            kwargs["loss"] = LossSpec.from_dict(d["loss"])
        if "threshold_grid" in d:
            kwargs["threshold_grid"] = ThresholdGrid.from_dict(d["threshold_grid"])
        if "delay_set" in d:
            kwargs["delay_set"] = tuple(int(v) for v in d["delay_set"])
        if "exact_hessian" in d:
            kwargs["exact_hessian"] = bool(d["exact_hessian"])
        return cls(**kwargs)


@dataclass
class FixedThresholdFit:
    """Coefficient fit at one fixed ``(r, d)`` grid point."""

    lam: np.ndarray
    r: float
    d: int
    objective: float          # grid-comparison objective at the reported scale
    sigma_hat: float
    iterations: int
    converged: bool
    objective_trace: list[float]
    t_start: int


@dataclass
class FitResult:
    """Assembled output of a profile search (or fixed-threshold fit).

    ``objective`` is the robust objective ``rho_n`` at the estimate;
    ``profile_table`` rows carry the grid-comparison objective, which for
    the ``alpha = 0`` / least-squares losses is the residual sum of
    squares (scale-free, hence comparable across grid points).
    ``covariance`` is the sandwich estimate for the coefficient vector,
    ``H^-1 J H^-1 / n``; it is withheld (None, with ``covariance_message``)
    when the sensitivity matrix is numerically singular.
    """

    params: TarmaParams
    loss: LossSpec
    objective: float
    sigma_hat: float
    residuals: np.ndarray
    irls_weights: np.ndarray
    covariance: np.ndarray | None
    std_errors: np.ndarray | None
    H: np.ndarray | None
    J: np.ndarray | None
    iterations: int
    converged: bool
    objective_trace: list[float]
    profile_table: list[dict]
    t_start: int
    covariance_message: str | None = None

    @property
    def n_eff(self) -> int:
        return int(self.residuals.size)

    def time_index(self) -> np.ndarray:
        """0-based series indices of the evaluated residuals."""
        return np.arange(self.t_start, self.t_start + self.n_eff)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [float(v) for v in np.asarray(a).ravel()]

        d = {
            "params": self.params.to_dict(),
            "loss": self.loss.to_dict(),
            "objective": float(self.objective),
            "sigma_hat": float(self.sigma_hat),
            "residuals": arr(self.residuals),
            "irls_weights": arr(self.irls_weights),
            "std_errors": arr(self.std_errors),
            "covariance": arr(self.covariance),
            "H": arr(self.H),
            "J": arr(self.J),
            "convergence": {
                "iterations": self.iterations,
                "converged": self.converged,
                "objective_trace": [float(v) for v in self.objective_trace],
            },
            "profile_table": self.profile_table,
            "t_start": self.t_start,
        }
        if self.covariance_message:
            d["covariance_message"] = self.covariance_message
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        params = TarmaParams.from_dict(d["params"])
        m = params.n_lambda

        def mat(a):
            return None if a is None else np.asarray(a, dtype=np.float64).reshape(m, m)

        conv = d.get("convergence", {})
        return cls(
            params=params,
            loss=LossSpec.from_dict(d["loss"]),
            objective=float(d["objective"]),
            sigma_hat=float(d["sigma_hat"]),
            residuals=np.asarray(d["residuals"], dtype=np.float64),
            irls_weights=np.asarray(d["irls_weights"], dtype=np.float64),
            covariance=mat(d.get("covariance")),
            std_errors=(None if d.get("std_errors") is None
                        else np.asarray(d["std_errors"], dtype=np.float64)),
            H=mat(d.get("H")),
            J=mat(d.get("J")),
            iterations=int(conv.get("iterations", 0)),
            converged=bool(conv.get("converged", False)),
            objective_trace=[float(v) for v in conv.get("objective_trace", [])],
            profile_table=d.get("profile_table", []),
            t_start=int(d["t_start"]),
            covariance_message=d.get("covariance_message"),
        )


# ---------------------------------------------------------------------------
# internals


def _values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.ascontiguousarray(np.asarray(series, dtype=np.float64))


def _scale_free(loss: LossSpec) -> bool:
    """True when grid comparisons should use the raw residual sum of squares."""
    return (loss.family == "least_squares"
            or (loss.family == "power_divergence" and loss.alpha == 0.0))


def _objective(eps_win: np.ndarray, sigma: float, loss: LossSpec) -> float:
    if _scale_free(loss):
        return float(eps_win @ eps_win)
    return float(np.sum(rho(eps_win, sigma, loss)))


def _proto(p: int, q: int, lam: np.ndarray, r: float, d: int) -> TarmaParams:
    k = p + 1
    return TarmaParams(p=p, q=q, phi1=lam[:k], phi2=lam[k:2 * k],
                       theta1=lam[2 * k:2 * k + q], theta2=lam[2 * k + q:],
                       r=float(r), d=int(d))


def _resid_full(x, lam, r, d, p, q, ts):
    k = p + 1
    return residuals_full(x, lam[:k], lam[k:2 * k], lam[2 * k:2 * k + q],
                          lam[2 * k + q:], float(r), int(d), p, q, ts)


def _jac_full(x, lam, r, d, p, q, ts, eps):
    k = p + 1
    return jacobian_full(x, lam[:k], lam[k:2 * k], lam[2 * k:2 * k + q],
                         lam[2 * k + q:], float(r), int(d), p, q, ts, eps)


def _regime_counts(x, r, d, ts, weights=None) -> tuple[int, int]:
    z = x[ts - d:x.size - d]
    if weights is None:
        n_low = int(np.count_nonzero(z <= r))
        return n_low, z.size - n_low
    active = weights[ts:] > 0
    n_low = int(np.count_nonzero(active & (z <= r)))
    n_up = int(np.count_nonzero(active & (z > r)))
    return n_low, n_up


def _project_ma(lam: np.ndarray, p: int, q: int, bound: float | None) -> np.ndarray:
    """Clip MA coefficients into the invertibility box |theta| <= bound.

    Keeps the search inside a compact domain where the residual recursion
    is stable; with unbounded MA coefficients the least-squares surface
    under heavy contamination develops non-invertible valleys that stall
    the optimizer.  Clean-data optima are interior, so the projection is
    inactive there.
    """
    if bound is None or q == 0:
        return lam
    off = 2 * (p + 1)
    lam[off:] = np.clip(lam[off:], -bound, bound)
    return lam


def _gauss_newton(x, lam0, r, d, p, q, ts, w_full, *,
                  max_iters, damping, step_tol, ma_bound=None):
    """Minimize the weighted residual sum ``sum_t w_t eps_t(lam)^2`` by
    Gauss-Newton with adaptive Levenberg-Marquardt damping, projecting MA
    coefficients into the invertibility box after every step."""
    n_low, n_up = _regime_counts(x, r, d, ts, w_full)
    if n_low == 0 or n_up == 0:
        raise NumericFailureError(
            f"singular normal equations at r={r:.6g}, d={d}: a regime has "
            f"no effective points (lower {n_low}, upper {n_up})"
        )
    lam = _project_ma(np.asarray(lam0, dtype=np.float64).copy(), p, q, ma_bound)
    eps = _resid_full(x, lam, r, d, p, q, ts)
    f = float(np.dot(w_full * eps, eps))
    if not math.isfinite(f):
        raise NumericFailureError("non-finite objective at the starting point")
    m = lam.size
    off_ma = 2 * (p + 1)
    mu = None
    steps = 0
    for _ in range(max_iters):
        J = _jac_full(x, lam, r, d, p, q, ts, eps)
        g = J.T @ (w_full * eps)
        G = (J * w_full[:, None]).T @ J
        dmax = float(np.max(np.diag(G)))
        if not math.isfinite(dmax) or dmax <= 0.0:
            raise NumericFailureError(
                f"singular normal equations at r={r:.6g}, d={d} "
                f"(effective points: lower regime {n_low}, upper regime {n_up})"
            )
        # active set: MA coordinates pinned at the box face with the
        # gradient pushing outward are frozen for this solve
        free = np.ones(m, dtype=bool)
        if ma_bound is not None and q > 0:
            ma = lam[off_ma:]
            g_ma = g[off_ma:]
            pinned = (((ma >= ma_bound - 1e-12) & (g_ma < 0.0))
                      | ((ma <= -ma_bound + 1e-12) & (g_ma > 0.0)))
            free[off_ma:] = ~pinned
        Gf = G[np.ix_(free, free)]
        gf = g[free]
        eye = np.eye(int(free.sum()))
        if mu is None:
            mu = damping * dmax
        accepted = False
        for _try in range(60):
            try:
                delta_f = np.linalg.solve(Gf + mu * eye, -gf)
            except np.linalg.LinAlgError:
                delta_f = None
            if delta_f is None or not np.all(np.isfinite(delta_f)):
                mu = max(mu, 1e-12 * dmax) * 10.0
                continue
            delta = np.zeros(m)
            delta[free] = delta_f
            cand = _project_ma(lam + delta, p, q, ma_bound)
            eps_c = _resid_full(x, cand, r, d, p, q, ts)
            f_c = float(np.dot(w_full * eps_c, eps_c))
            if math.isfinite(f_c) and f_c <= f:
                accepted = True
                break
            mu = max(mu, 1e-12 * dmax) * 4.0
            if mu > 1e14 * dmax:
                break
        if not accepted:
            break
        gain = f - f_c
        step = float(np.max(np.abs(cand - lam)))
        lam, eps, f = cand, eps_c, f_c
        mu = max(mu * 0.35, 1e-14 * dmax)
        steps += 1
        if step < step_tol * (1.0 + float(np.max(np.abs(lam)))):
            break
        if gain <= 1e-13 * (1.0 + abs(f)):
            break
    return lam, eps, f, steps


def initial_estimate(series, r: float, d: int, config: FitConfig,
                     trim_fraction: float | None = None,
                     t_start: int | None = None,
                     start: np.ndarray | None = None) -> np.ndarray:
    """Trimmed least-squares starting value for the IRLS solver.

    The ``ceil(trim_fraction * n)`` observations most extreme by
    ``|X_t - median(X)|`` are excluded from the objective (their residual
    recursion contributions are kept so the filter stays well defined)
    and the LS inner solver runs from a zero coefficient start (or from
    ``start``, used by the grid scan to warm-start this quadratic-like
    subproblem; the robust IRLS itself is never warm-started across grid
    points, which would let outlier-hugging local minima of a
    redescending objective propagate along the grid).
    """
    x = _values(series)
    p, q = config.p, config.q
    trim = config.trim_fraction if trim_fraction is None else trim_fraction
    if not 0.0 <= trim < 0.5:
        raise InvalidInputError("trim_fraction must lie in [0, 0.5)")
    ts = max(p, d) if t_start is None else t_start
    if x.size <= ts + 1:
        raise InvalidInputError("series too short for the residual recursion")
    n = x.size
    w_full = np.zeros(n)
    w_full[ts:] = 1.0
    n_trim = math.ceil(trim * n)
    if n_trim > 0:
        dev = np.abs(x - np.median(x))
        order = np.argsort(dev, kind="stable")
        w_full[order[n - n_trim:]] = 0.0
    need = 1 + p + q
    n_low, n_up = _regime_counts(x, r, d, ts, w_full)
    if n_low < need or n_up < need:
        raise InvalidInputError(
            f"insufficient per-regime data after trimming at r={r:.6g}, d={d}: "
            f"lower {n_low}, upper {n_up}, need {need} each"
        )
    lam0 = (np.zeros(2 * (1 + p + q)) if start is None
            else np.asarray(start, dtype=np.float64))
    lam, _, _, _ = _gauss_newton(
        x, lam0, r, d, p, q, ts, w_full,
        max_iters=config.inner_max_iters,
        damping=config.inner_damping,
        step_tol=config.inner_step_tol,
        ma_bound=config.ma_bound,
    )
    return lam


def fit_fixed_threshold(series, r: float, d: int, config: FitConfig,
                        init_lambda: np.ndarray | None = None,
                        t_start: int | None = None) -> FixedThresholdFit:
    """IRLS fit of the coefficient vector at fixed threshold and delay.

    Alternates residual-based weights (at the current scale) with a
    weighted Gauss-Newton update, step-halved against the true objective,
    until the relative per-iteration improvement falls below
    ``config.irls_tol``.  The recorded objective trace is non-increasing.
    """
    x = _values(series)
    p, q = config.p, config.q
    loss = config.loss
    ts = max(p, d) if t_start is None else t_start
    if ts < max(p, d):
        raise InvalidInputError("t_start precedes the first computable residual")
    if x.size <= ts + 1:
        raise InvalidInputError("series too short for the residual recursion")
    if init_lambda is None:
        lam = initial_estimate(series, r, d, config, t_start=ts)
    else:
        lam = np.asarray(init_lambda, dtype=np.float64).copy()
        if lam.size != 2 * (1 + p + q) or not np.all(np.isfinite(lam)):
            raise InvalidInputError("init_lambda has wrong size or is not finite")
        lam = _project_ma(lam, p, q, config.ma_bound)

    def scale_of(eps_win: np.ndarray) -> float:
        if loss.scale_policy == "fixed":
            return float(loss.fixed_sigma)
        return m_scale(eps_win)

    n = x.size
    eps = _resid_full(x, lam, r, d, p, q, ts)
    sigma = scale_of(eps[ts:])
    f_cur = _objective(eps[ts:], sigma, loss)
    if not math.isfinite(f_cur):
        raise NumericFailureError(
            f"non-finite objective at the initial point (r={r:.6g}, d={d})"
        )
    # the trace accumulates the per-step descent, each step measured at
    # its own prevailing scale; with a fixed scale these are exactly the
    # objective values, and the sequence is non-increasing by construction
    trace = [f_cur]
    converged = False
    iterations = 0
    for _ in range(config.max_irls_iters):
        iterations += 1
        w_full = np.zeros(n)
        w_full[ts:] = irls_weight(eps[ts:], sigma, loss)
        lam_w, eps_w, _, _ = _gauss_newton(
            x, lam, r, d, p, q, ts, w_full,
            max_iters=config.inner_max_iters,
            damping=config.inner_damping,
            step_tol=config.inner_step_tol,
            ma_bound=config.ma_bound,
        )
        # step-halve the IRLS update against the true objective at the
        # current scale (the weighted solve shares its gradient, so this
        # is a descent direction until stationarity)
        delta = lam_w - lam
        scale = 1.0
        accepted = False
        for h in range(31):
            cand = lam_w if h == 0 else lam + scale * delta
            eps_c = eps_w if h == 0 else _resid_full(x, cand, r, d, p, q, ts)
            f_c = _objective(eps_c[ts:], sigma, loss)
            if math.isfinite(f_c) and f_c <= f_cur:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            converged = True
            break
        gain = f_cur - f_c
        rel = gain / max(1.0, abs(f_c))
        lam, eps = cand, eps_c
        trace.append(trace[-1] - gain)
        if rel < config.irls_tol:
            converged = True
            break
        if loss.scale_policy == "fixed":
            f_cur = f_c
        else:
            sigma = scale_of(eps[ts:])
            f_cur = _objective(eps[ts:], sigma, loss)
    sigma_hat = scale_of(eps[ts:])
    objective = _objective(eps[ts:], sigma_hat, loss)
    return FixedThresholdFit(
        lam=lam, r=float(r), d=int(d), objective=objective,
        sigma_hat=sigma_hat, iterations=iterations, converged=converged,
        objective_trace=trace, t_start=ts,
    )


def threshold_candidates(x: np.ndarray, d: int, t_start: int,
                         grid: ThresholdGrid) -> np.ndarray:
    """Candidate thresholds for one delay, in increasing order."""
    z = x[t_start - d:x.size - d]
    if grid.kind == "fixed":
        return np.asarray([grid.r], dtype=np.float64)
    if grid.kind == "explicit":
        return np.unique(np.asarray(grid.values, dtype=np.float64))
    lo = float(np.percentile(z, grid.lo_pct))
    hi = float(np.percentile(z, grid.hi_pct))
    if grid.max_points is None:
        vals = np.unique(z)
        return vals[(vals >= lo) & (vals <= hi)]
    pct = np.linspace(grid.lo_pct, grid.hi_pct, grid.max_points)
    return np.unique(np.percentile(z, pct))


def _scan_delay(args) -> tuple:
    """Sequential warm-started scan of one delay's threshold candidates."""
    x, d, ts, config = args
    p, q = config.p, config.q
    need = 1 + p + q
    cands = threshold_candidates(x, d, ts, config.threshold_grid)
    rows: list[dict] = []
    best: FixedThresholdFit | None = None
    n_admissible = 0
    warm: np.ndarray | None = None
    for r in cands:
        n_low, n_up = _regime_counts(x, float(r), d, ts)
        if n_low < need or n_up < need:
            continue
        n_admissible += 1
        try:
            init = initial_estimate(x, float(r), d, config,
                                    t_start=ts, start=warm)
            fit = fit_fixed_threshold(x, float(r), d, config,
                                      init_lambda=init, t_start=ts)
        except (NumericFailureError, InvalidInputError) as exc:
            rows.append({"r": float(r), "d": int(d), "objective": None,
                         "converged": False, "error": str(exc)})
            warm = None
            continue
        warm = init
        rows.append({"r": float(r), "d": int(d),
                     "objective": fit.objective,
                     "converged": fit.converged,
                     "iterations": fit.iterations})
        if best is None or fit.objective < best.objective or (
                fit.objective == best.objective and fit.r < best.r):
            best = fit
    return d, rows, best, n_admissible


def profile_search(series, config: FitConfig, jobs: int = 1) -> FitResult:
    """Profile grid search over ``(r, d)`` followed by result assembly.

    Every grid point is fitted by IRLS from its own trimmed-LS
    initializer; only that initializer's (quadratic-like) solve is
    warm-started left to right in ``r`` within each delay.  Delays scan
    sequentially in ``r`` but may run in parallel with ``jobs > 1``; the
    merged result is identical either way.  The strict minimizer of the
    profiled objective wins; ties break toward smaller ``r`` then smaller
    ``d``.  Candidates leaving fewer than ``1 + p + q`` evaluated points
    in either regime are excluded; an empty admissible grid is an error.
    """
    x = _values(series)
    ts = max(config.p, max(config.delay_set))
    if x.size <= ts + 1:
        raise InvalidInputError("series too short for the residual recursion")
    args = [(x, d, ts, config) for d in config.delay_set]
    if jobs > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scans = list(pool.map(_scan_delay, args))
    else:
        scans = [_scan_delay(a) for a in args]
    scans.sort(key=lambda item: item[0])
    table: list[dict] = []
    best: FixedThresholdFit | None = None
    n_admissible = 0
    for _d, rows, cand, n_adm in scans:
        table.extend(rows)
        n_admissible += n_adm
        if cand is not None and (
                best is None or cand.objective < best.objective or (
                    cand.objective == best.objective
                    and (cand.r, cand.d) < (best.r, best.d))):
            best = cand
    if n_admissible == 0:
        need = 1 + config.p + config.q
        raise InvalidInputError(
            "empty admissible grid: every threshold candidate leaves a "
            f"regime with fewer than {need} points"
        )
    if best is None:
        raise NumericFailureError("all grid-point fits failed")
    return _assemble_result(x, best, config, table)


def _assemble_result(x: np.ndarray, fit: FixedThresholdFit, config: FitConfig,
                     table: list[dict]) -> FitResult:
    p, q = config.p, config.q
    params = validate(_proto(p, q, fit.lam, fit.r, fit.d))
    eps_win = _resid_full(x, fit.lam, fit.r, fit.d, p, q, fit.t_start)[fit.t_start:]
    weights = np.asarray(irls_weight(eps_win, fit.sigma_hat, config.loss))
    objective = float(np.sum(rho(eps_win, fit.sigma_hat, config.loss)))
    cov = std = H = J = None
    msg = None
    try:
        cov, H, J = sandwich_covariance(
            x, params, config.loss, sigma=fit.sigma_hat,
            t_start=fit.t_start, exact=config.exact_hessian)
        std = np.sqrt(np.diag(cov))
    except NumericFailureError as exc:
        msg = str(exc)
    return FitResult(
        params=params, loss=config.loss, objective=objective,
        sigma_hat=fit.sigma_hat, residuals=eps_win, irls_weights=weights,
        covariance=cov, std_errors=std, H=H, J=J,
        iterations=fit.iterations, converged=fit.converged,
        objective_trace=fit.objective_trace, profile_table=table,
        t_start=fit.t_start, covariance_message=msg,
    )


def fit_result_at(series, params: TarmaParams, config: FitConfig,
                  t_start: int | None = None) -> FitResult:
    """Fit at the fixed ``(r, d)`` carried by ``params`` and assemble a
    full result (convenience wrapper used by the CLI and the harness)."""
    cfg = replace(config, threshold_grid=ThresholdGrid.fixed(params.r),
                  delay_set=(params.d,))
    x = _values(series)
    ts = max(cfg.p, params.d) if t_start is None else t_start
    fit = fit_fixed_threshold(series, params.r, params.d, cfg, t_start=ts)
    row = [{"r": params.r, "d": params.d, "objective": fit.objective,
            "converged": fit.converged, "iterations": fit.iterations}]
    return _assemble_result(x, fit, cfg, row)


def sandwich_covariance(series, params: TarmaParams, loss: LossSpec,
                        sigma: float | None = None,
                        t_start: int | None = None,
                        exact: bool = True
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sandwich covariance ``H^-1 J H^-1 / n`` for the coefficient vector.

    ``J`` averages outer products of the per-observation objective
    gradients; ``H`` averages the exact second derivative, including the
    second-derivative recursion of the residuals (dropped when ``exact``
    is false, giving the Gauss-Newton approximation).  Raises
    :class:`NumericFailureError` when ``H`` has condition number beyond
    1e12.
    """
    x = _values(series)
    p, q = params.p, params.q
    ts = max(p, params.d) if t_start is None else t_start
    if x.size <= ts + 1:
        raise InvalidInputError("series too short for the residual recursion")
    lam = params.lam
    eps = _resid_full(x, lam, params.r, params.d, p, q, ts)
    win = eps[ts:]
    if sigma is None:
        sigma = (loss.fixed_sigma if loss.scale_policy == "fixed"
                 else m_scale(win))
    n_eff = win.size
    Jrows = _jac_full(x, lam, params.r, params.d, p, q, ts, eps)
    psi_full = np.zeros(x.size)
    dpsi_full = np.zeros(x.size)
    psi_full[ts:] = psi(win, sigma, loss)
    dpsi_full[ts:] = dpsi(win, sigma, loss)
    G = Jrows[ts:] * psi_full[ts:, None]
    Jmat = (G.T @ G) / n_eff
    k = p + 1
    H = hessian_accumulate(x, lam[:k], lam[k:2 * k], lam[2 * k:2 * k + q],
                           lam[2 * k + q:], float(params.r), params.d, p, q,
                           ts, eps, Jrows, psi_full, dpsi_full, exact) / n_eff
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericFailureError(
            f"sensitivity matrix numerically singular (condition number "
            f"{cond:.3g}); covariance withheld"
        )
    Hinv = np.linalg.inv(H)
    cov = Hinv @ Jmat @ Hinv / n_eff
    cov = 0.5 * (cov + cov.T)
    return cov, H, Jmat


def robust_outlier_weights(fit: FitResult, top_m: int
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Normalized robust weights and the ``top_m`` most outlying times.

    Weights are ``exp(-alpha * e_t^2 / (2 sigma^2))`` normalized to sum
    to one over the evaluated window; the flagged indices are the
    ``top_m`` smallest weights (ties broken by larger ``|e_t|``),
    reported as 0-based positions in the original series.
    """
    loss = fit.loss
    if loss.family != "power_divergence" or loss.alpha <= 0.0:
        raise InvalidInputError(
            "outlier ranking needs a power-divergence fit with alpha > 0; "
            "weights are uniform (ranking undefined) otherwise"
        )
    if not 0 < top_m <= fit.n_eff:
        raise InvalidInputError(
            f"top_m must lie in [1, {fit.n_eff}], got {top_m}"
        )
    e = fit.residuals
    raw = np.exp(-loss.alpha * e * e / (2.0 * fit.sigma_hat ** 2))
    w = raw / raw.sum()
    order = np.lexsort((-np.abs(e), w))
    flagged = fit.time_index()[order[:top_m]]
    return w, flagged


def model_selection_criterion(fit: FitResult) -> float:
    """Robust information criterion ``2 rho_n + 2 trace(H^-1 J)``.

    For the ML loss with clean Gaussian data the penalty trace approaches
    the parameter count, recovering AIC behavior.
    """
    if fit.H is None or fit.J is None:
        raise InvalidInputError(
            "model selection needs the sensitivity matrices; covariance "
            f"was withheld ({fit.covariance_message})"
        )
    penalty = float(np.trace(np.linalg.solve(fit.H, fit.J)))
    return 2.0 * fit.objective + 2.0 * penalty
