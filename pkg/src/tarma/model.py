"""Two-regime TARMA(p, q) model: parameters, residual recursion, simulation
and outlier contamination.

The process switches between a lower and an upper linear ARMA regime
according to whether the lagged value ``X_{t-d}`` is at or below the
threshold ``r`` (ties go to the lower regime).  Residuals are computed by
the exact conditional recursion with zero pre-sample values, starting at
``t0 = max(p, d) + 1`` in 1-based time, so a series of length ``n`` yields
``n - max(p, d)`` residuals.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import jacobian_full, residuals_full, simulate_path
from .errors import InvalidInputError
from .series import TimeSeries

__all__ = [
    "TarmaParams",
    "InnovationSpec",
    "ContaminationSpec",
    "validate",
    "residuals",
    "residual_jacobian",
    "conditional_mean",
    "simulate",
    "contaminate",
    "contaminate_innovations",
    "contamination_times",
]


@dataclass(frozen=True)
class TarmaParams:
    """Full parameter vector of a two-regime TARMA(p, q) model.

    ``phi1``/``phi2`` hold intercept plus AR coefficients (length p+1)
    for the lower/upper regime, ``theta1``/``theta2`` the MA coefficients
    (length q).  ``r`` is the threshold and ``d >= 1`` the delay of the
    switching variable ``X_{t-d}``.
    """

    p: int
    q: int
    phi1: np.ndarray
    phi2: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    r: float
    d: int

    def __post_init__(self) -> None:
        for name in ("phi1", "phi2", "theta1", "theta2"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            object.__setattr__(self, name, arr)

    @property
    def n_lambda(self) -> int:
        """Length of the regime-coefficient vector."""
        return 2 * (1 + self.p + self.q)

    @property
    def lam(self) -> np.ndarray:
        """Coefficients stacked as [phi1, phi2, theta1, theta2]."""
        return np.concatenate([self.phi1, self.phi2, self.theta1, self.theta2])

    def with_lambda(self, lam: np.ndarray) -> "TarmaParams":
        """Copy with the stacked coefficient vector replaced."""
        lam = np.asarray(lam, dtype=np.float64)
        if lam.size != self.n_lambda:
            raise InvalidInputError(
                f"lambda vector has {lam.size} entries, expected {self.n_lambda}"
            )
        k = self.p + 1
        return replace(
            self,
            phi1=lam[:k].copy(),
            phi2=lam[k:2 * k].copy(),
            theta1=lam[2 * k:2 * k + self.q].copy(),
            theta2=lam[2 * k + self.q:].copy(),
        )

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "d": self.d,
            "r": float(self.r),
            "phi1": [float(v) for v in self.phi1],
            "phi2": [float(v) for v in self.phi2],
            "theta1": [float(v) for v in self.theta1],
            "theta2": [float(v) for v in self.theta2],
        }

    @classmethod
    def from_dict(cls, dd: dict) -> "TarmaParams":
        try:
            return cls(
                p=int(dd["p"]),
                q=int(dd["q"]),
                phi1=np.asarray(dd["phi1"], dtype=np.float64),
                phi2=np.asarray(dd["phi2"], dtype=np.float64),
                theta1=np.asarray(dd.get("theta1", []), dtype=np.float64),
                theta2=np.asarray(dd.get("theta2", []), dtype=np.float64),
                r=float(dd["r"]),
                d=int(dd["d"]),
            )
        except KeyError as exc:
            raise InvalidInputError(f"params JSON missing field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TarmaParams":
        return cls.from_dict(json.loads(text))


def validate(params: TarmaParams, strict_invertibility: bool = False,
             max_delay: int | None = None) -> TarmaParams:
    """Check shape and value invariants of a parameter vector.

    The sufficient invertibility condition ``sum_j max(|theta1_j|,
    |theta2_j|) < 1`` is an error under ``strict_invertibility`` and a
    warning otherwise, since boundary-of-ergodicity parameterizations are
    legitimate inputs.
    """
    if params.p < 0 or params.q < 0:
        raise InvalidInputError("orders p and q must be non-negative")
    if params.phi1.shape != (params.p + 1,) or params.phi2.shape != (params.p + 1,):
        raise InvalidInputError(
            f"phi vectors must have length p+1 = {params.p + 1}; got "
            f"{params.phi1.size} and {params.phi2.size}"
        )
    if params.theta1.shape != (params.q,) or params.theta2.shape != (params.q,):
        raise InvalidInputError(
            f"theta vectors must have length q = {params.q}; got "
            f"{params.theta1.size} and {params.theta2.size}"
        )
    for name in ("phi1", "phi2", "theta1", "theta2"):
        if not np.all(np.isfinite(getattr(params, name))):
            raise InvalidInputError(f"non-finite entry in {name}")
    if not math.isfinite(params.r):
        raise InvalidInputError("threshold r must be finite")
    if params.d < 1:
        raise InvalidInputError(f"delay d must be >= 1, got {params.d}")
    if max_delay is not None and params.d > max_delay:
        raise InvalidInputError(f"delay d = {params.d} exceeds maximum {max_delay}")
    if params.q > 0:
        bound = float(np.sum(np.maximum(np.abs(params.theta1),
                                        np.abs(params.theta2))))
        if bound >= 1.0:
            msg = (f"sufficient invertibility condition violated: "
                   f"sum_j max(|theta1_j|, |theta2_j|) = {bound:.4g} >= 1")
            if strict_invertibility:
                raise InvalidInputError(msg)
            warnings.warn(msg, stacklevel=2)
    return params


def _as_values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.ascontiguousarray(np.asarray(series, dtype=np.float64))


def _run_recursion(x: np.ndarray, params: TarmaParams, t_start: int) -> np.ndarray:
    return residuals_full(x, params.phi1, params.phi2, params.theta1,
                          params.theta2, float(params.r), params.d,
                          params.p, params.q, t_start)


def residuals(series, params: TarmaParams, t_start: int | None = None) -> np.ndarray:
    """Residuals of the conditional recursion, one per evaluated time point.

    Parameters
    ----------
    series : TimeSeries or array-like
    params : TarmaParams
    t_start : int, optional
        0-based first evaluated index; defaults to ``max(p, d)``.  May be
        set larger to align evaluation windows across delays.

    Returns
    -------
    ndarray of length ``len(series) - t_start``.
    """
    x = _as_values(series)
    validate(params)
    ts = max(params.p, params.d) if t_start is None else t_start
    if ts < max(params.p, params.d):
        raise InvalidInputError("t_start precedes the first computable residual")
    if x.size <= ts:
        raise InvalidInputError(
            f"series of length {x.size} too short; need more than {ts} points"
        )
    return _run_recursion(x, params, ts)[ts:]


def residual_jacobian(series, params: TarmaParams,
                      t_start: int | None = None) -> np.ndarray:
    """Rows ``d eps_t / d lambda`` for each evaluated time point.

    Columns follow the stacked layout [phi1, phi2, theta1, theta2]; the
    regime indicators are treated as constants (r and d fixed).
    """
    x = _as_values(series)
    validate(params)
    ts = max(params.p, params.d) if t_start is None else t_start
    if x.size <= ts:
        raise InvalidInputError(
            f"series of length {x.size} too short; need more than {ts} points"
        )
    eps = _run_recursion(x, params, ts)
    J = jacobian_full(x, params.phi1, params.phi2, params.theta1,
                      params.theta2, float(params.r), params.d,
                      params.p, params.q, ts, eps)
    return J[ts:]


def conditional_mean(history, params: TarmaParams,
                     residual_history: np.ndarray | None = None) -> float:
    """One-step-ahead forecast given the observed history.

    The forecast is the active regime's linear predictor with the next
    innovation set to its mean zero.  ``residual_history`` must be
    aligned with ``history`` (one residual per observation, zeros before
    the recursion start); when omitted it is recomputed from the history.
    """
    x = _as_values(history)
    need = max(params.p, params.d)
    if x.size < need:
        raise InvalidInputError(
            f"history of length {x.size} too short; need at least {need} points"
        )
    if residual_history is None:
        eps = _run_recursion(x, params, need) if x.size > need else np.zeros(x.size)
    else:
        eps = np.asarray(residual_history, dtype=np.float64)
        if eps.size != x.size:
            raise InvalidInputError(
                "residual_history must align with history "
                f"({eps.size} vs {x.size})"
            )
    n = x.size
    low = x[n - params.d] <= params.r
    phi = params.phi1 if low else params.phi2
    theta = params.theta1 if low else params.theta2
    m = phi[0]
    for i in range(1, params.p + 1):
        m += phi[i] * x[n - i]
    for j in range(1, params.q + 1):
        m += theta[j - 1] * eps[n - j]
    return float(m)


@dataclass(frozen=True)
class InnovationSpec:
    """Innovation process driving the simulation.

    ``kind`` is one of ``"gaussian"`` (variance ``sigma2``),
    ``"gaussian_mixture"`` (``(1-epsilon) N(0, sigma0_2) + epsilon
    N(0, sigma1_2)``) or ``"custom"`` (a ``sampler(rng, size)``
    callable).  ``seed`` feeds a dedicated generator unless an explicit
    one is passed to :func:`simulate`.  ``io`` attaches innovation-
    outlier shifts; build it with :func:`contaminate_innovations`.
    """

    kind: str = "gaussian"
    sigma2: float = 1.0
    epsilon: float = 0.0
    sigma0_2: float = 1.0
    sigma1_2: float = 1.0
    sampler: object = None
    seed: int | None = None
    io: "ContaminationSpec | None" = field(default=None)

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "gaussian_mixture", "custom"):
            raise InvalidInputError(f"unknown innovation kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma2 > 0:
            raise InvalidInputError("sigma2 must be > 0")
        if self.kind == "gaussian_mixture":
            if not 0.0 <= self.epsilon <= 1.0:
                raise InvalidInputError("mixture weight must lie in [0, 1]")
            if not (self.sigma0_2 > 0 and self.sigma1_2 > 0):
                raise InvalidInputError("mixture variances must be > 0")
            if self.sigma0_2 > self.sigma1_2:
                raise InvalidInputError(
                    "mixture requires sigma0_2 <= sigma1_2 (the inflated "
                    "component is the outlier one)"
                )
        if self.kind == "custom" and not callable(self.sampler):
            raise InvalidInputError("custom innovations need a sampler(rng, size)")

    def sample(self, rng: np.random.Generator, n: int, burn_in: int) -> np.ndarray:
        """Draw ``burn_in + n`` innovations; IO shifts hit only the last n."""
        total = burn_in + n
        if self.kind == "gaussian":
            eps = rng.normal(0.0, math.sqrt(self.sigma2), size=total)
        elif self.kind == "gaussian_mixture":
            comp = rng.random(total) < self.epsilon
            sd = np.where(comp, math.sqrt(self.sigma1_2), math.sqrt(self.sigma0_2))
            eps = rng.normal(0.0, 1.0, size=total) * sd
        else:
            eps = np.asarray(self.sampler(rng, total), dtype=np.float64)
            if eps.shape != (total,):
                raise InvalidInputError("custom sampler returned wrong shape")
        if self.io is not None:
            idx = contamination_times(self.io, n, rng)
            signs = np.where(rng.random(idx.size) < self.io.sign_prob, -1.0, 1.0)
            eps[burn_in + idx] += self.io.k * signs
        return eps

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "gaussian":
            d["sigma2"] = self.sigma2
        elif self.kind == "gaussian_mixture":
            d.update(epsilon=self.epsilon, sigma0_2=self.sigma0_2,
                     sigma1_2=self.sigma1_2)
        if self.seed is not None:
            d["seed"] = self.seed
        if self.io is not None:
            d["io"] = self.io.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InnovationSpec":
        io = d.get("io")
        return cls(
            kind=d.get("kind", "gaussian"),
            sigma2=float(d.get("sigma2", 1.0)),
            epsilon=float(d.get("epsilon", 0.0)),
            sigma0_2=float(d.get("sigma0_2", 1.0)),
            sigma1_2=float(d.get("sigma1_2", 1.0)),
            seed=d.get("seed"),
            io=ContaminationSpec.from_dict(io) if io is not None else None,
        )


_PATTERNS = ("deterministic_equally_spaced", "iid_bernoulli", "patchy")


@dataclass(frozen=True)
class ContaminationSpec:
    """Outlier model: kind AO/RO/IO, level, magnitude, sign and pattern.

    Outlier signs follow ``(-1)^xi`` with ``P(xi = 1) = sign_prob``, so
    the default 0.95 makes most shifts negative.  ``mean_duration``
    parameterizes the patchy pattern: a Markov switch with persistence
    ``1 - 1/mean_duration`` and stationary outlier probability
    ``epsilon``.
    """

    kind: str
    epsilon: float
    k: float
    sign_prob: float = 0.95
    pattern: str = "deterministic_equally_spaced"
    mean_duration: float = 3.0

    def __post_init__(self) -> None:
        if self.kind not in ("AO", "RO", "IO"):
            raise InvalidInputError(f"unknown contamination kind {self.kind!r}")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidInputError("epsilon must lie in (0, 1)")
        if not math.isfinite(self.k):
            raise InvalidInputError("outlier size k must be finite")
        if not 0.0 <= self.sign_prob <= 1.0:
            raise InvalidInputError("sign_prob must lie in [0, 1]")
        if self.pattern not in _PATTERNS:
            raise InvalidInputError(f"unknown pattern {self.pattern!r}")
        if self.pattern == "patchy" and not self.mean_duration >= 1.0:
            raise InvalidInputError("patchy pattern needs mean_duration >= 1")

    @property
    def persistence(self) -> float:
        """Probability of staying in the outlier state (patchy pattern)."""
        return 1.0 - 1.0 / self.mean_duration

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "epsilon": self.epsilon, "k": self.k,
             "sign_prob": self.sign_prob, "pattern": self.pattern}
        if self.pattern == "patchy":
            d["mean_duration"] = self.mean_duration
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ContaminationSpec":
        try:
            return cls(
                kind=d["kind"],
                epsilon=float(d["epsilon"]),
                k=float(d["k"]),
                sign_prob=float(d.get("sign_prob", 0.95)),
                pattern=d.get("pattern", "deterministic_equally_spaced"),
                mean_duration=float(d.get("mean_duration", 3.0)),
            )
        except KeyError as exc:
            raise InvalidInputError(f"contamination JSON missing field {exc}") from None


def contamination_times(spec: ContaminationSpec, n: int,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """0-based indices hit by the contamination pattern over ``n`` points.

    The equally spaced pattern places outliers at 1-based times t with
    ``t mod floor(1/epsilon) = 0``; the stochastic patterns need ``rng``.
    """
    if spec.pattern == "deterministic_equally_spaced":
        spacing = int(math.floor(1.0 / spec.epsilon))
        if spacing > n:
            raise InvalidInputError(
                f"epsilon = {spec.epsilon} places no outlier in {n} points"
            )
        return np.arange(spacing, n + 1, spacing, dtype=np.int64) - 1
    if rng is None:
        raise InvalidInputError(f"pattern {spec.pattern!r} needs a generator")
    if spec.pattern == "iid_bernoulli":
        return np.flatnonzero(rng.random(n) < spec.epsilon).astype(np.int64)
    # patchy: two-state Markov chain with stationary outlier mass epsilon
    p_exit = 1.0 / spec.mean_duration
    p_enter = spec.epsilon * p_exit / (1.0 - spec.epsilon)
    if p_enter > 1.0:
        raise InvalidInputError(
            "patchy pattern infeasible: epsilon too large for mean_duration"
        )
    state = rng.random() < spec.epsilon
    hits = np.zeros(n, dtype=bool)
    u = rng.random(n)
    for t in range(n):
        hits[t] = state
        state = (u[t] >= p_exit) if state else (u[t] < p_enter)
    return np.flatnonzero(hits).astype(np.int64)


def simulate(params: TarmaParams, n: int, innovations: InnovationSpec,
             burn_in: int = 500,
             rng: np.random.Generator | None = None) -> TimeSeries:
    """Simulate ``n`` points of the process, discarding ``burn_in`` steps.

    Generation starts from a zero initial state.  Fully deterministic
    given the innovation seed (or an explicit ``rng``, which takes
    precedence and supports stream-splitting across replications).
    """
    validate(params)
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if burn_in < 0:
        raise InvalidInputError("burn_in must be >= 0")
    if rng is None:
        rng = np.random.default_rng(innovations.seed)
    eps = innovations.sample(rng, n, burn_in)
    x = simulate_path(eps, params.phi1, params.phi2, params.theta1,
                      params.theta2, float(params.r), params.d,
                      params.p, params.q)
    return TimeSeries(x[burn_in:].copy())


def contaminate(series, spec: ContaminationSpec,
                seed: int | np.random.Generator | None = None
                ) -> tuple[TimeSeries, np.ndarray]:
    """Apply AO/RO contamination; returns the new series and hit indices.

    Both kinds reduce to ``X_t + Z_t * (-1)^{xi_t} * k`` because the
    replacement value is defined as the clean value plus the shift.  IO
    contamination instead acts on innovations inside :func:`simulate`;
    see :func:`contaminate_innovations`.
    """
    if spec.kind not in ("AO", "RO"):
        raise InvalidInputError(
            f"contaminate handles AO/RO only; use contaminate_innovations "
            f"for {spec.kind}"
        )
    x = _as_values(series).copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = contamination_times(spec, x.size, rng)
    signs = np.where(rng.random(idx.size) < spec.sign_prob, -1.0, 1.0)
    x[idx] += spec.k * signs
    ts = series.timestamps if isinstance(series, TimeSeries) else None
    return TimeSeries(x, ts), idx


def contaminate_innovations(base: InnovationSpec,
                            spec: ContaminationSpec) -> InnovationSpec:
    """Attach IO shifts ``k * (-1)^{xi_t} * Z_t`` to an innovation spec.

    The shifts are added after the base draws, at pattern times within
    the retained (post burn-in) window, so with ``k = 0`` the realized
    draws are identical to the base for the same seed.
    """
    if spec.kind != "IO":
        raise InvalidInputError(
            f"contaminate_innovations requires kind IO, got {spec.kind}"
        )
    return replace(base, io=spec)
