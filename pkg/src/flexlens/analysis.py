"""OLS fitting, forward-backward stepwise selection and performance quadrants.

p-values come from a self-contained Student-t survival function built on the
regularized incomplete beta function (Lentz continued fraction), so the
statistical contract does not depend on an external stats library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class AnalysisError(ValueError):
    """Raised for unusable regression or classification inputs."""


class RankDeficientError(AnalysisError):
    """Predictor matrix (with intercept) is not full column rank."""


# ---------------------------------------------------------------------------
# special functions

_BETACF_MAXIT = 300
_BETACF_EPS = 1e-15
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: int) -> float:
    """Two-sided p-value P(|T_dof| >= |t|)."""
    if dof < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    return betainc_regularized(dof / 2.0, 0.5, dof / (dof + t * t))


# ---------------------------------------------------------------------------
# OLS

@dataclass
class RegressionFit:
    response: str
    predictors: list[str]  # without the intercept
    coefficients: np.ndarray  # [intercept, predictors...]
    standard_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    r_squared: float
    adj_r_squared: float
    n: int
    dof: int

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self._pos(name)])

    def p_value(self, name: str) -> float:
        return float(self.p_values[self._pos(name)])

    def _pos(self, name: str) -> int:
        if name == "intercept":
            return 0
        return 1 + self.predictors.index(name)

    def as_dict(self) -> dict:
        names = ["intercept"] + self.predictors
        return {
            "response": self.response,
            "terms": [
                {"name": nm, "beta": float(b), "se": float(se),
                 "t": float(t), "p": float(p)}
                for nm, b, se, t, p in zip(names, self.coefficients,
                                           self.standard_errors,
                                           self.t_values, self.p_values)
            ],
            "r_squared": self.r_squared,
            "adj_r_squared": self.adj_r_squared,
            "n": self.n,
            "dof": self.dof,
        }


def ols_fit(X: np.ndarray, y: np.ndarray, names: Sequence[str],
            response: str = "y") -> RegressionFit:
    """Ordinary least squares with an intercept prepended to X.

    Coefficients solve the normal equations; standard errors come from the
    residual variance times the diagonal of (X'X)^-1, p-values from a
    two-sided Student-t test on n - k - 1 degrees of freedom.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, k = X.shape
    if len(names) != k:
        raise AnalysisError("names do not match predictor columns")
    if n != len(y):
        raise AnalysisError("X and y row counts differ")
    if n < k + 2:
        raise AnalysisError(f"need at least {k + 2} rows for {k} predictors, got {n}")
    Xd = np.column_stack([np.ones(n), X])
    if np.linalg.matrix_rank(Xd) < k + 1:
        raise RankDeficientError("predictor matrix is rank deficient")

    xtx = Xd.T @ Xd
    xtx_inv = np.linalg.inv(xtx)
    beta = xtx_inv @ (Xd.T @ y)
    resid = y - Xd @ beta
    rss = float(resid @ resid)
    dof = n - k - 1
    sigma2 = rss / dof
    se = np.sqrt(np.maximum(sigma2 * np.diag(xtx_inv), 0.0))

    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se,
                     np.where(beta == 0, 0.0, np.sign(beta) * np.inf))
    p = np.array([t_two_sided_p(float(tv), dof) for tv in t])

    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / dof
    return RegressionFit(response, list(names), beta, se, t, p, r2, adj_r2, n, dof)


# ---------------------------------------------------------------------------
# stepwise selection

@dataclass
class StepRecord:
    action: str  # "add" | "remove" | "skip"
    variable: str
    p_value: float | None
    adj_r_squared: float | None


@dataclass
class StepwiseTrace:
    steps: list[StepRecord] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"steps": [
            {"action": s.action, "variable": s.variable,
             "p": s.p_value, "adj_r_squared": s.adj_r_squared}
            for s in self.steps]}


def _intercept_only_fit(y: np.ndarray, response: str) -> RegressionFit:
    """Degenerate fit used as the floor when the baseline list is empty."""
    n = len(y)
    if n < 2:
        raise AnalysisError("need at least 2 rows")
    mean = float(y.mean())
    dof = n - 1
    se = float(np.sqrt(np.sum((y - mean) ** 2) / dof / n))
    t = mean / se if se > 0 else (0.0 if mean == 0 else np.sign(mean) * np.inf)
    return RegressionFit(response, [], np.array([mean]), np.array([se]),
                         np.array([t]), np.array([t_two_sided_p(float(t), dof)]),
                         0.0, 0.0, n, dof)


def _fit_subset(candidates: Mapping[str, np.ndarray], y: np.ndarray,
                names: Sequence[str], response: str) -> RegressionFit:
    if not names:
        return _intercept_only_fit(y, response)
    X = np.column_stack([np.asarray(candidates[nm], dtype=float) for nm in names])
    return ols_fit(X, y, list(names), response)


def stepwise_select(candidates: Mapping[str, np.ndarray], y: np.ndarray,
                    baseline: Sequence[str] = (), alpha: float = 0.05,
                    response: str = "y") -> tuple[RegressionFit, StepwiseTrace]:
    """Forward-backward selection with significance gating.

    A forward step adds the candidate with the smallest p-value among those
    with p <= alpha that also raise adjusted R-squared; a backward step drops
    any retained non-baseline variable whose p exceeds alpha. Ties break by
    variable name. Runs to a fixed point; baseline variables are never
    dropped, so the baseline-only model is the floor.
    """
    y = np.asarray(y, dtype=float).ravel()
    baseline = list(baseline)
    for nm in baseline:
        if nm not in candidates:
            raise AnalysisError(f"baseline variable {nm!r} not among candidates")
    current = list(baseline)
    trace = StepwiseTrace()

    def fit(names: Sequence[str]) -> RegressionFit:
        return _fit_subset(candidates, y, names, response)

    current_fit = fit(current)
    skipped: set[str] = set()
    while True:
        changed = False
        # forward
        best: tuple[float, str, RegressionFit] | None = None
        for nm in sorted(candidates):
            if nm in current:
                continue
            try:
                trial = fit(current + [nm])
            except RankDeficientError:
                if nm not in skipped:
                    trace.steps.append(StepRecord("skip", nm, None, None))
                    skipped.add(nm)
                continue
            except AnalysisError:
                continue  # not enough rows for a larger model
            p = trial.p_value(nm)
            if p <= alpha and trial.adj_r_squared > current_fit.adj_r_squared:
                if best is None or (p, nm) < (best[0], best[1]):
                    best = (p, nm, trial)
        if best is not None:
            _, nm, trial = best
            current.append(nm)
            current_fit = trial
            trace.steps.append(StepRecord("add", nm, best[0], trial.adj_r_squared))
            changed = True
        # backward
        while True:
            removable = [nm for nm in current if nm not in baseline
                         and current_fit.p_value(nm) > alpha]
            if not removable:
                break
            worst = max(removable, key=lambda nm: (current_fit.p_value(nm), nm))
            p = current_fit.p_value(worst)
            current.remove(worst)
            current_fit = fit(current)
            trace.steps.append(StepRecord("remove", worst, p,
                                          current_fit.adj_r_squared))
            changed = True
        if not changed:
            return current_fit, trace


# ---------------------------------------------------------------------------
# performance quadrants

@dataclass
class QuadrantAssignment:
    facility_id: str
    uptime_label: str   # "high" | "low"
    avoided_label: str  # "high" | "low"
    uptime_cut: float
    avoided_cut: float
    mode: str  # "mean" | "p75"

    @property
    def quadrant(self) -> str:
        return f"{self.uptime_label}-uptime/{self.avoided_label}-avoided"


def quadrant_classify(rows: Sequence[tuple[str, float, float]],
                      mode: str = "mean") -> list[QuadrantAssignment]:
    """Label each facility high/low on uptime and avoided emissions.

    Cuts are the fleet mean or 75th percentile per mode; a facility is high
    on an axis only when strictly above the cut (ties go low).
    """
    if mode not in ("mean", "p75"):
        raise AnalysisError(f"unknown quadrant mode {mode!r}")
    if len(rows) < 2:
        raise AnalysisError("need at least 2 facilities to classify")
    uptimes = np.array([r[1] for r in rows], dtype=float)
    avoided = np.array([r[2] for r in rows], dtype=float)
    if mode == "mean":
        u_cut, a_cut = float(uptimes.mean()), float(avoided.mean())
    else:
        u_cut = float(np.percentile(uptimes, 75))
        a_cut = float(np.percentile(avoided, 75))
    return [
        QuadrantAssignment(
            facility_id=fid,
            uptime_label="high" if u > u_cut else "low",
            avoided_label="high" if a > a_cut else "low",
            uptime_cut=u_cut, avoided_cut=a_cut, mode=mode)
        for fid, u, a in rows
    ]
