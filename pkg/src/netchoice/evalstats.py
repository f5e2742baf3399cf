"""Likelihood-ratio tests, power-law fits, attachment-kernel estimators and
held-out accuracy."""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

log = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


# ----------------------------------------------------------------------
# likelihood-ratio test


@dataclass
class LRTestResult:
    statistic: float
    df: int
    pvalue: float
    loglik_null: float
    loglik_alt: float

    def to_dict(self):
        return {"statistic": self.statistic, "df": self.df, "pvalue": self.pvalue,
                "loglik_null": self.loglik_null, "loglik_alt": self.loglik_alt}


def _loglik_and_names(fit):
    if isinstance(fit, tuple):
        return float(fit[0]), list(fit[1])
    ll = float(fit.loglik)
    if hasattr(fit, "param_names"):
        names = fit.param_names
        names = names() if callable(names) else names
    elif hasattr(fit, "model"):
        names = fit.model.param_names()
    else:
        names = list(fit.names)
    return ll, list(names)


def lr_test(null, alt, k=None, tol=1e-6):
    """Likelihood-ratio test of ``null`` nested in ``alt``.

    Either argument can be a fit object (``LogitFit``, ``EMResult``,
    ``ProfileFit``) or a ``(loglik, parameter_names)`` tuple. Nesting is
    checked by parameter names; ``k`` defaults to the difference in the
    number of parameters.
    """
    ll0, n0 = _loglik_and_names(null)
    ll1, n1 = _loglik_and_names(alt)
    if not set(n0) <= set(n1):
        raise EvalError(f"null model is not nested in the alternative: "
                        f"{sorted(set(n0) - set(n1))} missing")
    if k is None:
        k = len(set(n1)) - len(set(n0))
    if k < 0:
        raise EvalError("degrees of freedom must be non-negative")
    stat = 2.0 * (ll1 - ll0)
    if stat < -tol * max(1.0, abs(ll1)):
        raise EvalError(f"alternative fits worse than the nested null ({ll1} < {ll0}); "
                        "the alternative fit did not converge")
    stat = max(stat, 0.0)
    p = 1.0 if k == 0 else float(stats.chi2.sf(stat, k))
    if k == 0 and stat > 0:
        p = 0.0
    return LRTestResult(stat, int(k), p, ll0, ll1)


# ----------------------------------------------------------------------
# discrete power law


@dataclass
class PowerLawFit:
    gamma: float
    xmin: int
    n_tail: int
    loglik: float
    se: float
    ks: float


def _pl_loglik(gamma, x, xmin):
    return -gamma * np.sum(np.log(x)) - len(x) * np.log(special.zeta(gamma, xmin))


def _ks_distance(x, gamma, xmin):
    x = np.sort(x)
    vals, counts = np.unique(x, return_counts=True)
    emp = np.cumsum(counts) / len(x)
    z = special.zeta(gamma, xmin)
    model = 1.0 - special.zeta(gamma, vals + 1) / z
    return float(np.max(np.abs(emp - model)))


def _fit_tail(x, xmin):
    res = optimize.minimize_scalar(lambda g: -_pl_loglik(g, x, xmin), bounds=(1.0 + 1e-6, 30.0),
                                   method="bounded", options={"xatol": 1e-10})
    g = float(res.x)
    h = 1e-4
    curv = (_pl_loglik(g + h, x, xmin) - 2 * _pl_loglik(g, x, xmin)
            + _pl_loglik(g - h, x, xmin)) / h**2
    se = float(1.0 / np.sqrt(-curv)) if curv < 0 else float("nan")
    return g, float(-res.fun), se


def powerlaw_mle(degrees, xmin=1, ks_scan=False, min_tail=50):
    """Discrete power-law exponent by maximum likelihood.

    Maximizes ``-gamma * sum(log x) - n * log zeta(gamma, xmin)`` over the
    tail ``x >= xmin``. With ``ks_scan`` every observed value with at least
    ``min_tail`` tail observations is tried as ``xmin`` and the one with the
    smallest Kolmogorov-Smirnov distance is kept.
    """
    d = np.asarray(degrees, dtype=np.float64)
    if ks_scan:
        best = None
        for xm in np.unique(d[d >= 1]):
            tail = d[d >= xm]
            if len(tail) < min_tail:
                break
            g, ll, se = _fit_tail(tail, xm)
            ks = _ks_distance(tail, g, xm)
            if best is None or ks < best.ks:
                best = PowerLawFit(g, int(xm), len(tail), ll, se, ks)
        if best is None:
            raise EvalError("no x_min leaves enough tail observations")
        return best
    if xmin < 1:
        raise EvalError("x_min must be >= 1")
    tail = d[d >= xmin]
    if len(tail) == 0:
        raise EvalError("empty tail above x_min")
    if len(tail) < min_tail:
        warnings.warn(f"only {len(tail)} observations in the tail", RuntimeWarning, stacklevel=2)
    g, ll, se = _fit_tail(tail, xmin)
    return PowerLawFit(g, int(xmin), len(tail), ll, se, _ks_distance(tail, g, xmin))


# ----------------------------------------------------------------------
# attachment kernels


@dataclass
class KernelEstimate:
    """Relative attachment propensity per degree, normalized so degree 1 is 1.

    ``se_log`` is the standard error of ``log(value)``; missing degrees are
    NaN.
    """

    degree: np.ndarray
    value: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    se_log: np.ndarray
    estimator: str
    alpha: dict = field(default_factory=dict)
    exposures: np.ndarray | None = None
    choices: np.ndarray | None = None

    def at(self, k):
        idx = np.flatnonzero(self.degree == k)
        return float(self.value[idx[0]]) if len(idx) else float("nan")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["degree", "propensity", "lo", "hi", "estimator"])
        for k, v, a, b in zip(self.degree, self.value, self.lo, self.hi):
            if np.isfinite(v):
                w.writerow([int(k), repr(float(v)), repr(float(a)), repr(float(b)), self.estimator])
        return buf.getvalue()


def wilson_interval(successes, trials, z=1.96):
    s = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        phat = s / n
        denom = 1 + z**2 / n
        centre = (phat + z**2 / (2 * n)) / denom
        half = z * np.sqrt(phat * (1 - phat) / n + z**2 / (4 * n**2)) / denom
    return centre - half, centre + half


def newman_kernel(data, degree_col="degree", max_degree=None, z=1.96):
    """Choices of degree-``k`` nodes divided by degree-``k`` exposures.

    Each event exposes every alternative in its stored choice set. The ratio
    is normalized to degree 1; intervals are Wilson binomial intervals on the
    per-degree choice rate, scaled by the same normalization.
    """
    deg = data.column(degree_col).astype(np.int64)
    if max_degree is None:
        max_degree = int(deg.max())
    deg = np.minimum(deg, max_degree)
    L = max_degree + 1
    exposures = np.bincount(deg, weights=np.repeat(data.weight, data.sizes), minlength=L)
    choices = np.bincount(deg[data.chosen_rows], weights=data.weight, minlength=L)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(exposures > 0, choices / exposures, np.nan)
    if not (exposures[1] > 0 and choices[1] > 0):
        raise EvalError("degree 1 was never chosen; cannot normalize the kernel")
    lo, hi = wilson_interval(choices, exposures, z)
    norm = rate[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        value = rate / norm
        value = np.where(choices > 0, value, np.where(exposures > 0, 0.0, np.nan))
        var = np.where(choices > 0, (1 - rate) / choices, np.nan)
        se_log = np.sqrt(var + var[1])
    se_log[1] = 0.0
    return KernelEstimate(np.arange(L), value, lo / norm, hi / norm, se_log, "newman",
                          exposures=exposures, choices=choices)


def kernel_from_nonparametric(fit, z=1.96):
    """KernelEstimate ``exp(theta_k)`` from a non-parametric logit fit."""
    theta = np.asarray(fit.coef, dtype=float)
    se = np.asarray(fit.se, dtype=float)
    val = np.exp(theta - theta[1]) if np.isfinite(theta[1]) else np.exp(theta)
    return KernelEstimate(np.asarray(fit.levels), val, val * np.exp(-z * se), val * np.exp(z * se),
                          se, "nonparametric-logit", exposures=fit.exposures,
                          choices=fit.choices)


def pham_ls_alpha(fit, min_degree=1):
    """Weighted least-squares slope of ``theta_k`` on ``log k``.

    Weights are inverse squared standard errors. The pinned level is known
    exactly (SE 0, so infinite weight) and sits at ``log 1 = 0``; the line is
    therefore anchored at the origin and only the slope is fitted. Missing
    levels are left out. ``fit`` is a non-parametric fit or a
    ``(levels, coef, se)`` triple.
    """
    if isinstance(fit, tuple):
        k, theta, se = (np.asarray(a, dtype=float) for a in fit)
    else:
        k, theta, se = (np.asarray(a, dtype=float) for a in (fit.levels, fit.coef, fit.se))
    ok = (k >= min_degree) & (k > 1) & np.isfinite(theta) & np.isfinite(se) & (se > 0)
    if ok.sum() < 2:
        raise EvalError("need at least two usable coefficients for the LS fit")
    x = np.log(k[ok])
    w = 1.0 / se[ok] ** 2
    return float(np.sum(w * x * theta[ok]) / np.sum(w * x * x))


# ----------------------------------------------------------------------
# prediction


def _coef(fit):
    if hasattr(fit, "coef"):
        return np.asarray(fit.coef, dtype=float), getattr(fit, "names", None)
    return np.asarray(fit, dtype=float), None


def predicted_choice(theta, data):
    """Position of the highest-utility alternative per event (lowest index on ties)."""
    u = data.X @ theta if data.n_features else np.zeros(data.X.shape[0])
    starts = data.offsets[:-1]
    ev = np.repeat(np.arange(data.n_events), data.sizes)
    umax = np.maximum.reduceat(u, starts)
    rows = np.arange(len(u))
    first = np.minimum.reduceat(np.where(u == umax[ev], rows, len(u)), starts)
    return first - starts


def holdout_accuracy(fit, data):
    """Share of test events whose chosen alternative has the top probability."""
    theta, names = _coef(fit)
    if names is not None and tuple(names) != data.names:
        data = data.select(names)
    if data.n_events == 0:
        return float("nan")
    return float(np.mean(predicted_choice(theta, data) == data.chosen))
