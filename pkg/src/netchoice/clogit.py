"""Conditional logit estimation over ragged choice sets.

The probability of alternative ``j`` in choice set ``C`` is
``exp(theta @ x_j) / sum_{l in C} exp(theta @ x_l)``. Likelihood, gradient
and Hessian are sums over events, evaluated by the compiled kernel over
fixed-size event shards that are reduced in order, so results do not depend
on the thread count.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _kernels
from .features import ChoiceData, ChoiceEvent, FeatureError

log = logging.getLogger(__name__)

SHARD_EVENTS = 8192


class LikelihoodWarning(RuntimeWarning):
    """Some observed choice has probability zero under the model."""


class FitError(ValueError):
    pass


# ----------------------------------------------------------------------
# probabilities


def _as_matrix(event):
    if isinstance(event, ChoiceEvent):
        return np.asarray(event.features, dtype=np.float64)
    return np.atleast_2d(np.asarray(event, dtype=np.float64))


def utilities(theta, X):
    X = _as_matrix(X)
    theta = np.asarray(theta, dtype=np.float64)
    if X.shape[1] != theta.shape[0]:
        raise FitError(f"theta has {theta.shape[0]} entries but features have {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise FeatureError("non-finite feature values")
    return X @ theta if theta.size else np.zeros(X.shape[0])


def choice_prob(theta, event):
    """Softmax of ``theta @ x`` over one event's alternatives.

    ``event`` is a :class:`ChoiceEvent` or an ``(|C|, F)`` feature matrix.
    """
    u = utilities(theta, event)
    e = np.exp(u - u.max())
    return e / e.sum()


def _check(theta, data):
    theta = np.ascontiguousarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != data.n_features:
        raise FitError(f"theta has {theta.shape[0]} entries but data has "
                       f"{data.n_features} features {list(data.names)}")
    if not np.all(np.isfinite(data.X)):
        raise FeatureError("non-finite feature values")
    return theta


def _shards(n, size=SHARD_EVENTS):
    return [(lo, min(lo + size, n)) for lo in range(0, max(n, 1), size)] if n else []


def evaluate(theta, data, order=2, weights=None, util_offset=None, threads=1):
    """Per-event log-probabilities plus weighted gradient and Hessian.

    Returns ``(ll_events, grad, hess)``; ``grad``/``hess`` are None below the
    requested ``order``.
    """
    theta = _check(theta, data)
    w = data.weight if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    shards = _shards(data.n_events)

    def run(bounds):
        lo, hi = bounds
        r0, r1 = data.offsets[lo], data.offsets[hi]
        off = None if util_offset is None else np.ascontiguousarray(util_offset[r0:r1])
        return _kernels.clogit_eval(
            np.ascontiguousarray(data.X[r0:r1]), np.ascontiguousarray(data.offsets[lo:hi + 1] - r0),
            np.ascontiguousarray(data.chosen[lo:hi]), theta,
            np.ascontiguousarray(w[lo:hi]), off, order)

    if threads > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, shards))
    else:
        parts = [run(s) for s in shards]
    ll = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    F = data.n_features
    grad = hess = None
    if order >= 1:
        grad = np.zeros(F)
        for p in parts:
            grad += p[1]
    if order >= 2:
        hess = np.zeros((F, F))
        for p in parts:
            hess += p[2]
    return ll, grad, hess


def _flag(ll):
    bad = ~np.isfinite(ll)
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} events have zero probability under the model "
                      f"(first: {np.flatnonzero(bad)[:5].tolist()})", LikelihoodWarning,
                      stacklevel=3)
    return bad


def loglik_events(theta, data):
    """Per-event log-probabilities; events flagged invalid (chosen node
    outside the choice set) get ``-inf``."""
    ll, _, _ = evaluate(theta, data, order=0)
    ll[~data.valid] = -np.inf
    return ll


def log_likelihood(theta, data, weights=None):
    """Sum of log choice probabilities (weighted when ``weights`` is given).

    Choices with probability zero make the result ``-inf`` and raise a
    :class:`LikelihoodWarning` rather than an error.
    """
    ll = loglik_events(theta, data)
    _flag(ll)
    w = data.weight if weights is None else weights
    with np.errstate(invalid="ignore"):
        return float(np.sum(w * ll))


def gradient(theta, data, weights=None):
    return evaluate(theta, data, order=1, weights=weights)[1]


def hessian(theta, data, weights=None):
    return evaluate(theta, data, order=2, weights=weights)[2]


# ----------------------------------------------------------------------
# optimization


@dataclass
class NewtonResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    hess: np.ndarray
    n_iter: int
    converged: bool
    message: str


def newton_maximize(fun, x0, gtol=1e-8, ftol=1e-10, max_iter=500, ridge=0.0):
    """Damped Newton ascent with Armijo backtracking for a concave ``fun``.

    ``fun(x, order)`` returns ``(f, grad, hess)``. ``ridge`` subtracts
    ``ridge/2 * |x|^2`` from the objective.
    """
    x = np.array(x0, dtype=np.float64)
    k = len(x)

    def obj(x, order):
        f, g, H = fun(x, order)
        if ridge:
            f = f - 0.5 * ridge * x @ x
            if g is not None:
                g = g - ridge * x
            if H is not None:
                H = H - ridge * np.eye(k)
        return f, g, H

    f, g, H = obj(x, 2)
    if not np.isfinite(f):
        raise FitError("objective is not finite at the starting point")
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        if k == 0 or np.max(np.abs(g)) < gtol:
            converged, message, it = True, "gradient tolerance", it - 1
            break
        A = -H
        try:
            step = np.linalg.solve(A + 1e-12 * np.trace(A) / max(k, 1) * np.eye(k), g)
            if not np.all(np.isfinite(step)) or g @ step <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(A, g, rcond=None)[0]
            if g @ step <= 0:
                step = g.copy()
        t = 1.0
        slope = g @ step
        while True:
            x_new = x + t * step
            f_new = obj(x_new, 0)[0]
            if np.isfinite(f_new) and f_new >= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            message = "line search failed"
            converged = np.max(np.abs(g)) < np.sqrt(gtol)
            it -= 1
            break
        f_old = f
        x = x_new
        f, g, H = obj(x, 2)
        if np.max(np.abs(g)) < gtol:
            converged, message = True, "gradient tolerance"
            break
        if abs(f - f_old) <= ftol * max(abs(f_old), 1.0):
            converged, message = True, "relative likelihood tolerance"
            x, f, g, H = _polish(obj, x, f, g, H, gtol)
            break
    return NewtonResult(x, float(f), g, H, it, converged, message)


def _polish(obj, x, f, g, H, gtol, steps=3):
    # a stalled objective can leave the gradient well above gtol on large
    # data sets; a few plain Newton steps bring it down (quadratic rate)
    for _ in range(steps):
        if np.max(np.abs(g)) < gtol:
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            break
        f_new, g_new, H_new = obj(x + step, 2)
        if not np.isfinite(f_new) or f_new < f - 1e-12 * max(abs(f), 1.0):
            break
        if np.max(np.abs(g_new)) >= np.max(np.abs(g)):
            break
        x, f, g, H = x + step, f_new, g_new, H_new
    return x, f, g, H


def _bfgs_maximize(fun, x0, gtol, max_iter, ridge):
    def negf(x):
        f, g, _ = fun(x, 1)
        if ridge:
            f, g = f - 0.5 * ridge * x @ x, g - ridge * x
        return -f, -g

    res = optimize.minimize(negf, x0, jac=True, method="BFGS",
                            options={"gtol": gtol, "maxiter": max_iter})
    f, g, H = fun(res.x, 2)
    if ridge:
        f, g, H = f - 0.5 * ridge * res.x @ res.x, g - ridge * res.x, H - ridge * np.eye(len(res.x))
    conv = bool(res.success) or np.max(np.abs(g)) < gtol
    return NewtonResult(res.x, float(f), g, H, int(res.nit), conv, str(res.message))


def _standard_errors(H, cond_max=1e12):
    """``sqrt(diag(inv(-H)))``, NaN when ``-H`` is singular or not positive definite."""
    k = H.shape[0]
    if k == 0:
        return np.zeros(0), True
    A = -H
    try:
        eig = np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError:
        return np.full(k, np.nan), False
    if eig.min() <= 0 or eig.max() / eig.min() > cond_max:
        return np.full(k, np.nan), False
    cov = np.linalg.inv(A)
    return np.sqrt(np.clip(np.diag(cov), 0, None)), True


def collinear_direction(data, tol=1e-10):
    """Unit direction ``v`` with ``X v`` constant within every event, if any.

    Such a direction leaves every probability unchanged, so the coefficients
    are not identified along it.
    """
    if data.n_features == 0:
        return None
    sizes = data.sizes
    ev = np.repeat(np.arange(data.n_events), sizes)
    means = np.add.reduceat(data.X, data.offsets[:-1], axis=0) / sizes[:, None]
    Xc = data.X - means[ev]
    G = Xc.T @ Xc
    scale = np.sqrt(np.maximum(np.diag(G), 1e-300))
    Gs = G / np.outer(scale, scale)
    vals, vecs = np.linalg.eigh(Gs)
    if vals[0] < tol * max(vals[-1], 1.0) or np.any(np.diag(G) == 0):
        v = vecs[:, 0] / scale
        zero = np.flatnonzero(np.diag(G) == 0)
        if len(zero):
            v = np.zeros(data.n_features)
            v[zero[0]] = 1.0
        return v / np.linalg.norm(v)
    return None


def separation_direction(data, tol=1e-9, max_rows=2_000_000):
    """Direction ``d`` along which every chosen alternative has maximal
    utility (strictly so somewhere), found by linear programming.

    Along such a direction the likelihood keeps increasing, so the MLE is
    at infinity. Returns None when no such direction exists or the data are
    too large to check.
    """
    if data.n_features == 0 or data.X.shape[0] > max_rows:
        return None
    ev = np.repeat(np.arange(data.n_events), data.sizes)
    D = data.X - data.X[data.chosen_rows][ev]
    D = D[np.any(D != 0, axis=1)]
    if not len(D):
        return None
    F = data.n_features
    res = optimize.linprog(D.sum(axis=0), A_ub=D, b_ub=np.zeros(len(D)),
                           bounds=[(-1, 1)] * F, method="highs")
    if res.status != 0 or -res.fun <= tol * max(1.0, np.abs(D).max()):
        return None
    return res.x / np.linalg.norm(res.x)


@dataclass
class LogitFit:
    names: tuple
    coef: np.ndarray
    se: np.ndarray
    loglik: float
    grad_norm: float
    n_iter: int
    converged: bool
    n_events: int
    ridge: float = 0.0
    message: str = ""
    direction: np.ndarray | None = None
    hessian: np.ndarray | None = None
    options: dict = field(default_factory=dict)

    @property
    def z(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    def __getitem__(self, name):
        return float(self.coef[list(self.names).index(name)])

    def se_of(self, name):
        return float(self.se[list(self.names).index(name)])

    def coef_table(self):
        return [
            {"name": n, "estimate": float(c), "se": _num(s), "z": _num(z)}
            for n, c, s, z in zip(self.names, self.coef, self.se, self.z)
        ]

    def to_dict(self):
        return {
            "coefficients": self.coef_table(),
            "loglik": float(self.loglik),
            "grad_norm": float(self.grad_norm),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "n_events": int(self.n_events),
            "ridge": float(self.ridge),
            "ridge_active": bool(self.ridge > 0),
            "message": self.message,
            "direction": None if self.direction is None else [float(v) for v in self.direction],
            "options": dict(self.options),
        }

    def to_json(self, **extra):
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "estimate", "se", "z"])
        for row in self.coef_table():
            w.writerow([row["name"], repr(row["estimate"]),
                        "" if row["se"] is None else repr(row["se"]),
                        "" if row["z"] is None else repr(row["z"])])
        return buf.getvalue()

    def predict_proba(self, data):
        u = data.X @ self.coef if data.n_features else np.zeros(data.X.shape[0])
        out = np.empty_like(u)
        for k in range(data.n_events):
            lo, hi = data.offsets[k], data.offsets[k + 1]
            e = np.exp(u[lo:hi] - u[lo:hi].max())
            out[lo:hi] = e / e.sum()
        return out


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else None


def fit(data, names=None, theta0=None, method="newton", ridge=0.0, gtol=1e-8,
        ftol=1e-10, max_iter=500, weights=None, util_offset=None, threads=1):
    """Maximum-likelihood conditional logit.

    Parameters
    ----------
    data : ChoiceData
    names : sequence of str, optional
        Feature columns to use (default: all).
    theta0 : array, optional
        Starting point; zeros (the uniform model) by default.
    method : {"newton", "bfgs"}
    ridge : float
        L2 penalty for separated small samples. Standard errors always come
        from the unpenalized Hessian.
    weights : array, optional
        Per-event weights (defaults to ``data.weight``).

    Returns
    -------
    LogitFit
        ``converged`` is False with a ``direction`` when the coefficients
        are not identified (collinear features) or diverge (separation).
    """
    if names is not None:
        data = data.select(names)
    if data.n_events == 0:
        raise FitError("no events to fit")
    n_invalid = int(np.sum(~data.valid))
    if n_invalid:
        warnings.warn(f"{n_invalid} events choose outside their choice set (probability 0); "
                      "they are left out of the fit", LikelihoodWarning, stacklevel=2)
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64)[data.valid]
        if util_offset is not None:
            util_offset = np.asarray(util_offset)[np.repeat(data.valid, data.sizes)]
        data = data.subset(np.flatnonzero(data.valid))
        if data.n_events == 0:
            raise FitError("no valid events to fit")
    F = data.n_features
    w = data.weight if weights is None else np.asarray(weights, dtype=np.float64)
    x0 = np.zeros(F) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    opts = {"method": method, "ridge": ridge, "gtol": gtol, "ftol": ftol, "max_iter": max_iter,
            "invalid_events_dropped": n_invalid}

    direction = collinear_direction(data) if ridge == 0 else None
    if direction is not None:
        msg = "features are collinear within choice sets; coefficients not identified"
        log.warning(msg)
        ll = float(np.sum(w * loglik_events(x0, data)))
        return LogitFit(data.names, x0, np.full(F, np.nan), ll, np.nan, 0, False,
                        data.n_events, ridge, msg, direction, None, opts)

    def fun(theta, order):
        ll, g, H = evaluate(theta, data, order=order, weights=w, util_offset=util_offset,
                            threads=threads)
        with np.errstate(invalid="ignore"):
            return float(np.sum(w * ll)), g, H

    if method == "newton":
        res = newton_maximize(fun, x0, gtol, ftol, max_iter, ridge)
    elif method == "bfgs":
        res = _bfgs_maximize(fun, x0, gtol, max_iter, ridge)
    else:
        raise FitError(f"unknown method {method!r}")

    ll, g, H = fun(res.x, 2)
    se, ok = _standard_errors(H)
    msg = res.message
    converged = res.converged
    direction = None
    if converged and not ok:
        msg += "; Hessian singular, standard errors undefined"
    big = np.max(np.abs(res.x), initial=0) > 50
    loose = np.any(~np.isfinite(se) | (se > 100 * np.maximum(1.0, np.abs(res.x))))
    if ridge == 0 and (big or loose or not converged):
        sep = separation_direction(data)
        if sep is not None:
            converged, direction = False, sep
            msg = "data are separated along a direction; MLE is at infinity; " + msg
        elif big:
            converged = False
            msg = "coefficients diverging (possible separation); " + msg
    if direction is None and not converged and F:
        direction = np.linalg.eigh(-H)[1][:, 0]
    return LogitFit(data.names, res.x, se, ll, float(np.max(np.abs(g), initial=0.0)),
                    res.n_iter, converged, data.n_events, ridge, msg, direction, H, opts)


# ----------------------------------------------------------------------
# non-parametric degree model


@dataclass
class NonparametricFit:
    """Per-degree coefficients ``theta_k`` relative to the pinned level.

    ``coef`` is NaN for missing levels; ``missing`` maps each such level to
    ``"never exposed"`` or ``"never chosen"``.
    """

    levels: np.ndarray
    coef: np.ndarray
    se: np.ndarray
    exposures: np.ndarray
    choices: np.ndarray
    missing: dict
    pinned: int
    loglik: float
    converged: bool
    n_iter: int
    n_events: int
    top_pooled: bool

    def table(self):
        return [
            {"degree": int(k), "estimate": _num(c), "se": _num(s),
             "exposures": int(e), "choices": int(ch), "status": self.missing.get(int(k), "ok")}
            for k, c, s, e, ch in zip(self.levels, self.coef, self.se, self.exposures, self.choices)
        ]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["degree", "estimate", "se", "exposures", "choices", "status"])
        for r in self.table():
            w.writerow([r["degree"], "" if r["estimate"] is None else repr(r["estimate"]),
                        "" if r["se"] is None else repr(r["se"]),
                        r["exposures"], r["choices"], r["status"]])
        return buf.getvalue()


def degree_groups(data, max_degree, degree_col="degree"):
    """Collapse each choice set to (degree level, count) rows.

    Degrees above ``max_degree`` are pooled into the top level. Returns
    ``(level, log_count, offsets, chosen_pos, count)`` with rows sorted by
    level within each event.
    """
    deg = data.column(degree_col)
    if np.any(deg < 0) or np.any(deg != np.round(deg)):
        raise FitError(f"column {degree_col!r} must hold non-negative integer degrees")
    L = int(max_degree) + 1
    lev = np.minimum(deg.astype(np.int64), L - 1)
    ev = np.repeat(np.arange(data.n_events, dtype=np.int64), data.sizes)
    key = ev * L + lev
    uniq, count = np.unique(key, return_counts=True)
    g_ev = uniq // L
    g_lev = uniq % L
    offsets = np.searchsorted(g_ev, np.arange(data.n_events + 1)).astype(np.int64)
    ckey = np.arange(data.n_events) * L + lev[data.chosen_rows]
    chosen_pos = np.searchsorted(uniq, ckey) - offsets[:-1]
    return g_lev, np.log(count), offsets, chosen_pos.astype(np.int64), count


def fit_nonparametric_pa(data, max_degree, degree_col="degree", pin=1, gtol=1e-8,
                         ftol=1e-12, max_iter=500, weights=None):
    """One coefficient per degree ``0..max_degree`` with ``theta_pin = 0``.

    Levels never present in any choice set, and levels present but never
    chosen (whose MLE is minus infinity), are reported as missing; the
    latter are removed from the choice sets, which is the limit of the
    likelihood as their coefficient goes to minus infinity.
    """
    L = int(max_degree) + 1
    if not 0 <= pin < L:
        raise FitError("pinned level outside 0..max_degree")
    w = data.weight if weights is None else np.asarray(weights, dtype=np.float64)
    lev, log_count, offsets, chosen_pos, count = degree_groups(data, max_degree, degree_col)
    exposures = np.bincount(lev, weights=count, minlength=L).astype(np.int64)
    chosen_lev = lev[offsets[:-1] + chosen_pos]
    choices = np.bincount(chosen_lev, minlength=L).astype(np.int64)
    missing = {k: "never exposed" for k in range(L) if exposures[k] == 0}

    # Levels present but never chosen have MLE -inf (drop their rows);
    # levels chosen in every event they appear in have MLE +inf (drop those
    # events, whose probability tends to 1). Repeat until nothing changes.
    n_ev = len(chosen_pos)
    row_ev = np.repeat(np.arange(n_ev), np.diff(offsets))
    ev_on = np.ones(n_ev, dtype=bool)
    while True:
        row_on = ev_on[row_ev] & np.array([k not in missing for k in range(L)])[lev]
        present = np.bincount(lev[row_on], minlength=L)
        picked = np.bincount(chosen_lev[ev_on], minlength=L)
        changed = False
        for k in range(L):
            if k in missing or present[k] == 0:
                continue
            if picked[k] == 0:
                missing[k] = "never chosen"
                changed = True
            elif picked[k] == present[k]:
                missing[k] = "always chosen"
                ev_on &= chosen_lev != k
                changed = True
        if not changed:
            break
    if pin in missing:
        raise FitError(f"pinned degree {pin} is {missing[pin]}; cannot identify the kernel")

    keep = row_on
    starts = offsets[:-1][ev_on]
    crow = starts + chosen_pos[ev_on]
    before = np.cumsum(keep) - keep
    kept_per_ev = np.add.reduceat(keep.astype(np.int64), offsets[:-1])[ev_on] if n_ev else np.zeros(0, int)
    chosen_pos = (before[crow] - before[starts]).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(kept_per_ev)]).astype(np.int64)
    lev = lev[keep]
    log_count = log_count[keep]
    w = np.ascontiguousarray(w[ev_on])

    free = np.array([k for k in range(L) if k not in missing and k != pin], dtype=np.int64)

    def fun(x, order):
        theta = np.zeros(L)
        theta[free] = x
        ll, g, H = _kernels.categorical_eval(lev, log_count, offsets, chosen_pos, theta, w, order)
        f = float(np.sum(w * ll))
        return (f, None if g is None else g[free],
                None if H is None else H[np.ix_(free, free)])

    res = newton_maximize(fun, np.zeros(len(free)), gtol, ftol, max_iter)
    se_free, _ = _standard_errors(res.hess)
    coef = np.full(L, np.nan)
    se = np.full(L, np.nan)
    coef[pin] = 0.0
    se[pin] = 0.0
    coef[free] = res.x
    se[free] = se_free
    if missing:
        log.info("non-parametric kernel: %d missing levels (%s)", len(missing),
                 ", ".join(f"{k}: {v}" for k, v in list(missing.items())[:10]))
    return NonparametricFit(np.arange(L), coef, se, exposures, choices, missing, pin,
                            res.f, res.converged, res.n_iter, n_ev,
                            bool(np.any(data.column(degree_col) > max_degree)))
