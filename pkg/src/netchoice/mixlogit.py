"""Latent-class (discrete mixture) conditional logit fitted by EM.

A mode is a conditional logit over a subset of the feature columns and,
optionally, over a restricted choice set: with ``filter="is_fof"`` the mode
renormalizes over the alternatives whose ``is_fof`` column is positive and
gives probability zero to choices outside that subset. Modes whose
coefficients are all frozen (uniform attachment, linear PA) skip their
M-step, which is how the copy, local-search and (r, p) models are written.
"""
from __future__ import annotations

import copy as _copy
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .clogit import evaluate, newton_maximize
from .features import ChoiceData

log = logging.getLogger(__name__)


class MixtureError(ValueError):
    pass


@dataclass
class Mode:
    """One mixture component.

    Parameters
    ----------
    name : str
    features : tuple of str
        Columns of the choice data used by this mode (empty: uniform).
    filter : str or None
        Indicator column restricting the choice set (``None``: all).
    theta : array
    frozen : array of bool
        Coefficients that are never updated.
    """

    name: str
    features: tuple = ()
    filter: str | None = None
    theta: np.ndarray | None = None
    frozen: np.ndarray | None = None

    def __post_init__(self):
        self.features = tuple(self.features)
        k = len(self.features)
        self.theta = np.zeros(k) if self.theta is None else np.asarray(self.theta, dtype=float).copy()
        if self.frozen is None:
            self.frozen = np.zeros(k, dtype=bool)
        elif np.isscalar(self.frozen):
            self.frozen = np.full(k, bool(self.frozen))
        else:
            self.frozen = np.asarray(self.frozen, dtype=bool).copy()
        if self.theta.shape != (k,) or self.frozen.shape != (k,):
            raise MixtureError(f"mode {self.name!r}: theta/frozen must have {k} entries")

    @property
    def fully_frozen(self):
        return bool(np.all(self.frozen))

    def param_names(self):
        return [f"{self.name}.{f}" for f, fz in zip(self.features, self.frozen) if not fz]


@dataclass
class MixtureModel:
    modes: list
    pi: np.ndarray | None = None

    def __post_init__(self):
        M = len(self.modes)
        if M < 1:
            raise MixtureError("a mixture needs at least one mode")
        names = [m.name for m in self.modes]
        if len(set(names)) != M:
            raise MixtureError("mode names must be unique")
        self.pi = np.full(M, 1.0 / M) if self.pi is None else np.asarray(self.pi, dtype=float).copy()
        if self.pi.shape != (M,) or np.any(self.pi < 0) or not np.isclose(self.pi.sum(), 1.0):
            raise MixtureError("pi must be a probability vector over the modes")

    @property
    def M(self):
        return len(self.modes)

    def param_names(self):
        names = [f"pi[{m.name}]" for m in self.modes[1:]]
        for m in self.modes:
            names += m.param_names()
        return names

    @property
    def n_params(self):
        return len(self.param_names())

    def copy(self):
        return _copy.deepcopy(self)

    def to_dict(self):
        return {
            "pi": {m.name: float(p) for m, p in zip(self.modes, self.pi)},
            "modes": [
                {"name": m.name, "features": list(m.features), "filter": m.filter,
                 "theta": [float(v) for v in m.theta], "frozen": [bool(v) for v in m.frozen]}
                for m in self.modes
            ],
        }


class _Prepared:
    """Choice data specialised to one mode (columns selected, rows filtered)."""

    def __init__(self, data, mode):
        d = data.select(mode.features)
        if mode.filter is not None:
            d, inside = d.restrict_rows(data.column(mode.filter) > 0)
        else:
            inside = np.ones(data.n_events, dtype=bool)
        self.data = d
        self.inside = inside
        self.mode = mode

    def loglik(self, theta):
        ll, _, _ = evaluate(theta, self.data, order=0)
        return np.where(self.inside, ll, -np.inf)

    def refit(self, theta, weights, gtol=1e-9, max_iter=100):
        mode = self.mode
        free = ~mode.frozen
        if not np.any(free):
            return theta
        w = np.where(self.inside, weights, 0.0)
        X = self.data.X
        off = X[:, ~free] @ theta[~free] if np.any(~free) else None
        sub = self.data.select([f for f, fr in zip(mode.features, free) if fr])

        def fun(x, order):
            ll, g, H = evaluate(x, sub, order=order, weights=w, util_offset=off)
            return float(np.sum(w * ll)), g, H

        res = newton_maximize(fun, theta[free], gtol=gtol, ftol=1e-14, max_iter=max_iter)
        out = theta.copy()
        out[free] = res.x
        return out


def _prepare(data, model):
    for m in model.modes:
        missing = [f for f in (*m.features, *([m.filter] if m.filter else [])) if f not in data.names]
        if missing:
            raise MixtureError(f"mode {m.name!r} needs columns {missing} not in the data")
    return [_Prepared(data, m) for m in model.modes]


def mode_logliks(model, data, prepared=None):
    """``(N, M)`` matrix of per-event log-likelihoods under each mode."""
    prepared = prepared or _prepare(data, model)
    return np.column_stack([p.loglik(m.theta) for p, m in zip(prepared, model.modes)])


def _total(logL, pi):
    with np.errstate(divide="ignore"):
        lp = np.log(pi)
    return logsumexp(logL + lp, axis=1)


def mixture_loglik(model, data, per_event=False, prepared=None):
    """``sum_k log sum_m pi_m L^m_k``; ``-inf`` events are reported, not raised."""
    tot = _total(mode_logliks(model, data, prepared), model.pi)
    bad = ~np.isfinite(tot)
    if np.any(bad):
        log.warning("%d events have zero likelihood under the mixture", int(bad.sum()))
    return tot if per_event else float(np.sum(tot))


def responsibilities(logL, pi):
    with np.errstate(divide="ignore"):
        a = logL + np.log(pi)
    tot = logsumexp(a, axis=1, keepdims=True)
    return np.exp(a - tot)


@dataclass
class EMResult:
    model: MixtureModel
    loglik: float
    n_iter: int
    converged: bool
    trajectory: list
    degenerate: list
    n_events: int
    starts: list = field(default_factory=list)

    @property
    def pi(self):
        return self.model.pi

    def to_dict(self):
        return {
            **self.model.to_dict(),
            "loglik": self.loglik,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "degenerate_modes": self.degenerate,
            "n_events": self.n_events,
            "start_logliks": self.starts,
            "trajectory": self.trajectory,
        }

    def to_json(self, **extra):
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


def _snapshot(it, model, ll):
    return {"iter": it, "loglik": float(ll), "pi": [float(p) for p in model.pi],
            "theta": [[float(v) for v in m.theta] for m in model.modes]}


def _run_em(model, prepared, gamma0, tol, max_iter, mono_tol):
    model = model.copy()
    for p, m in zip(prepared, model.modes):
        p.mode = m
    traj = []
    if gamma0 is not None:
        model.pi = gamma0.mean(axis=0)
        for p, m, g in zip(prepared, model.modes, gamma0.T):
            m.theta = p.refit(m.theta, g)
    logL = np.column_stack([p.loglik(m.theta) for p, m in zip(prepared, model.modes)])
    ll = float(np.sum(_total(logL, model.pi)))
    traj.append(_snapshot(0, model, ll))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gamma = responsibilities(logL, model.pi)
        model.pi = gamma.mean(axis=0)
        for p, m, g in zip(prepared, model.modes, gamma.T):
            m.theta = p.refit(m.theta, g)
        for c, (p, m) in enumerate(zip(prepared, model.modes)):
            if not m.fully_frozen:
                logL[:, c] = p.loglik(m.theta)
        new = float(np.sum(_total(logL, model.pi)))
        if new < ll - mono_tol * max(1.0, abs(ll)):
            raise AssertionError(f"EM decreased the log-likelihood at iteration {it}: {ll} -> {new}")
        traj.append(_snapshot(it, model, new))
        done = abs(new - ll) < tol
        ll = new
        if done:
            converged = True
            break
    return model, ll, it, converged, traj


def em_fit(data, model, tol=1e-7, max_iter=1000, n_starts=5, seed=0, mono_tol=1e-9,
           degenerate_pi=1e-8):
    """Fit class probabilities and free coefficients by EM.

    The first start uses ``pi = 1/M`` and the model's coefficients; the
    other ``n_starts - 1`` begin from randomly perturbed responsibilities.
    The start with the highest final log-likelihood is returned. The
    log-likelihood is checked to be non-decreasing at every iteration.
    """
    prepared = _prepare(data, model)
    logL = np.column_stack([p.loglik(m.theta) for p, m in zip(prepared, model.modes)])
    # a mode with free coefficients can still reach any event inside its set
    reach = np.isfinite(logL) | np.column_stack([p.inside for p in prepared])
    dead = np.flatnonzero(~np.any(reach, axis=1))
    if len(dead):
        raise MixtureError(f"{len(dead)} events have zero likelihood under every mode "
                           f"(events {data.event[dead[:10]].tolist()})")
    start_model = model.copy()
    start_model.pi = np.full(model.M, 1.0 / model.M)
    rng = np.random.default_rng(seed)
    all_frozen = all(m.fully_frozen for m in model.modes)
    n_starts = 1 if (model.M == 1 or all_frozen) else max(1, int(n_starts))
    best = None
    starts = []
    for s in range(n_starts):
        gamma0 = None
        if s > 0:
            base = responsibilities(logL, start_model.pi)
            noise = rng.dirichlet(np.ones(model.M), size=data.n_events)
            gamma0 = np.where(reach, 0.5 * base + 0.5 * noise, 0.0)
            gamma0 /= gamma0.sum(axis=1, keepdims=True)
        res = _run_em(start_model, prepared, gamma0, tol, max_iter, mono_tol)
        starts.append(res[1])
        if best is None or res[1] > best[1] + 1e-12:
            best = res
    fitted, ll, it, conv, traj = best
    degenerate = [m.name for m, p in zip(fitted.modes, fitted.pi) if p < degenerate_pi]
    if degenerate:
        log.warning("degenerate modes (pi < %g): %s", degenerate_pi, degenerate)
    return EMResult(fitted, ll, it, conv, traj, degenerate, data.n_events, starts)


# ----------------------------------------------------------------------
# surfaces and the constrained growth models


def likelihood_surface(data, alphas, pis, pa_feature="log_degree", filter=None):
    """Log-likelihood of the copy family ``pi1 * PA(alpha) + (1 - pi1) * uniform``.

    Returns an array of shape ``(len(alphas), len(pis))``.
    """
    alphas = np.asarray(alphas, dtype=float)
    pis = np.asarray(pis, dtype=float)
    uni = _Prepared(data, Mode("uniform", (), None)).loglik(np.zeros(0))
    pa = _Prepared(data, Mode("pa", (pa_feature,), filter))
    out = np.empty((len(alphas), len(pis)))
    with np.errstate(divide="ignore"):
        for a_i, a in enumerate(alphas):
            lpa = pa.loglik(np.array([a]))
            for p_i, p in enumerate(pis):
                stacked = np.stack([lpa + np.log(p), uni + np.log1p(-p)], axis=1)
                out[a_i, p_i] = np.sum(logsumexp(stacked, axis=1))
    return out


@dataclass
class ProfileFit:
    """One-parameter profile fit of a class probability."""

    name: str
    estimate: float
    loglik: float
    grid: np.ndarray
    profile: np.ndarray
    model: MixtureModel

    @property
    def param_names(self):
        return self.model.param_names()

    def to_dict(self):
        return {"parameter": self.name, "estimate": self.estimate, "loglik": self.loglik,
                "grid": [float(v) for v in self.grid],
                "profile": [float(v) for v in self.profile], **self.model.to_dict()}


def _profile(logL, grid):
    """Maximize ``sum log(q * L1 + (1 - q) * L2)`` over ``q`` in [0, 1]."""
    l1, l2 = logL[:, 0], logL[:, 1]

    def f(q):
        with np.errstate(divide="ignore"):
            a = np.stack([l1 + np.log(q), l2 + np.log1p(-q)], axis=1)
        return float(np.sum(logsumexp(a, axis=1)))

    res = optimize.minimize_scalar(lambda q: -f(q), bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-10})
    cands = [(f(res.x), float(res.x)), (f(0.0), 0.0), (f(1.0), 1.0)]
    best_ll, best_q = max(cands)
    curve = np.array([f(q) for q in grid])
    return best_q, best_ll, curve


def _two_mode_profile(data, first, second, name, grid):
    model = MixtureModel([first, second])
    logL = mode_logliks(model, data)
    dead = ~np.any(np.isfinite(logL), axis=1)
    if np.any(dead):
        raise MixtureError(f"{int(dead.sum())} events have zero likelihood under both modes "
                           f"(events {data.event[dead][:10].tolist()})")
    q, ll, curve = _profile(logL, grid)
    model.pi = np.array([q, 1.0 - q])
    return ProfileFit(name, q, ll, np.asarray(grid), curve, model)


def _grid(grid):
    return np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)


def uniform_mode(name="uniform"):
    return Mode(name, (), None)


def pa_mode(data, alpha=1.0, feature="log_degree", name="pa"):
    """Frozen degree-kernel mode ``d ** alpha``; restricted to degree > 0 when a
    ``has_degree`` column is present (a zero-degree node has weight 0)."""
    flt = "has_degree" if "has_degree" in data.names else None
    return Mode(name, (feature,), flt, np.array([alpha]), True)


def fof_mode(fof="is_fof", name="uniform-fof"):
    return Mode(name, (), fof)


def fit_copy(data, alpha=1.0, feature="log_degree", grid=None):
    """Copy model: uniform with probability ``p``, linear PA otherwise; ``p̂``."""
    return _two_mode_profile(data, uniform_mode(), pa_mode(data, alpha, feature), "p", _grid(grid))


def fit_local_search(data, fof="is_fof", grid=None):
    """Local search: uniform over all nodes with probability ``r``, else
    uniform over friends-of-friends; returns ``r̂``."""
    return _two_mode_profile(data, uniform_mode(), fof_mode(fof), "r", _grid(grid))


def rp_model(data, alpha=1.0, feature="log_degree", fof="is_fof", four_modes=False):
    """Frozen (r, p) mixture. The three-mode form {uniform, PA, uniform-FoF}
    contains both the copy and local-search models; ``four_modes`` adds the
    PA-over-FoF mode."""
    modes = [uniform_mode(), pa_mode(data, alpha, feature), fof_mode(fof)]
    if four_modes:
        pa_fof = pa_mode(data, alpha, feature, name="pa-fof")
        modes.append(pa_fof)
        # FoF restriction on top of the degree filter
        pa_fof.filter = fof
        if "has_degree" in data.names:
            pa_fof.filter = "_fof_and_degree"
    return MixtureModel(modes)


def fit_rp(data, alpha=1.0, feature="log_degree", fof="is_fof", four_modes=False, **em_opts):
    """EM fit of the class probabilities of the frozen (r, p) mixture."""
    if four_modes and "has_degree" in data.names:
        extra = (data.column(fof) > 0) & (data.column("has_degree") > 0)
        data = ChoiceData(data.names + ("_fof_and_degree",),
                          np.column_stack([data.X, extra.astype(float)]),
                          data.offsets, data.chosen, data.chooser, data.alts, data.event,
                          data.weight, data.valid, data.meta)
    return em_fit(data, rp_model(data, alpha, feature, fof, four_modes), **em_opts)

