"""Figure-data experiments on synthetic growth graphs.

Each experiment returns an :class:`ExperimentResult`: named tables (lists of
rows, written as CSV by the command line) and a JSON-ready summary.
``scale`` shrinks node counts and replica counts for quick runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clogit import fit, fit_nonparametric_pa
from .evalstats import (
    kernel_from_nonparametric, lr_test, newman_kernel, pham_ls_alpha, powerlaw_mle,
)
from .features import EventFilter, extract_choices
from .generators import GrowthConfig, generate, generate_replicas
from .mixlogit import (
    Mode, MixtureModel, em_fit, fit_copy, fit_local_search, fit_rp, likelihood_surface,
)

EXPERIMENTS = ("surface", "kernel", "gamma-grid", "model-compare", "degree-curve")


@dataclass
class ExperimentResult:
    name: str
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    summary: dict = field(default_factory=dict)


def _scaled(n, scale, floor=50):
    return max(floor, int(round(n * scale)))


def degrees(g):
    """Final in-degree of every node (total degree when undirected)."""
    return g.in_degrees(g.last_event + 1)


def skip_bootstrap(g, **kw):
    return EventFilter(min_event=g.meta.get("bootstrap_edges", 0), **kw)


# ----------------------------------------------------------------------


def surface(seed=0, scale=1.0, n=10_000, m=4, pi1=0.5, s=10, grid=41, n_starts=5):
    """Log-likelihood over (alpha, pi1) for copy-model data plus the EM path."""
    cfg = GrowthConfig(n=_scaled(n, scale), m=m, model="copy", p=1.0 - pi1, seed=seed)
    g, _ = generate(cfg)
    data = extract_choices(g, "logdeg", filters=skip_bootstrap(g), neg_samples=s, seed=seed)
    alphas = np.linspace(0.0, 2.0, grid)
    pis = np.linspace(0.0, 1.0, grid)
    surf = likelihood_surface(data, alphas, pis)
    model = MixtureModel([Mode("pa", ("log_degree",)), Mode("uniform", ())])
    em = em_fit(data, model, n_starts=n_starts, seed=seed)
    rows = [(float(a), float(p), float(surf[i, j]))
            for i, a in enumerate(alphas) for j, p in enumerate(pis)]
    path = [(t["iter"], t["theta"][0][0], t["pi"][0], t["loglik"]) for t in em.trajectory]
    best = np.unravel_index(np.argmax(surf), surf.shape)
    return ExperimentResult("surface", {
        "surface": (("alpha", "pi1", "loglik"), rows),
        "em_path": (("iter", "alpha", "pi1", "loglik"), path),
    }, {
        "config": cfg.to_dict(), "n_events": data.n_events, "neg_samples": s,
        "em": {"alpha": float(em.model.modes[0].theta[0]), "pi1": float(em.pi[0]),
               "loglik": em.loglik, "n_iter": em.n_iter, "converged": em.converged},
        "grid_best": {"alpha": float(alphas[best[0]]), "pi1": float(pis[best[1]]),
                      "loglik": float(surf[best])},
    })


def kernel_estimates(g, max_degree=None):
    """MLE, non-parametric and Newman kernels for one graph."""
    data = extract_choices(g, "logdeg,deg", filters=skip_bootstrap(g))
    mle = fit(data, ["log_degree"])
    K = int(data.column("degree").max()) if max_degree is None else max_degree
    npf = fit_nonparametric_pa(data, K)
    return {
        "data": data, "mle": mle, "nonparametric": npf,
        "logit_kernel": kernel_from_nonparametric(npf),
        "newman": newman_kernel(data, max_degree=K),
        "alpha_ls": pham_ls_alpha(npf),
    }


def kernel(seed=0, scale=1.0, n=2000, m=1, alpha=1.0):
    cfg = GrowthConfig(n=_scaled(n, scale), m=m, model="pa", alpha=alpha, seed=seed)
    g, _ = generate(cfg)
    est = kernel_estimates(g)
    nk, lk, a = est["newman"], est["logit_kernel"], est["mle"]["log_degree"]
    rows = []
    for k in range(1, len(nk.degree)):
        if not (np.isfinite(nk.value[k]) or np.isfinite(lk.value[k])):
            continue
        rows.append((k, _f(nk.value[k]), _f(nk.lo[k]), _f(nk.hi[k]),
                     _f(lk.value[k]), _f(lk.lo[k]), _f(lk.hi[k]), float(k ** a)))
    return ExperimentResult("kernel", {
        "kernel": (("degree", "newman", "newman_lo", "newman_hi", "nonparametric",
                    "nonparametric_lo", "nonparametric_hi", "mle_line"), rows),
    }, {"config": cfg.to_dict(), "alpha_mle": a, "alpha_mle_se": est["mle"].se_of("log_degree"),
        "alpha_ls": est["alpha_ls"], "missing_levels": len(est["nonparametric"].missing)})


def _f(x):
    x = float(x)
    return x if np.isfinite(x) else ""


R_GRID = (1.0, 0.75, 0.5, 0.25, 0.1, 0.05)
P_GRID = (0.05, 0.25, 0.5, 0.75, 1.0)


def gamma_grid(seed=0, scale=1.0, n=20_000, m=4, replicas=10, r_grid=R_GRID, p_grid=P_GRID,
               ks_scan=False, threads=1):
    """Power-law exponent of the degree distribution over the (r, p) lattice."""
    n_rep = replicas if scale >= 1 else max(1, int(round(replicas * scale)))
    nn = _scaled(n, scale)
    rows = []
    means = []
    for r in r_grid:
        for p in p_grid:
            cfg = GrowthConfig(n=nn, m=m, model="rp", r=r, p=p, seed=_cell_seed(seed, r, p))
            gs = []
            for rep, (g, _) in enumerate(generate_replicas(cfg, n_rep, threads)):
                pl = powerlaw_mle(degrees(g), xmin=m, ks_scan=ks_scan)
                rows.append((r, p, rep, pl.gamma, pl.xmin, pl.n_tail))
                gs.append(pl.gamma)
            theory = (3 - p) / (1 - p) if p < 1 else ""
            means.append((r, p, float(np.mean(gs)), float(np.std(gs)), theory))
    return ExperimentResult("gamma-grid", {
        "gamma": (("r", "p", "replica", "gamma", "xmin", "n_tail"), rows),
        "gamma_mean": (("r", "p", "gamma_mean", "gamma_sd", "theory"), means),
    }, {"n": nn, "m": m, "replicas": n_rep, "ks_scan": ks_scan})


def _cell_seed(seed, r, p):
    return int(np.random.SeedSequence([int(seed), int(round(r * 1e6)), int(round(p * 1e6))])
               .generate_state(1, dtype=np.uint64)[0])


def compare_models(data, grid=None):
    """Fit copy, local-search and the encompassing three-mode mixture.

    The two constrained models are not nested in each other, so each is
    tested against the mixture {uniform, PA, uniform-FoF} that contains both.
    """
    copy = fit_copy(data, grid=grid)
    local = fit_local_search(data, grid=grid)
    full = fit_rp(data)
    names_full = full.model.param_names()
    tests = {
        "copy": lr_test((copy.loglik, ["pi[pa]"]), (full.loglik, names_full), k=1),
        "local-search": lr_test((local.loglik, ["pi[uniform-fof]"]), (full.loglik, names_full),
                                k=1),
    }
    return {"copy": copy, "local-search": local, "full": full, "tests": tests}


def model_compare(seed=0, scale=1.0, n=20_000, m=4, max_events=1000, cases=((0.5, 1.0), (1.0, 0.5))):
    rows = []
    summary = {}
    for r, p in cases:
        cfg = GrowthConfig(n=_scaled(n, scale), m=m, model="rp", r=r, p=p, seed=seed)
        g, _ = generate(cfg)
        data = extract_choices(g, "logdeg,hasdeg,fof",
                               filters=skip_bootstrap(g, max_events=max_events, require_fof=True,
                                                      seed=seed))
        res = compare_models(data)
        label = f"r={r:g},p={p:g}"
        for name in ("copy", "local-search"):
            f = res[name]
            rows += [(label, name, float(q), float(v)) for q, v in zip(f.grid, f.profile)]
        summary[label] = {
            "n_events": data.n_events,
            "copy_p": res["copy"].estimate, "copy_loglik": res["copy"].loglik,
            "local_r": res["local-search"].estimate, "local_loglik": res["local-search"].loglik,
            "full_pi": res["full"].model.to_dict()["pi"], "full_loglik": res["full"].loglik,
            "lr_copy": res["tests"]["copy"].to_dict(),
            "lr_local": res["tests"]["local-search"].to_dict(),
        }
    return ExperimentResult("model-compare", {
        "profiles": (("dataset", "model", "class_prob", "loglik"), rows),
    }, summary)


def degree_curve(seed=0, scale=1.0, n=2000, m=1, alpha=1.0, graph=None):
    """Per-degree utilities relative to degree 1 (non-parametric logit)."""
    if graph is None:
        cfg = GrowthConfig(n=_scaled(n, scale), m=m, model="pa", alpha=alpha, seed=seed)
        graph, _ = generate(cfg)
    data = extract_choices(graph, "deg", filters=skip_bootstrap(graph))
    npf = fit_nonparametric_pa(data, int(data.column("degree").max()))
    rows = [(r["degree"], r["estimate"] if r["estimate"] is not None else "",
             r["se"] if r["se"] is not None else "", r["exposures"], r["choices"], r["status"])
            for r in npf.table()]
    return ExperimentResult("degree-curve", {
        "degree_curve": (("degree", "theta", "se", "exposures", "choices", "status"), rows),
    }, {"alpha_ls": pham_ls_alpha(npf), "n_events": data.n_events,
        "missing": {str(k): v for k, v in npf.missing.items()}})


def run(name, seed=0, scale=1.0, threads=1, **kw):
    if name == "surface":
        return surface(seed, scale, **kw)
    if name == "kernel":
        return kernel(seed, scale, **kw)
    if name == "gamma-grid":
        return gamma_grid(seed, scale, threads=threads, **kw)
    if name == "model-compare":
        return model_compare(seed, scale, **kw)
    if name == "degree-curve":
        return degree_curve(seed, scale, **kw)
    raise KeyError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
