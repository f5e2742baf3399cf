"""Synthetic growth-graph generators.

Every degree-driven process (uniform, PA, non-parametric PA, fitness, copy,
local search and the (r, p) mixture) runs through one loop: per edge a
choice-set mode (all nodes with probability ``r``, else friends-of-friends)
and a utility mode (uniform with probability ``p``, else the degree kernel)
are drawn from a dedicated stream, so models that coincide as parameters
coincide edge for edge. Homophily and latent-space processes depend on the
chooser and take a vectorized path.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._kernels import Fenwick
from .graph import TemporalGraph

MODELS = (
    "uniform", "pa", "nonparametric-pa", "fitness", "copy",
    "local-search", "rp", "homophily", "latent",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GrowthConfig:
    """Parameters of a growth process.

    ``p`` is the probability of a uniform (degree-blind) edge and ``r`` the
    probability that the choice set is all nodes rather than the chooser's
    friends-of-friends, so ``copy(p=1)`` and ``rp(r=1, p=1)`` are uniform
    attachment.
    """

    n: int
    m: int = 1
    model: str = "pa"
    alpha: float = 1.0
    theta_k: tuple = ()
    p: float = 1.0
    r: float = 1.0
    h: float = 1.0
    n_groups: int = 2
    c: float = 2.0
    fitness_scale: float = 1.0
    directed: bool = False
    seed: int = 0

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.n < self.m + 1:
            raise ConfigError(f"n={self.n} must be at least m+1={self.m + 1}")
        if self.model == "rp":
            if not (0 < self.p <= 1 and 0 < self.r <= 1):
                raise ConfigError("rp model needs p in (0, 1] and r in (0, 1]")
        if self.model == "copy" and not 0 <= self.p <= 1:
            raise ConfigError("copy model needs p in [0, 1]")
        if self.model == "local-search" and not 0 < self.r <= 1:
            raise ConfigError("local-search model needs r in (0, 1]")
        if self.model == "nonparametric-pa" and len(self.theta_k) == 0:
            raise ConfigError("nonparametric-pa needs a theta_k table")
        if self.model == "latent" and self.c <= 0:
            raise ConfigError("latent model needs c > 0")
        if self.model == "homophily" and self.n_groups < 1:
            raise ConfigError("homophily needs n_groups >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self

    def mixture(self):
        """``(r, p)`` of the equivalent (r, p)-process for degree-driven models."""
        return {
            "uniform": (1.0, 1.0),
            "pa": (1.0, 0.0),
            "nonparametric-pa": (1.0, 0.0),
            "fitness": (1.0, 0.0),
            "copy": (1.0, self.p),
            "local-search": (self.r, 1.0),
            "rp": (self.r, self.p),
        }.get(self.model)

    def to_dict(self):
        d = asdict(self)
        d["theta_k"] = list(self.theta_k)
        return d


@dataclass
class GrowthStats:
    fof_fallback: int = 0
    zero_weight_fallback: int = 0
    modes: dict = field(default_factory=dict)


def sample_target(weights, rng=None, u=None):
    """Draw an index with probability ``weights / weights.sum()``.

    All-zero weights fall back to a uniform draw. Pass ``u`` (a uniform on
    [0, 1)) instead of ``rng`` to make the draw reproducible elsewhere.
    """
    w = np.asarray(weights, dtype=np.float64)
    if len(w) == 0:
        raise ValueError("no alternatives to sample from")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if u is None:
        u = rng.random()
    total = w.sum()
    if total <= 0:
        return min(int(u * len(w)), len(w) - 1)
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    if idx >= len(w) or w[idx] == 0:
        idx = int(np.flatnonzero(w)[-1])
    return idx


def gumbel_max_sample(utilities, rng):
    """Random-utility draw: argmax of utility plus standard Gumbel noise."""
    u = np.asarray(utilities, dtype=np.float64)
    return int(np.argmax(u + rng.gumbel(size=len(u))))


def _streams(seed):
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def _degree_weight_fn(cfg, node_rng, n):
    """Returns (kernel, fitness array or None)."""
    if cfg.model == "nonparametric-pa":
        table = np.exp(np.asarray(cfg.theta_k, dtype=np.float64))
        top = len(table) - 1
        return (lambda v, d: float(table[min(d, top)])), None
    if cfg.model == "fitness":
        eta = node_rng.exponential(cfg.fitness_scale, size=n)
        return (lambda v, d: float(eta[v])), eta
    a = float(cfg.alpha)
    return (lambda v, d: float(d) ** a), None


def _bootstrap(g, m):
    """Directed ring over nodes ``0..m`` (a single edge when m=1 undirected)."""
    for _ in range(m + 1):
        g.add_node(arrival=0)
    for k in range(m + 1):
        j = (k + 1) % (m + 1)
        if not g.directed and g.has_edge(j, k):
            continue
        g.add_edge(k, j)
    g.meta["bootstrap_edges"] = g.n_edges


def generate(config: GrowthConfig):
    """Grow a graph according to ``config``; returns ``(graph, stats)``."""
    cfg = config.validate()
    if cfg.model in ("homophily", "latent"):
        return _generate_dyadic(cfg)
    return _generate_degree(cfg)


def _generate_degree(cfg):
    n, m = cfg.n, cfg.m
    mode_rng, target_rng, node_rng = _streams(cfg.seed)
    r, p = cfg.mixture()
    kernel, eta = _degree_weight_fn(cfg, node_rng, n)
    g = TemporalGraph(directed=cfg.directed)
    _bootstrap(g, m)
    if eta is not None:
        for v in range(m + 1):
            g.nodes[v].fitness = float(eta[v])
    stats = GrowthStats(modes={"uniform": 0, "kernel": 0, "uniform-fof": 0, "kernel-fof": 0})

    n_new = (n - m - 1) * m
    mode_u = mode_rng.random((n_new, 2))
    target_u = target_rng.random(n_new)

    deg = np.zeros(n, dtype=np.int64)  # in-degree; total degree when undirected
    for v in range(m + 1):
        deg[v] = g.in_degree(v)
    count = Fenwick(n)
    weight = Fenwick(n)
    for v in range(m + 1):
        count.set(v, 1.0)
        weight.set(v, kernel(v, int(deg[v])))
    succ = g._succ

    e = 0
    for i in range(m + 1, n):
        g.add_node(arrival=g.last_event + 1,
                   fitness=None if eta is None else float(eta[i]))
        chosen = []
        fof_pool = set()
        for _ in range(m):
            full_set = mode_u[e, 0] < r
            uniform = mode_u[e, 1] < p
            u = target_u[e]
            e += 1
            fof = None
            if not full_set:
                fof = sorted(fof_pool.difference(chosen).difference((i,)))
                if not fof:
                    stats.fof_fallback += 1
                    full_set, uniform = True, True
            if full_set:
                key = "uniform" if uniform else "kernel"
                tree = count if uniform else weight
                total = tree.total()
                if total <= 0.0:
                    stats.zero_weight_fallback += 1
                    tree, total = count, count.total()
                j = tree.find(u * total)
            else:
                key = "uniform-fof" if uniform else "kernel-fof"
                if uniform:
                    j = fof[min(int(u * len(fof)), len(fof) - 1)]
                else:
                    w = [kernel(v, int(deg[v])) for v in fof]
                    j = fof[sample_target(w, u=u)]
            stats.modes[key] += 1
            g.add_edge(i, j)
            chosen.append(j)
            deg[j] += 1
            if not cfg.directed:
                deg[i] += 1
            count.set(j, 0.0)
            weight.set(j, 0.0)
            fof_pool.update(succ[j])
        for j in chosen:
            count.set(j, 1.0)
            weight.set(j, kernel(j, int(deg[j])))
        count.set(i, 1.0)
        weight.set(i, kernel(i, int(deg[i])))
    return g, stats


def _circle_distance(a, b):
    d = np.abs(a - b) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def _generate_dyadic(cfg):
    n, m = cfg.n, cfg.m
    _, target_rng, node_rng = _streams(cfg.seed)
    if cfg.model == "homophily":
        group = node_rng.integers(cfg.n_groups, size=n)
        angle = None
    else:
        group = None
        angle = node_rng.uniform(0.0, 2 * np.pi, size=n)
    g = TemporalGraph(directed=cfg.directed)
    _bootstrap(g, m)

    def annotate(v):
        if group is not None:
            g.nodes[v].group = int(group[v])
        else:
            g.nodes[v].covariates["angle"] = float(angle[v])

    for v in range(m + 1):
        annotate(v)
    target_u = target_rng.random((n - m - 1) * m)
    log_c = math.log(cfg.c)
    e = 0
    for i in range(m + 1, n):
        g.add_node(arrival=g.last_event + 1)
        annotate(i)
        if group is not None:
            util = cfg.h * (group[:i] == group[i])
        else:
            util = -log_c * _circle_distance(angle[:i], angle[i])
        w = np.exp(util - util.max())
        for _ in range(m):
            j = sample_target(w, u=target_u[e])
            e += 1
            g.add_edge(i, j)
            w[j] = 0.0
    return g, GrowthStats()


def manifest(config, g, stats):
    """JSON-ready summary of a generated graph."""
    return {
        "config": config.to_dict(),
        "seed": int(config.seed),
        "nodes": g.n_nodes,
        "edges": g.n_edges,
        "bootstrap_edges": g.meta.get("bootstrap_edges", 0),
        "directed": g.directed,
        "fof_fallback": stats.fof_fallback,
        "zero_weight_fallback": stats.zero_weight_fallback,
        "modes": dict(stats.modes),
    }


def replica_seeds(seed, n_rep):
    """Independent 64-bit seeds for ``n_rep`` replicas of one configuration."""
    ss = np.random.SeedSequence(int(seed))
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(n_rep)]


def _generate_one(cfg):
    return generate(cfg)


def generate_replicas(config, n_rep, threads=1):
    """Generate ``n_rep`` graphs with independent streams, in seed order."""
    cfgs = [GrowthConfig(**{**config.to_dict(), "theta_k": tuple(config.theta_k), "seed": s})
            for s in replica_seeds(config.seed, n_rep)]
    if threads <= 1:
        return [generate(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_generate_one, cfgs))
