"""Recast a timestamped edge sequence as conditional-logit choice data.

Each retained edge ``(i, j)`` becomes one :class:`ChoiceEvent`: ``i`` is the
chooser, the alternatives are the nodes present at that event which ``i``
does not already point to, and every feature is computed from edges with a
strictly smaller event index. Events are stored flat in :class:`ChoiceData`
(stacked feature rows plus per-event offsets).
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

SECONDS_PER_YEAR = 365.25 * 86400.0


class FeatureError(ValueError):
    pass


def safe_log(x):
    """``log(x)`` for positive ``x`` and 0 at 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.log(x[pos])
    return out


# ----------------------------------------------------------------------
# choice data containers


@dataclass
class ChoiceEvent:
    event: int
    chooser: int
    chosen: int
    alternatives: np.ndarray
    features: np.ndarray
    weight: float = 1.0
    valid: bool = True

    @property
    def chosen_node(self):
        return int(self.alternatives[self.chosen])

    def __len__(self):
        return len(self.alternatives)


class ChoiceData:
    """Ragged collection of choice events with a shared feature layout.

    Event ``k`` owns rows ``offsets[k]:offsets[k+1]`` of ``X`` and ``alts``;
    ``chosen[k]`` is a position inside that slice. ``valid[k]`` is False
    when the observed choice lies outside the event's choice set.
    """

    def __init__(self, names, X, offsets, chosen, chooser=None, alts=None,
                 event=None, weight=None, valid=None, meta=None):
        self.names = tuple(names)
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            X = X.reshape(-1, len(self.names)) if self.names else X.reshape(len(X), 0)
        self.X = X
        if X.shape[1] != len(self.names):
            raise FeatureError(f"{X.shape[1]} feature columns but {len(self.names)} names")
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.chosen = np.ascontiguousarray(chosen, dtype=np.int64)
        n = len(self.chosen)
        rows = self.X.shape[0]
        self.chooser = (np.full(n, -1, dtype=np.int64) if chooser is None
                        else np.ascontiguousarray(chooser, dtype=np.int64))
        self.alts = (np.full(rows, -1, dtype=np.int64) if alts is None
                     else np.ascontiguousarray(alts, dtype=np.int64))
        self.event = (np.arange(n, dtype=np.int64) if event is None
                      else np.ascontiguousarray(event, dtype=np.int64))
        self.weight = (np.ones(n) if weight is None
                       else np.ascontiguousarray(weight, dtype=np.float64))
        self.valid = (np.ones(n, dtype=bool) if valid is None
                      else np.ascontiguousarray(valid, dtype=bool))
        self.meta = dict(meta or {})
        self._check()

    def _check(self):
        n = len(self.chosen)
        if len(self.offsets) != n + 1 or self.offsets[0] != 0 or self.offsets[-1] != self.X.shape[0]:
            raise FeatureError("offsets do not match feature rows")
        sizes = np.diff(self.offsets)
        if np.any(sizes < 1):
            raise FeatureError("every event needs at least one alternative")
        if np.any(self.chosen < 0) or np.any(self.chosen >= sizes):
            raise FeatureError("chosen position out of range")
        for arr, length, what in ((self.chooser, n, "chooser"), (self.event, n, "event"),
                                  (self.weight, n, "weight"), (self.valid, n, "valid"),
                                  (self.alts, self.X.shape[0], "alts")):
            if len(arr) != length:
                raise FeatureError(f"{what} has wrong length")

    @classmethod
    def from_events(cls, events, names):
        events = list(events)
        sizes = [len(e.alternatives) for e in events]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        F = len(names)
        X = (np.vstack([np.asarray(e.features, dtype=np.float64).reshape(-1, F) for e in events])
             if events else np.zeros((0, F)))
        return cls(
            names, X, offsets,
            [e.chosen for e in events],
            [e.chooser for e in events],
            np.concatenate([np.asarray(e.alternatives) for e in events]) if events else [],
            [e.event for e in events],
            [e.weight for e in events],
            [e.valid for e in events],
        )

    @property
    def n_events(self):
        return len(self.chosen)

    @property
    def n_features(self):
        return len(self.names)

    @property
    def sizes(self):
        return np.diff(self.offsets)

    @property
    def chosen_rows(self):
        return self.offsets[:-1] + self.chosen

    def __len__(self):
        return self.n_events

    def __getitem__(self, k):
        lo, hi = self.offsets[k], self.offsets[k + 1]
        return ChoiceEvent(int(self.event[k]), int(self.chooser[k]), int(self.chosen[k]),
                           self.alts[lo:hi].copy(), self.X[lo:hi].copy(),
                           float(self.weight[k]), bool(self.valid[k]))

    def __iter__(self):
        for k in range(self.n_events):
            yield self[k]

    def __repr__(self):
        return (f"ChoiceData(events={self.n_events}, rows={self.X.shape[0]}, "
                f"features={list(self.names)})")

    def column(self, name):
        try:
            return self.X[:, self.names.index(name)]
        except ValueError:
            raise FeatureError(f"no feature named {name!r}; have {list(self.names)}") from None

    def select(self, names):
        """Same events restricted to the feature columns ``names`` (in order)."""
        idx = []
        for nm in names:
            if nm not in self.names:
                raise FeatureError(f"no feature named {nm!r}; have {list(self.names)}")
            idx.append(self.names.index(nm))
        return ChoiceData(names, self.X[:, idx], self.offsets, self.chosen, self.chooser,
                          self.alts, self.event, self.weight, self.valid, self.meta)

    def subset(self, index):
        """Events picked by an integer index or boolean mask, in that order."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        sizes = self.sizes[index]
        starts = self.offsets[index]
        rows = (np.concatenate([np.arange(s, s + z) for s, z in zip(starts, sizes)])
                if len(index) else np.zeros(0, dtype=np.int64))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        return ChoiceData(self.names, self.X[rows], offsets, self.chosen[index],
                          self.chooser[index], self.alts[rows], self.event[index],
                          self.weight[index], self.valid[index], self.meta)

    def restrict_rows(self, keep):
        """Drop rows where ``keep`` is False, keeping every event.

        Returns ``(data, inside)``: ``inside[k]`` tells whether event ``k``
        kept its chosen row and at least one row; events that did not are
        returned with a single placeholder row (their chosen row) so the
        layout stays valid, and callers must treat them as probability 0.
        """
        keep = np.asarray(keep, dtype=bool).copy()
        crow = self.chosen_rows
        inside = keep[crow].copy()
        keep[crow[~inside]] = True
        counts = np.add.reduceat(keep.astype(np.int64), self.offsets[:-1])
        before = np.cumsum(keep) - keep  # kept rows strictly before each row
        new_chosen = before[crow] - before[self.offsets[:-1]]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        data = ChoiceData(self.names, self.X[keep], offsets, new_chosen, self.chooser,
                          self.alts[keep], self.event, self.weight, self.valid & inside,
                          self.meta)
        return data, inside

    def with_weights(self, weight):
        return ChoiceData(self.names, self.X, self.offsets, self.chosen, self.chooser,
                          self.alts, self.event, weight, self.valid, self.meta)

    # -- JSON lines ------------------------------------------------------

    def to_jsonl(self, path_or_buf):
        lines = [json.dumps({"header": {"format": "netchoice.choices", "version": 1,
                                        "features": list(self.names),
                                        "meta": self.meta}}, sort_keys=True)]
        for k in range(self.n_events):
            lo, hi = self.offsets[k], self.offsets[k + 1]
            rec = {
                "event": int(self.event[k]),
                "chooser": int(self.chooser[k]),
                "chosen": int(self.chosen[k]),
                "alternatives": [int(a) for a in self.alts[lo:hi]],
                "features": [[float(v) for v in row] for row in self.X[lo:hi]],
            }
            if self.weight[k] != 1.0:
                rec["weight"] = float(self.weight[k])
            if not self.valid[k]:
                rec["valid"] = False
            lines.append(json.dumps(rec))
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", encoding="utf-8") as fh:
                fh.write(text)

    @classmethod
    def from_jsonl(cls, path_or_buf):
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf, encoding="utf-8") as fh:
                text = fh.read()
        names = None
        meta = {}
        events = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "header" in rec:
                    names = rec["header"]["features"]
                    meta = rec["header"].get("meta", {})
                    continue
                if names is None:
                    raise FeatureError("missing header record")
                feats = np.asarray(rec["features"], dtype=np.float64).reshape(-1, len(names))
                events.append(ChoiceEvent(
                    int(rec["event"]), int(rec["chooser"]), int(rec["chosen"]),
                    np.asarray(rec["alternatives"], dtype=np.int64), feats,
                    float(rec.get("weight", 1.0)), bool(rec.get("valid", True))))
            except (KeyError, TypeError, ValueError) as exc:
                raise FeatureError(f"line {lineno}: {exc}") from None
        if names is None:
            raise FeatureError("empty choice file")
        data = cls.from_events(events, names)
        data.meta = meta
        return data


def concat(datasets):
    datasets = list(datasets)
    names = datasets[0].names
    if any(d.names != names for d in datasets):
        raise FeatureError("cannot concatenate data with different features")
    sizes = np.concatenate([d.sizes for d in datasets])
    return ChoiceData(
        names, np.vstack([d.X for d in datasets]),
        np.concatenate([[0], np.cumsum(sizes)]),
        np.concatenate([d.chosen for d in datasets]),
        np.concatenate([d.chooser for d in datasets]),
        np.concatenate([d.alts for d in datasets]),
        np.concatenate([d.event for d in datasets]),
        np.concatenate([d.weight for d in datasets]),
        np.concatenate([d.valid for d in datasets]),
    )


# ----------------------------------------------------------------------
# live replay state


class _Replay:
    """Graph state strictly before the current event, updated edge by edge."""

    def __init__(self, g):
        self.g = g
        n = g.n_nodes
        self.n = n
        self.directed = g.directed
        self.indeg = np.zeros(n, dtype=np.int64)
        self.succ = [set() for _ in range(n)]
        self.pred = [set() for _ in range(n)]
        self.arrival = np.array([m.arrival for m in g.nodes], dtype=np.int64)
        self.order = np.argsort(self.arrival, kind="stable")
        self._next = 0
        self.alive = np.zeros(0, dtype=np.int64)
        self.first_time = np.full(n, np.nan)
        self.t = -1
        self.timestamp = None
        self.chooser = -1
        self._cache = {}

    def advance(self, t, timestamp):
        self.t = t
        self.timestamp = timestamp
        start = self._next
        while self._next < self.n and self.arrival[self.order[self._next]] <= t:
            self._next += 1
        if self._next > start:
            self.alive = self.order[: self._next]
        self._cache = {}

    def apply(self, i, j, timestamp):
        self._arc(i, j)
        if not self.directed:
            self._arc(j, i)
        if timestamp is not None:
            for v in (i, j):
                if math.isnan(self.first_time[v]):
                    self.first_time[v] = timestamp

    def _arc(self, i, j):
        self.succ[i].add(j)
        self.pred[j].add(i)
        self.indeg[j] += 1

    def nbrs(self, v, undirected):
        if undirected and self.directed:
            return self.succ[v] | self.pred[v]
        return self.succ[v]

    def undirected(self, flag):
        return (not self.directed) if flag is None else bool(flag)

    def fof(self, i, undirected=None):
        both = self.undirected(undirected)
        key = ("fof", both)
        if key not in self._cache:
            out = set()
            for k in self.nbrs(i, both):
                out |= self.nbrs(k, both)
            out.discard(i)
            out -= self.succ[i]
            self._cache[key] = out
        return self._cache[key]

    def common(self, i, undirected=None):
        both = self.undirected(undirected)
        key = ("cn", both)
        if key not in self._cache:
            counts = np.zeros(self.n, dtype=np.int64)
            for k in self.nbrs(i, both):
                nk = self.nbrs(k, both) if both else self.succ[k]
                if nk:
                    counts[np.fromiter(nk, dtype=np.int64, count=len(nk))] += 1
            self._cache[key] = counts
        return self._cache[key]

    def distances(self, i, undirected=None):
        both = self.undirected(undirected)
        key = ("bfs", both)
        if key not in self._cache:
            dist = np.full(self.n, -1, dtype=np.int64)
            dist[i] = 0
            queue = deque([i])
            while queue:
                v = queue.popleft()
                for w in self.nbrs(v, both):
                    if dist[w] < 0:
                        dist[w] = dist[v] + 1
                        queue.append(w)
            self._cache[key] = dist
        return self._cache[key]


# ----------------------------------------------------------------------
# extractors


class Extractor:
    name = "feature"

    def bind(self, g):
        return self

    def columns(self):
        return [self.name]

    def compute(self, S, i, alts):
        raise NotImplementedError


class LogDegree(Extractor):
    """Zero-safe log of in-degree (total degree in undirected graphs)."""

    name = "log_degree"

    def compute(self, S, i, alts):
        return safe_log(S.indeg[alts])


class HasDegree(Extractor):
    name = "has_degree"

    def compute(self, S, i, alts):
        return (S.indeg[alts] > 0).astype(np.float64)


class Degree(Extractor):
    """Raw in-degree, used by the non-parametric kernel estimators."""

    name = "degree"

    def compute(self, S, i, alts):
        return S.indeg[alts].astype(np.float64)


class DegreeIndicator(Extractor):
    def __init__(self, levels):
        self.levels = [int(k) for k in levels]

    def columns(self):
        return [f"deg_{k}" for k in self.levels]

    def compute(self, S, i, alts):
        d = S.indeg[alts]
        return np.stack([(d == k) for k in self.levels], axis=1).astype(np.float64)


class LogCommonNeighbors(Extractor):
    name = "log_common_neighbors"

    def __init__(self, undirected=None):
        self.undirected = undirected

    def compute(self, S, i, alts):
        return safe_log(S.common(i, self.undirected)[alts])


class IsFoF(Extractor):
    name = "is_fof"

    def __init__(self, undirected=None):
        self.undirected = undirected

    def compute(self, S, i, alts):
        fof = S.fof(i, self.undirected)
        return np.fromiter((a in fof for a in alts), dtype=np.float64, count=len(alts))


class Reciprocal(Extractor):
    """Whether the alternative already points at the chooser."""

    name = "reciprocal"

    def compute(self, S, i, alts):
        back = S.pred[i]
        return np.fromiter((a in back for a in alts), dtype=np.float64, count=len(alts))


class HopCategory(Extractor):
    """One-hot path length from the chooser; unreachable is the reference."""

    def __init__(self, cap=6, undirected=None):
        if cap < 2:
            raise FeatureError("hop cap must be >= 2")
        self.cap = int(cap)
        self.undirected = undirected
        self._lo = 2

    def bind(self, g):
        both = (not g.directed) if self.undirected is None else bool(self.undirected)
        self._lo = 1 if (both and g.directed) else 2
        return self

    def columns(self):
        cols = [f"hop_{k}" for k in range(self._lo, self.cap)]
        return cols + [f"hop_ge{self.cap}"]

    def compute(self, S, i, alts):
        d = S.distances(i, self.undirected)[alts]
        out = np.zeros((len(alts), self.cap - self._lo + 1))
        for c, k in enumerate(range(self._lo, self.cap)):
            out[:, c] = d == k
        out[:, -1] = d >= self.cap
        return out


class LogAge(Extractor):
    """``log(max(age, 1))`` with age in events, or in years for timestamped data."""

    name = "log_age"

    def __init__(self, unit="auto"):
        if unit not in ("auto", "events", "years"):
            raise FeatureError("age unit must be auto, events or years")
        self.unit = unit

    def compute(self, S, i, alts):
        years = self.unit == "years" or (self.unit == "auto" and S.timestamp is not None)
        if years:
            if S.timestamp is None:
                raise FeatureError("age in years needs edge timestamps")
            born = S.first_time[alts]
            born = np.where(np.isnan(born), S.timestamp, born)
            age = (S.timestamp - born) / SECONDS_PER_YEAR
        else:
            age = S.t - S.arrival[alts]
        return np.log(np.maximum(age, 1.0))


class NodeFixedEffect(Extractor):
    """Indicator per node; node 0 is the pinned reference level."""

    def bind(self, g):
        self._n = g.n_nodes
        return self

    def columns(self):
        return [f"node_{v}" for v in range(1, self._n)]

    def compute(self, S, i, alts):
        out = np.zeros((len(alts), self._n - 1))
        nz = alts > 0
        out[np.flatnonzero(nz), alts[nz] - 1] = 1.0
        return out


class SameGroup(Extractor):
    name = "same_group"

    def bind(self, g):
        self._group = np.array([-1 if m.group is None else m.group for m in g.nodes])
        return self

    def compute(self, S, i, alts):
        gi = self._group[i]
        return ((self._group[alts] == gi) & (gi >= 0)).astype(np.float64)


def circle_distance(g, i, alts):
    """Arc distance between the ``angle`` covariates of ``i`` and ``alts``."""
    ang = np.array([g.nodes[v].covariates["angle"] for v in alts])
    d = np.abs(ang - g.nodes[i].covariates["angle"]) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


class LatentDistance(Extractor):
    """A known distance ``fn(graph, chooser, alternatives)`` between nodes."""

    name = "latent_distance"

    def __init__(self, fn=circle_distance):
        self.fn = fn

    def compute(self, S, i, alts):
        return np.asarray(self.fn(S.g, i, alts), dtype=np.float64)


class Covariate(Extractor):
    def __init__(self, key, name=None):
        self.key = key
        self.name = name or f"cov_{key}"

    def bind(self, g):
        vals = []
        for m in g.nodes:
            if self.key == "fitness":
                vals.append(np.nan if m.fitness is None else m.fitness)
            else:
                vals.append(m.covariates.get(self.key, np.nan))
        self._vals = np.asarray(vals, dtype=np.float64)
        return self

    def compute(self, S, i, alts):
        v = self._vals[alts]
        if np.any(np.isnan(v)):
            raise FeatureError(f"covariate {self.key!r} missing for some nodes")
        return v


_ALIASES = {
    "logdeg": LogDegree, "log_degree": LogDegree,
    "hasdeg": HasDegree, "has_degree": HasDegree,
    "deg": Degree, "degree": Degree,
    "logcn": LogCommonNeighbors, "log_common_neighbors": LogCommonNeighbors,
    "fof": IsFoF, "is_fof": IsFoF,
    "recip": Reciprocal, "reciprocal": Reciprocal,
    "logage": LogAge, "log_age": LogAge,
    "fe": NodeFixedEffect, "node_fixed_effect": NodeFixedEffect,
    "samegroup": SameGroup, "same_group": SameGroup,
    "dist": LatentDistance, "latent_distance": LatentDistance,
}


def parse_extractor(token):
    """Build an extractor from a short name such as ``logdeg``, ``hops:6``,
    ``degind:0-20`` or ``cov:papers``."""
    token = token.strip()
    head, _, arg = token.partition(":")
    if head in ("hops", "hop_category"):
        return HopCategory(int(arg) if arg else 6)
    if head in ("degind", "degree_indicator"):
        if "-" in arg:
            lo, hi = (int(x) for x in arg.split("-"))
            return DegreeIndicator(range(lo, hi + 1))
        return DegreeIndicator(int(x) for x in arg.split("/") if x)
    if head in ("cov", "covariate"):
        if not arg:
            raise FeatureError("covariate needs a name, e.g. cov:papers")
        return Covariate(arg)
    if head in _ALIASES and not arg:
        return _ALIASES[head]()
    raise FeatureError(f"unknown feature {token!r}")


@dataclass
class FeatureSpec:
    """Ordered extractors plus the rule for removing the chooser's existing ties.

    ``exclude`` is ``"out"`` (drop nodes the chooser already points to) or
    ``"any"`` (also drop nodes pointing at the chooser).
    """

    extractors: list = field(default_factory=list)
    exclude: str = "out"

    @classmethod
    def parse(cls, text, exclude="out"):
        tokens = [t for t in text.split(",") if t.strip()] if text else []
        return cls([parse_extractor(t) for t in tokens], exclude)

    def bind(self, g):
        for ex in self.extractors:
            ex.bind(g)
        names = [c for ex in self.extractors for c in ex.columns()]
        if len(set(names)) != len(names):
            raise FeatureError(f"duplicate feature names in {names}")
        if self.exclude not in ("out", "any"):
            raise FeatureError("exclude must be 'out' or 'any'")
        return names

    def compute(self, S, i, alts):
        cols = []
        for ex in self.extractors:
            v = np.asarray(ex.compute(S, i, alts), dtype=np.float64)
            cols.append(v.reshape(len(alts), -1))
        if not cols:
            return np.zeros((len(alts), 0))
        return np.hstack(cols)


# ----------------------------------------------------------------------
# extraction


@dataclass
class EventFilter:
    """Which edges become choice events.

    ``min_event`` skips warm-up edges (e.g. a generator's bootstrap).
    ``start``/``end`` bound timestamps (seconds). ``keep_prob`` keeps each
    candidate with that probability while scanning in order and
    ``max_events`` stops the scan; without ``keep_prob``, ``max_events``
    draws a uniform subset of that size. ``exclude_first_seen`` drops edges
    whose chooser appears for the first time in the same edge (``"edge"``)
    or the same UTC day (``"day"``). ``require_fof`` drops events whose
    chooser has no friend-of-friend alternative.
    """

    min_event: int = 0
    start: float | None = None
    end: float | None = None
    keep_prob: float | None = None
    max_events: int | None = None
    exclude_first_seen: str = "none"
    require_fof: bool = False
    seed: int = 0


def _candidates(g, flt):
    n = g.n_edges
    ok = np.ones(n, dtype=bool)
    ev = np.asarray(g.event, dtype=np.int64)
    ok &= ev >= flt.min_event
    if flt.start is not None or flt.end is not None:
        ts = np.array([np.nan if t is None else t for t in g.timestamp], dtype=np.float64)
        if np.any(np.isnan(ts)):
            raise FeatureError("date window needs timestamps on every edge")
        if flt.start is not None:
            ok &= ts >= flt.start
        if flt.end is not None:
            ok &= ts < flt.end
    if flt.exclude_first_seen not in ("none", "edge", "day"):
        raise FeatureError("exclude_first_seen must be none, edge or day")
    if flt.exclude_first_seen != "none":
        first_edge = {}
        first_day = {}
        for e, (s, d, _, ts) in enumerate(g.edges()):
            for v in (s, d):
                if v not in first_edge:
                    first_edge[v] = e
                    if ts is not None:
                        first_day[v] = math.floor(ts / 86400.0)
        for e, (s, _, _, ts) in enumerate(g.edges()):
            if flt.exclude_first_seen == "edge" and first_edge[s] == e:
                ok[e] = False
            elif flt.exclude_first_seen == "day":
                if ts is None:
                    raise FeatureError("day-level exclusion needs timestamps")
                if first_day[s] == math.floor(ts / 86400.0):
                    ok[e] = False
    idx = np.flatnonzero(ok)
    rng = np.random.default_rng(flt.seed)
    if flt.keep_prob is not None:
        keep = rng.random(len(idx)) < flt.keep_prob
        idx = idx[keep]
        if flt.max_events is not None:
            idx = idx[: flt.max_events]
    elif flt.max_events is not None and flt.max_events < len(idx):
        idx = np.sort(rng.choice(idx, size=flt.max_events, replace=False))
    sel = np.zeros(n, dtype=bool)
    sel[idx] = True
    return sel


def extract_choices(g, spec, choice_set="all", filters=None, neg_samples=None, seed=0):
    """Turn the edges of ``g`` into :class:`ChoiceData`.

    Parameters
    ----------
    g : TemporalGraph
    spec : FeatureSpec or str
    choice_set : {"all", "fof"}
        ``"fof"`` restricts each choice set to the chooser's friends-of-
        friends; an observed choice outside it is kept (appended) but marked
        invalid.
    filters : EventFilter, optional
    neg_samples : int, optional
        Sample this many non-chosen alternatives per event (uniformly, without
        replacement) before computing features.
    seed : int
        Seed for negative sampling.

    Events with an empty choice set are dropped and counted in
    ``data.meta["dropped_empty"]``.
    """
    if isinstance(spec, str):
        spec = FeatureSpec.parse(spec)
    if g.n_edges == 0:
        raise FeatureError("graph has no edges")
    if choice_set not in ("all", "fof"):
        raise FeatureError("choice_set must be 'all' or 'fof'")
    flt = filters or EventFilter()
    names = spec.bind(g)
    select = _candidates(g, flt)
    rng = np.random.default_rng(seed)
    S = _Replay(g)
    pos = np.full(g.n_nodes, -1, dtype=np.int64)

    X_parts, alt_parts = [], []
    sizes, chosen, chooser, events, valid = [], [], [], [], []
    dropped = {"empty": 0, "no_fof": 0, "outside": 0}
    for e, (i, j, t, ts) in enumerate(g.edges()):
        if select[e]:
            S.advance(t, ts)
            alive = S.alive
            pos[alive] = np.arange(len(alive))
            mask = np.ones(len(alive), dtype=bool)
            excl = set(S.succ[i])
            if spec.exclude == "any":
                excl |= S.pred[i]
            excl.add(i)
            for v in excl:
                if pos[v] >= 0:
                    mask[pos[v]] = False
            if flt.require_fof and not S.fof(i):
                dropped["no_fof"] += 1
                S.apply(i, j, ts)
                continue
            if choice_set == "fof":
                fof = S.fof(i)
                for v in alive[mask]:
                    if v not in fof:
                        mask[pos[v]] = False
            ok = pos[j] >= 0 and mask[pos[j]]
            cand = alive[mask]
            if not ok:
                if choice_set == "fof" and pos[j] >= 0 and len(cand):
                    dropped["outside"] += 1
                else:
                    dropped["empty"] += 1
                    S.apply(i, j, ts)
                    continue
            others = cand[cand != j]
            if neg_samples is not None and len(others) > neg_samples:
                others = np.sort(rng.choice(others, size=neg_samples, replace=False))
            alts = np.sort(np.append(others, j))
            cpos = int(np.searchsorted(alts, j))
            X_parts.append(spec.compute(S, i, alts))
            alt_parts.append(alts)
            sizes.append(len(alts))
            chosen.append(cpos)
            chooser.append(i)
            events.append(t)
            valid.append(bool(ok))
        S.apply(i, j, ts)

    if not sizes:
        raise FeatureError("no choice events survived the filters")
    data = ChoiceData(names, np.vstack(X_parts), np.concatenate([[0], np.cumsum(sizes)]),
                      chosen, chooser, np.concatenate(alt_parts), events, None, valid,
                      meta={"dropped_empty": dropped["empty"],
                            "dropped_no_fof": dropped["no_fof"],
                            "outside_choice_set": dropped["outside"],
                            "choice_set": choice_set,
                            "neg_samples": neg_samples})
    if not np.all(np.isfinite(data.X)):
        raise FeatureError("non-finite feature values")
    if dropped["empty"]:
        log.info("dropped %d events with an empty choice set", dropped["empty"])
    return data


def negative_sample(data, s, rng):
    """Keep each event's chosen alternative plus ``min(s, available)`` others
    drawn uniformly without replacement; row order within events is kept."""
    if s < 1:
        raise ValueError("s must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    keep = np.zeros(data.X.shape[0], dtype=bool)
    for k in range(data.n_events):
        lo, hi = data.offsets[k], data.offsets[k + 1]
        c = lo + data.chosen[k]
        keep[c] = True
        size = hi - lo
        if size - 1 <= s:
            keep[lo:hi] = True
            continue
        pick = rng.choice(size - 1, size=s, replace=False)
        pick = pick + (pick >= data.chosen[k])
        keep[lo + pick] = True
    out, _ = data.restrict_rows(keep)
    out.meta = {**data.meta, "neg_samples": int(s)}
    return out
