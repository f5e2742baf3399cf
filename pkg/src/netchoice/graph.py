"""Append-only temporal directed graph with "as of event t" queries.

Every query that takes ``t`` only sees edges whose event index is strictly
smaller than ``t`` (``t=None`` means the whole graph). Undirected graphs
store each edge as two reciprocal arcs, so ``in_degree`` of an undirected
graph is the node's total degree and out-neighborhoods are neighborhoods.
"""
from __future__ import annotations

import csv
import io
import logging
import warnings
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

log = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class SelfLoopError(GraphError):
    pass


class NonMonotoneTimeError(GraphError):
    pass


@dataclass
class NodeMeta:
    node: int
    arrival: int
    group: int | None = None
    fitness: float | None = None
    covariates: dict = field(default_factory=dict)


class TemporalGraph:
    """Simple directed graph grown one timestamped edge at a time.

    Parameters
    ----------
    directed : bool
        When False each ``add_edge(i, j)`` inserts arcs ``i->j`` and ``j->i``;
        the edge sequence still records ``i`` as the initiator.
    """

    def __init__(self, directed=True):
        self.directed = bool(directed)
        self.nodes: list[NodeMeta] = []
        self.src: list[int] = []
        self.dst: list[int] = []
        self.event: list[int] = []
        self.timestamp: list[float | None] = []
        self._succ: list[list[int]] = []
        self._succ_t: list[list[int]] = []
        self._pred: list[list[int]] = []
        self._pred_t: list[list[int]] = []
        self._arcs: set[tuple[int, int]] = set()
        self.meta: dict = {}

    # ------------------------------------------------------------------
    # construction

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return len(self.src)

    @property
    def n_arcs(self):
        return len(self._arcs)

    @property
    def last_event(self):
        return self.event[-1] if self.event else -1

    def __len__(self):
        return self.n_edges

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"TemporalGraph({kind}, nodes={self.n_nodes}, edges={self.n_edges})"

    def add_node(self, arrival=None, group=None, fitness=None, covariates=None):
        """Append a node with id ``n_nodes`` and return that id."""
        v = len(self.nodes)
        if arrival is None:
            arrival = self.last_event + 1
        self.nodes.append(NodeMeta(v, int(arrival), group, fitness, dict(covariates or {})))
        self._succ.append([])
        self._succ_t.append([])
        self._pred.append([])
        self._pred_t.append([])
        return v

    def ensure_node(self, v, arrival):
        while len(self.nodes) <= v:
            self.add_node(arrival=arrival)

    def add_edge(self, i, j, t=None, timestamp=None):
        """Append edge ``i -> j`` at event index ``t`` (default: next index).

        Raises
        ------
        SelfLoopError, DuplicateEdgeError, NonMonotoneTimeError
        """
        i = int(i)
        j = int(j)
        if t is None:
            t = self.last_event + 1
        t = int(t)
        if i == j:
            raise SelfLoopError(f"self-loop on node {i} at event {t}")
        if t <= self.last_event:
            raise NonMonotoneTimeError(
                f"event index {t} not greater than last event {self.last_event}"
            )
        if (i, j) in self._arcs or (not self.directed and (j, i) in self._arcs):
            raise DuplicateEdgeError(f"edge ({i}, {j}) already present")
        if i < 0 or j < 0:
            raise GraphError("node ids must be non-negative")
        self.ensure_node(max(i, j), arrival=t)
        self.src.append(i)
        self.dst.append(j)
        self.event.append(t)
        self.timestamp.append(timestamp)
        self._add_arc(i, j, t)
        if not self.directed:
            self._add_arc(j, i, t)

    def _add_arc(self, i, j, t):
        self._arcs.add((i, j))
        self._succ[i].append(j)
        self._succ_t[i].append(t)
        self._pred[j].append(i)
        self._pred_t[j].append(t)

    # ------------------------------------------------------------------
    # time-indexed queries

    @staticmethod
    def _cut(times, t):
        return len(times) if t is None else bisect_left(times, t)

    def in_degree(self, j, t=None):
        return self._cut(self._pred_t[j], t)

    def out_degree(self, i, t=None):
        return self._cut(self._succ_t[i], t)

    def in_degrees(self, t=None):
        return np.array([self._cut(ts, t) for ts in self._pred_t], dtype=np.int64)

    def out_degrees(self, t=None):
        return np.array([self._cut(ts, t) for ts in self._succ_t], dtype=np.int64)

    def out_neighbors(self, i, t=None):
        return self._succ[i][: self._cut(self._succ_t[i], t)]

    def in_neighbors(self, i, t=None):
        return self._pred[i][: self._cut(self._pred_t[i], t)]

    def neighbors(self, i, t=None, undirected=False):
        if undirected and self.directed:
            return set(self.out_neighbors(i, t)) | set(self.in_neighbors(i, t))
        return set(self.out_neighbors(i, t))

    def has_edge(self, i, j, t=None):
        if (i, j) not in self._arcs:
            return False
        if t is None:
            return True
        return j in self.out_neighbors(i, t)

    def exists(self, v, t=None):
        """Whether node ``v`` has arrived at or before event ``t``."""
        if v < 0 or v >= len(self.nodes):
            return False
        return t is None or self.nodes[v].arrival <= t

    def _traversal(self, undirected):
        if undirected is None:
            undirected = not self.directed
        return bool(undirected) and self.directed

    def friends_of_friends(self, i, t=None, undirected=None):
        """Nodes two steps from ``i`` that ``i`` does not already point to.

        ``undirected`` selects traversal over in- and out-arcs; the default
        follows the graph's own directedness.
        """
        both = self._traversal(undirected)
        first = self.neighbors(i, t, undirected=both)
        out = set(self.out_neighbors(i, t))
        fof = set()
        for k in first:
            fof.update(self.neighbors(k, t, undirected=both))
        fof.discard(i)
        fof.difference_update(out)
        return fof

    def common_neighbors(self, i, j, t=None, undirected=None):
        """Count of intermediaries ``k`` with ``i -> k -> j`` before ``t``."""
        if self._traversal(undirected):
            return len(self.neighbors(i, t, True) & self.neighbors(j, t, True))
        return len(set(self.out_neighbors(i, t)) & set(self.in_neighbors(j, t)))

    def hop_distance(self, i, j, t=None, cap=6, undirected=None):
        """Shortest path length from ``i`` to ``j``, or None if longer than ``cap``."""
        if cap is not None and cap < 1:
            raise ValueError("cap must be >= 1")
        if i == j:
            return 0
        both = self._traversal(undirected)
        seen = {i}
        frontier = deque([(i, 0)])
        while frontier:
            v, d = frontier.popleft()
            if cap is not None and d >= cap:
                break
            for w in self.neighbors(v, t, undirected=both):
                if w in seen:
                    continue
                if w == j:
                    return d + 1
                seen.add(w)
                frontier.append((w, d + 1))
        return None

    def prefix(self, t):
        """A new graph holding only the edges with event index below ``t``.

        The node id space is kept whole; use :meth:`exists` for arrival.
        """
        g = TemporalGraph(self.directed)
        for meta in self.nodes:
            g.add_node(meta.arrival, meta.group, meta.fitness, meta.covariates)
        for s, d, e, ts in self.edges():
            if e >= t:
                break
            g.add_edge(s, d, e, timestamp=ts)
        g.meta = dict(self.meta)
        return g

    def edges(self):
        """Iterate ``(source, target, event, timestamp)`` in event order."""
        return zip(self.src, self.dst, self.event, self.timestamp)


# ----------------------------------------------------------------------
# edge-list and node-sidecar files


class SymbolTable:
    """Bidirectional map between external node labels and dense ids."""

    def __init__(self):
        self.labels: list[str] = []
        self._ids: dict[str, int] = {}

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self._ids

    def id(self, label):
        v = self._ids.get(label)
        if v is None:
            v = len(self.labels)
            self._ids[label] = v
            self.labels.append(label)
        return v

    def get(self, label):
        return self._ids.get(label)

    def label(self, v):
        return self.labels[v]


def parse_time(token):
    """Seconds since the epoch from a number or an ISO-8601 date/time string."""
    token = token.strip()
    if token == "":
        return None
    try:
        return float(token)
    except ValueError:
        pass
    dt = datetime.fromisoformat(token)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


@dataclass
class EdgeListReport:
    n_lines: int = 0
    n_edges: int = 0
    bad_lines: list = field(default_factory=list)
    duplicates: int = 0
    self_loops: int = 0
    resorted: bool = False


def _read_rows(path_or_buf, delimiter):
    opened = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, encoding="utf-8", newline="") if opened else path_or_buf
    try:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line
    finally:
        if opened:
            fh.close()


def read_edgelist(path, directed=None, delimiter=",", symbols=None, nodes_path=None,
                  strict=False):
    """Load an edge-list file into a :class:`TemporalGraph`.

    Lines are ``source,target[,timestamp]``; ``#`` starts a comment and a
    ``# directed: false`` pragma sets the graph type when ``directed`` is
    None. Rows are sorted by timestamp (stable) when timestamps are present
    and not monotone. Duplicate edges and self-loops are dropped with a
    warning; unparseable lines are counted (or raised with ``strict``).

    Returns
    -------
    graph, symbols, report
    """
    symbols = symbols if symbols is not None else SymbolTable()
    report = EdgeListReport()
    rows = []
    pragma_directed = None
    pragma_boot = None
    for lineno, line in _read_rows(path, delimiter):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s.lstrip("#").strip().lower().replace(" ", "")
            if body.startswith("directed:") or body.startswith("directed="):
                pragma_directed = body.split(":" if ":" in body else "=", 1)[1] in ("true", "1", "yes")
            elif body.startswith("bootstrap_edges:"):
                try:
                    pragma_boot = int(body.split(":", 1)[1])
                except ValueError:
                    pass
            continue
        report.n_lines += 1
        parts = [p.strip() for p in s.split(delimiter)]
        if report.n_lines == 1 and parts[:2] == ["source", "target"]:
            continue
        try:
            if len(parts) < 2 or len(parts) > 3 or not parts[0] or not parts[1]:
                raise ValueError("expected 2 or 3 columns")
            ts = parse_time(parts[2]) if len(parts) == 3 else None
        except ValueError as exc:
            if strict:
                raise GraphError(f"line {lineno}: {exc}") from None
            report.bad_lines.append(lineno)
            continue
        rows.append((parts[0], parts[1], ts, lineno))
    if directed is None:
        directed = True if pragma_directed is None else pragma_directed

    if nodes_path is not None:
        node_rows = read_nodes(nodes_path)
        for row in node_rows:
            symbols.id(row["node"])
    else:
        node_rows = []

    stamps = [r[2] for r in rows]
    if any(s is not None for s in stamps):
        if any(s is None for s in stamps):
            raise GraphError("timestamps must be given for all edges or none")
        if any(b < a for a, b in zip(stamps, stamps[1:])):
            warnings.warn("edge timestamps not monotone; sorting", stacklevel=2)
            report.resorted = True
            rows.sort(key=lambda r: r[2])

    g = TemporalGraph(directed=directed)
    for row in node_rows:
        v = symbols.id(row["node"])
        g.ensure_node(v, arrival=row["arrival"])
        meta = g.nodes[v]
        meta.arrival = row["arrival"]
        meta.group = row.get("group")
        meta.fitness = row.get("fitness")
        meta.covariates = row.get("covariates", {})
    t = 0
    for a, b, ts, lineno in rows:
        ia, ib = symbols.id(a), symbols.id(b)
        g.ensure_node(max(ia, ib), arrival=t)
        try:
            g.add_edge(ia, ib, t, timestamp=ts)
        except DuplicateEdgeError:
            report.duplicates += 1
            continue
        except SelfLoopError:
            report.self_loops += 1
            continue
        t += 1
    report.n_edges = g.n_edges
    if pragma_boot is not None:
        g.meta["bootstrap_edges"] = pragma_boot
    if report.duplicates:
        warnings.warn(f"dropped {report.duplicates} duplicate edge(s)", stacklevel=2)
    if report.self_loops:
        warnings.warn(f"dropped {report.self_loops} self-loop(s)", stacklevel=2)
    if report.bad_lines:
        warnings.warn(f"skipped {len(report.bad_lines)} unparseable line(s): "
                      f"{report.bad_lines[:10]}", stacklevel=2)
    return g, symbols, report


def write_edgelist(g, path_or_buf, symbols=None, timestamps=None, header=None):
    """Write ``source,target[,timestamp]`` lines preceded by comment pragmas."""
    buf = io.StringIO()
    buf.write(f"# directed: {'true' if g.directed else 'false'}\n")
    if "bootstrap_edges" in g.meta:
        buf.write(f"# bootstrap_edges: {g.meta['bootstrap_edges']}\n")
    for line in header or ():
        buf.write(f"# {line}\n")
    if timestamps is None:
        timestamps = any(ts is not None for ts in g.timestamp)
    lab = symbols.label if symbols is not None else str
    for s, d, _, ts in g.edges():
        if timestamps:
            buf.write(f"{lab(s)},{lab(d)},{'' if ts is None else repr(float(ts))}\n")
        else:
            buf.write(f"{lab(s)},{lab(d)}\n")
    text = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


_NODE_FIXED = ("node", "arrival", "group", "fitness")


def read_nodes(path):
    """Parse a node sidecar (header ``node,arrival[,group][,fitness][,cov...]``)."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        lines = (ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#"))
        reader = csv.DictReader(lines)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["node", "arrival"]:
            raise GraphError("node file header must start with node,arrival")
        for n, rec in enumerate(reader, start=2):
            try:
                row = {"node": rec["node"].strip(), "arrival": int(rec["arrival"])}
                if rec.get("group") not in (None, ""):
                    row["group"] = int(rec["group"])
                if rec.get("fitness") not in (None, ""):
                    row["fitness"] = float(rec["fitness"])
                row["covariates"] = {
                    k: float(v) for k, v in rec.items()
                    if k not in _NODE_FIXED and v not in (None, "")
                }
            except (TypeError, ValueError) as exc:
                raise GraphError(f"node file row {n}: {exc}") from None
            out.append(row)
    return out


def write_nodes(g, path, symbols=None):
    cov = sorted({k for m in g.nodes for k in m.covariates})
    cols = ["node", "arrival"]
    if any(m.group is not None for m in g.nodes):
        cols.append("group")
    if any(m.fitness is not None for m in g.nodes):
        cols.append("fitness")
    cols += cov
    lab = symbols.label if symbols is not None else str
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for m in g.nodes:
            rec = [lab(m.node), str(m.arrival)]
            if "group" in cols:
                rec.append("" if m.group is None else str(m.group))
            if "fitness" in cols:
                rec.append("" if m.fitness is None else repr(float(m.fitness)))
            rec += [repr(float(m.covariates[k])) if k in m.covariates else "" for k in cov]
            fh.write(",".join(rec) + "\n")
