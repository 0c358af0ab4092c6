"""Temporal graph store and neighbour queries.

A graph is a time-sorted stream of edges.  Every edge endpoint at the edge's
timestamp is a node *occurrence*; occurrences are what get labelled, scored
and calibrated.

Two query paths exist.  :func:`topological_neighbors` and
:func:`temporal_neighbors` answer one occurrence at a time with a plain BFS
and are the reference definitions.  :func:`topological_neighbor_pairs` and
:func:`temporal_neighbor_pairs` answer many occurrences at once with sparse
matrix products and are what the scoring code uses.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError, NotFoundError, ParseError, ValidationError


class TemporalNodeId(NamedTuple):
    node: int
    time: int


class TemporalEdge(NamedTuple):
    src: int
    dst: int
    time: int


@dataclass(frozen=True)
class NeighborQueryParams:
    """Hop radius ``d_st`` and time radius ``t_st`` (``math.inf`` allowed)."""

    d_st: int = 1
    t_st: float = 0

    def __post_init__(self):
        if isinstance(self.d_st, bool) or int(self.d_st) != self.d_st or self.d_st < 1:
            raise ConfigError(f"d_st must be a positive integer, got {self.d_st!r}")
        _check_time_radius(self.t_st)


def _check_time_radius(t_st):
    if t_st is None or not t_st >= 0:
        raise ConfigError(f"t_st must be non-negative, got {t_st!r}")
    if not math.isinf(t_st) and int(t_st) != t_st:
        raise ConfigError(f"t_st must be an integer or inf, got {t_st!r}")


class _NodeIndex(NamedTuple):
    order: np.ndarray  # occurrence rows sorted by (node, time)
    node_ids: np.ndarray  # sorted distinct node ids
    keys: np.ndarray  # rank(node) * span + (time - tmin), ascending
    tmin: int
    span: int


class TemporalGraph:
    """Immutable temporal graph.

    Occurrences are kept sorted by ``(time, node)``; that order defines the
    row numbering shared with the vectorised neighbour queries.
    """

    def __init__(self, src, dst, time, labels: Mapping, num_classes: int):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        time = np.asarray(time, dtype=np.int64).reshape(-1)
        if not (src.size == dst.size == time.size):
            raise ValidationError("src, dst and time must have equal length")
        if time.size and time.min() < 0:
            raise ValidationError("edge timestamps must be non-negative")
        if int(num_classes) < 2:
            raise ValidationError(f"num_classes must be >= 2, got {num_classes}")
        order = np.argsort(time, kind="stable")
        self._src = src[order]
        self._dst = dst[order]
        self._time = time[order]
        for arr in (self._src, self._dst, self._time):
            arr.setflags(write=False)
        self.num_classes = int(num_classes)

        if time.size:
            pairs = np.unique(
                np.stack([np.concatenate([time, time]), np.concatenate([src, dst])], axis=1),
                axis=0,
            )
        else:
            pairs = np.empty((0, 2), dtype=np.int64)
        self.occ_time = np.ascontiguousarray(pairs[:, 0])
        self.occ_node = np.ascontiguousarray(pairs[:, 1])
        self.occ_time.setflags(write=False)
        self.occ_node.setflags(write=False)
        self._row = {
            TemporalNodeId(int(n), int(t)): i
            for i, (n, t) in enumerate(zip(self.occ_node.tolist(), self.occ_time.tolist()))
        }

        checked = {}
        for key, cls in labels.items():
            key = TemporalNodeId(int(key[0]), int(key[1]))
            if key not in self._row:
                raise ValidationError(f"label refers to unknown occurrence {key.node}@{key.time}")
            cls = int(cls)
            if not 0 <= cls < self.num_classes:
                raise ValidationError(
                    f"class {cls} for {key.node}@{key.time} outside 0..{self.num_classes - 1}"
                )
            checked[key] = cls
        self._labels = MappingProxyType(checked)

    # -- basic accessors -------------------------------------------------

    @property
    def labels(self) -> Mapping[TemporalNodeId, int]:
        return self._labels

    @property
    def edge_src(self) -> np.ndarray:
        return self._src

    @property
    def edge_dst(self) -> np.ndarray:
        return self._dst

    @property
    def edge_time(self) -> np.ndarray:
        return self._time

    @cached_property
    def edges(self) -> tuple[TemporalEdge, ...]:
        return tuple(
            TemporalEdge(*e)
            for e in zip(self._src.tolist(), self._dst.tolist(), self._time.tolist())
        )

    @cached_property
    def occurrences(self) -> tuple[TemporalNodeId, ...]:
        """All occurrences in row order, i.e. sorted by ``(time, node)``."""
        return tuple(
            TemporalNodeId(n, t) for n, t in zip(self.occ_node.tolist(), self.occ_time.tolist())
        )

    @cached_property
    def nodes(self) -> frozenset:
        return frozenset(self._row)

    @property
    def num_occurrences(self) -> int:
        return len(self._row)

    @property
    def num_edges(self) -> int:
        return int(self._time.size)

    def __contains__(self, v) -> bool:
        return v in self._row

    def row(self, v) -> int:
        try:
            return self._row[v]
        except KeyError:
            raise NotFoundError(f"occurrence {tuple(v)} not in graph") from None

    def rows(self, ids: Iterable) -> np.ndarray:
        return np.fromiter((self.row(v) for v in ids), dtype=np.int64)

    def label_array(self, ids: Sequence) -> np.ndarray:
        try:
            return np.fromiter((self._labels[v] for v in ids), dtype=np.int64, count=len(ids))
        except KeyError as exc:
            raise ValidationError(f"occurrence {tuple(exc.args[0])} has no label") from None

    def __repr__(self):
        return (
            f"TemporalGraph(occurrences={self.num_occurrences}, edges={self.num_edges}, "
            f"labels={len(self._labels)}, num_classes={self.num_classes})"
        )

    # -- per-node time index ---------------------------------------------

    @cached_property
    def _node_index(self) -> _NodeIndex:
        order = np.lexsort((self.occ_time, self.occ_node))
        node_ids = np.unique(self.occ_node)
        if order.size == 0:
            return _NodeIndex(order, node_ids, np.empty(0, np.int64), 0, 1)
        tmin = int(self.occ_time.min())
        span = int(self.occ_time.max()) - tmin + 1
        if node_ids.size * span >= 2**62:
            raise ConfigError("time span too large for the occurrence index")
        rank = np.searchsorted(node_ids, self.occ_node[order])
        keys = rank * span + (self.occ_time[order] - tmin)
        return _NodeIndex(order, node_ids, keys, tmin, span)

    @cached_property
    def _edge_ranks(self):
        ids = self._node_index.node_ids
        if ids.size and ids[0] >= 0 and ids[-1] < 4 * ids.size + 1024:
            # dense ids: a lookup table beats binary search
            lut = np.zeros(int(ids[-1]) + 1, dtype=np.int64)
            lut[ids] = np.arange(ids.size)
            return lut[self._src], lut[self._dst]
        return np.searchsorted(ids, self._src), np.searchsorted(ids, self._dst)

    def _node_window(self, nodes: np.ndarray, lo: np.ndarray, hi: np.ndarray):
        """Ranges into ``_node_index.order`` of occurrences of ``nodes`` with time in [lo, hi]."""
        idx = self._node_index
        rank = np.searchsorted(idx.node_ids, nodes)
        lo_off = np.clip(np.asarray(lo, dtype=np.int64) - idx.tmin, 0, idx.span)
        hi_off = np.clip(np.asarray(hi, dtype=np.int64) - idx.tmin, -1, idx.span - 1)
        start = np.searchsorted(idx.keys, rank * idx.span + lo_off, side="left")
        end = np.searchsorted(idx.keys, rank * idx.span + hi_off, side="right")
        return start, np.maximum(end, start)


# -- loading ---------------------------------------------------------------


def _parse_int(value, line, field):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value)
    try:
        return int(str(value).strip())
    except ValueError:
        raise ParseError(f"field {field!r}: expected integer, got {value!r}", line) from None


def _parse_time(value, line):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        t = int(value)
    else:
        try:
            t = int(str(value).strip())
        except ValueError:
            try:
                t = float(str(value).strip())
            except ValueError:
                raise ParseError(f"field 'time': expected number, got {value!r}", line) from None
            if not math.isfinite(t):
                raise ParseError(f"field 'time': non-finite value {value!r}", line)
            if t == int(t):
                t = int(t)
    if t < 0:
        raise ValidationError(f"line {line}: timestamps must be non-negative, got {value!r}")
    return t


def _unpack(record, width, line):
    if isinstance(record, (str, bytes)) or len(record) != width:
        raise ParseError(f"expected {width} fields, got {record!r}", line)
    return record


def load_graph(
    edge_records: Iterable[Sequence],
    label_records: Iterable[Sequence],
    num_classes: int | None = None,
    *,
    first_line: int = 1,
) -> TemporalGraph:
    """Build a graph from ``(src, dst, time)`` and ``(node, time, class)`` records.

    Line numbers in parse errors count from ``first_line`` (use 2 when the
    records come from a CSV body below a header).  If any timestamp is not an
    integer, all timestamps are replaced by their dense rank over the union of
    edge and label times.
    """
    edges = []
    for i, rec in enumerate(edge_records):
        line = first_line + i
        s, d, t = _unpack(rec, 3, line)
        edges.append((_parse_int(s, line, "src"), _parse_int(d, line, "dst"), _parse_time(t, line)))
    labels = []
    for i, rec in enumerate(label_records):
        line = first_line + i
        n, t, c = _unpack(rec, 3, line)
        labels.append((_parse_int(n, line, "node"), _parse_time(t, line), _parse_int(c, line, "label")))

    all_times = [e[2] for e in edges] + [lab[1] for lab in labels]
    if any(isinstance(t, float) for t in all_times):
        rank = {t: r for r, t in enumerate(sorted(set(all_times)))}
        edges = [(s, d, rank[t]) for s, d, t in edges]
        labels = [(n, rank[t], c) for n, t, c in labels]

    if num_classes is None:
        num_classes = max(2, max((c for _, _, c in labels), default=0) + 1)
    label_map = {}
    for n, t, c in labels:
        key = TemporalNodeId(n, t)
        if key in label_map and label_map[key] != c:
            raise ValidationError(f"conflicting labels for {n}@{t}")
        label_map[key] = c
    arr = np.array(edges, dtype=np.int64).reshape(-1, 3)
    return TemporalGraph(arr[:, 0], arr[:, 1], arr[:, 2], label_map, num_classes)


# -- reference queries -----------------------------------------------------


def _require(g: TemporalGraph, v) -> TemporalNodeId:
    v = TemporalNodeId(*v)
    if v not in g:
        raise NotFoundError(f"occurrence {v.node}@{v.time} not in graph")
    return v


def topological_neighbors(g: TemporalGraph, v, p: NeighborQueryParams) -> set:
    """Occurrences within ``p.d_st`` hops of ``v`` and ``p.t_st`` time units.

    Hops are counted over the undirected projection of edges with time in
    ``[v.time - t_st, v.time]``.  Other occurrences of ``v.node`` are
    temporal, not topological, neighbours and are left out.
    """
    v = _require(g, v)
    lo = v.time - p.t_st
    e0 = int(np.searchsorted(g.edge_time, lo, side="left")) if math.isfinite(lo) else 0
    e1 = int(np.searchsorted(g.edge_time, v.time, side="right"))
    adj = defaultdict(set)
    for s, d in zip(g.edge_src[e0:e1].tolist(), g.edge_dst[e0:e1].tolist()):
        if s != d:
            adj[s].add(d)
            adj[d].add(s)
    dist = {v.node: 0}
    queue = deque([v.node])
    while queue:
        u = queue.popleft()
        if dist[u] == p.d_st:
            continue
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    reached = {u for u, d in dist.items() if d >= 1}
    return {u for u in g.nodes if u.node in reached and abs(u.time - v.time) <= p.t_st}


def temporal_neighbors(g: TemporalGraph, v, t_st) -> set:
    """Earlier occurrences of the same node at most ``t_st`` time units back."""
    v = _require(g, v)
    _check_time_radius(t_st)
    return {u for u in g.nodes if u.node == v.node and 0 < v.time - u.time <= t_st}


# -- batched queries -------------------------------------------------------


def _expand_ranges(start: np.ndarray, end: np.ndarray):
    lengths = end - start
    total = int(lengths.sum())
    owner = np.repeat(np.arange(start.size), lengths)
    offset = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    return owner, np.repeat(start, lengths) + offset


def _empty_pairs():
    return np.empty(0, np.int64), np.empty(0, np.int64)


def topological_neighbor_pairs(g: TemporalGraph, query_rows, p: NeighborQueryParams):
    """Vectorised :func:`topological_neighbors` for many occurrences.

    Returns ``(q, occ)``: position in ``query_rows`` and occurrence row of
    every (query, neighbour) pair.
    """
    query_rows = np.asarray(query_rows, dtype=np.int64)
    if query_rows.size == 0 or g.num_edges == 0:
        return _empty_pairs()
    q_time = g.occ_time[query_rows]
    q_node = g.occ_node[query_rows]
    order = np.argsort(q_time, kind="stable")
    times, first = np.unique(q_time[order], return_index=True)
    bounds = np.append(first, order.size)
    infinite = math.isinf(p.t_st)
    t_st = 0 if infinite else int(p.t_st)
    tmin, tmax = int(g.occ_time.min()), int(g.occ_time.max())
    out_q, out_occ = [], []
    for j, t in enumerate(times.tolist()):
        qsel = order[bounds[j] : bounds[j + 1]]
        e0 = 0 if infinite else int(np.searchsorted(g.edge_time, t - t_st, side="left"))
        e1 = int(np.searchsorted(g.edge_time, t, side="right"))
        s, d = g.edge_src[e0:e1], g.edge_dst[e0:e1]
        keep = s != d
        s, d = s[keep], d[keep]
        if s.size == 0:
            continue
        local = np.unique(np.concatenate([s, d]))
        ls, ld = np.searchsorted(local, s), np.searchsorted(local, d)
        n_local = local.size
        adj = sparse.csr_matrix(
            (np.ones(2 * ls.size, dtype=np.int32), (np.concatenate([ls, ld]), np.concatenate([ld, ls]))),
            shape=(n_local, n_local),
        )
        adj.data[:] = 1
        qn = q_node[qsel]
        pos = np.minimum(np.searchsorted(local, qn), n_local - 1)
        present = local[pos] == qn
        qsel, qloc = qsel[present], pos[present]
        if qsel.size == 0:
            continue
        reach = adj[qloc]
        for _ in range(p.d_st - 1):
            grown = reach + reach @ adj
            grown.data[:] = 1
            if grown.nnz == reach.nnz:
                break
            reach = grown
        reach = reach.tocoo()
        keep = reach.col != qloc[reach.row]
        r_row, r_col = reach.row[keep], reach.col[keep]
        if r_row.size == 0:
            continue
        lo = tmin if infinite else t - t_st
        hi = tmax if infinite else t + t_st
        start, end = g._node_window(local[r_col], np.full(r_col.size, lo), np.full(r_col.size, hi))
        owner, pos_by_node = _expand_ranges(start, end)
        out_q.append(qsel[r_row][owner])
        out_occ.append(g._node_index.order[pos_by_node])
    if not out_q:
        return _empty_pairs()
    return np.concatenate(out_q), np.concatenate(out_occ)


def _time_groups(q_time: np.ndarray):
    order = np.argsort(q_time, kind="stable")
    times, first = np.unique(q_time[order], return_index=True)
    bounds = np.append(first, order.size)
    for j, t in enumerate(times.tolist()):
        yield t, order[bounds[j] : bounds[j + 1]]


def topological_neighbor_sums(
    g: TemporalGraph, query_rows, p: NeighborQueryParams, values: np.ndarray, source_mask=None
):
    """Per-query sum of ``values`` over topological neighbours, and their count.

    Equal to ``aggregate_pairs(*topological_neighbor_pairs(...))`` but never
    materialises the pairs: for each query time the reachable-node matrix is
    multiplied by per-node sums over the time window, so the cost grows with
    the number of distinct neighbour nodes, not with their occurrences.
    """
    query_rows = np.asarray(query_rows, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    n_q = query_rows.size
    sums = np.zeros((n_q,) + values.shape[1:])
    counts = np.zeros(n_q, dtype=np.int64)
    if n_q == 0 or g.num_edges == 0:
        return sums, counts
    mask = np.ones(g.num_occurrences, bool) if source_mask is None else np.asarray(source_mask, bool)
    masked = values * mask.reshape((-1,) + (1,) * (values.ndim - 1))
    q_time = g.occ_time[query_rows]
    q_node = g.occ_node[query_rows]
    infinite = math.isinf(p.t_st)
    t_st = 0 if infinite else int(p.t_st)
    tmin, tmax = int(g.occ_time.min()), int(g.occ_time.max())
    idx = g._node_index
    n_nodes = idx.node_ids.size
    src_rank, dst_rank = g._edge_ranks
    steps = {}

    def step_adj(t):
        # symmetric adjacency of the edges stamped t, without self-loops
        if t not in steps:
            e0 = int(np.searchsorted(g.edge_time, t, side="left"))
            e1 = int(np.searchsorted(g.edge_time, t, side="right"))
            s, d = src_rank[e0:e1], dst_rank[e0:e1]
            keep = s != d
            s, d = s[keep], d[keep]
            steps[t] = sparse.coo_matrix(
                (np.ones(2 * s.size), (np.concatenate([s, d]), np.concatenate([d, s]))),
                shape=(n_nodes, n_nodes),
            ).tocsr()
        return steps[t]

    def window_sums(lo, hi):
        # per-node sum and count of masked values over occurrences in [lo, hi]
        start, end = g._node_window(idx.node_ids, np.full(n_nodes, lo), np.full(n_nodes, hi))
        owner, pos_by_node = _expand_ranges(start, end)
        occ = idx.order[pos_by_node]
        node_sum = np.zeros((n_nodes,) + values.shape[1:])
        np.add.at(node_sum, owner, masked[occ])
        return node_sum, np.bincount(owner, weights=mask[occ], minlength=n_nodes)

    edge_times = np.unique(g.edge_time)
    for t, qsel in _time_groups(q_time):
        lo_t = -np.inf if infinite else t - t_st
        window = edge_times[(edge_times >= lo_t) & (edge_times <= t)]
        if window.size == 0:
            continue
        adj = step_adj(int(window[0]))
        for u in window[1:].tolist():
            adj = adj + step_adj(u)
        adj.data[:] = 1.0
        if adj.nnz == 0:
            continue
        qloc = np.searchsorted(idx.node_ids, q_node[qsel])
        lo = tmin if infinite else t - t_st
        hi = tmax if infinite else t + t_st
        node_sum, node_count = window_sums(lo, hi)
        if p.d_st == 1:
            # one hop: multiply the whole adjacency, then pick query rows (no row copy)
            sums[qsel] = np.asarray(adj @ node_sum)[qloc]
            counts[qsel] = np.rint(adj @ node_count)[qloc].astype(np.int64)
            continue
        reach = adj[qloc]
        for _ in range(p.d_st - 1):
            grown = reach + reach @ adj
            grown.data[:] = 1.0
            if grown.nnz == reach.nnz:
                break
            reach = grown
        # walks can return to the query node, which is never its own neighbour
        reach = reach.tocoo()
        off = reach.col != qloc[reach.row]
        reach = sparse.csr_matrix(
            (reach.data[off], (reach.row[off], reach.col[off])), shape=reach.shape
        )
        grp_count = np.asarray(reach @ node_count).reshape(-1)
        sums[qsel] = np.asarray(reach @ node_sum)
        counts[qsel] = np.rint(grp_count).astype(np.int64)
    return sums, counts


def temporal_neighbor_pairs(g: TemporalGraph, query_rows, t_st):
    """Vectorised :func:`temporal_neighbors`; same return shape as the topological variant."""
    _check_time_radius(t_st)
    query_rows = np.asarray(query_rows, dtype=np.int64)
    if query_rows.size == 0 or t_st == 0:
        return _empty_pairs()
    q_time = g.occ_time[query_rows]
    lo = np.full(q_time.size, int(g.occ_time.min())) if math.isinf(t_st) else q_time - int(t_st)
    start, end = g._node_window(g.occ_node[query_rows], lo, q_time - 1)
    owner, pos_by_node = _expand_ranges(start, end)
    return owner, g._node_index.order[pos_by_node]


def aggregate_pairs(q, occ, values: np.ndarray, n_queries: int, source_mask=None):
    """Per-query sum of ``values[occ]`` and neighbour count over the given pairs."""
    if source_mask is not None:
        keep = np.asarray(source_mask, dtype=bool)[occ]
        q, occ = q[keep], occ[keep]
    counts = np.bincount(q, minlength=n_queries)
    values = np.asarray(values, dtype=np.float64)
    mat = sparse.csr_matrix(
        (np.ones(q.size), (q, occ)), shape=(n_queries, values.shape[0])
    )
    return np.asarray(mat @ values), counts
