"""CSV readers and writers for the command line.

Floats are written with ``repr`` so output is exact and deterministic.
Files use ``\\n`` line endings regardless of platform.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

from .base_predictor import ProbabilityTable, load_probabilities
from .errors import ParseError, ValidationError
from .temporal_graph import TemporalGraph, TemporalNodeId, load_graph
from .weighted_quantile import PredictionSet

EDGE_HEADER = ("src", "dst", "time")
LABEL_HEADER = ("node", "time", "label")
SET_HEADER = ("node", "time", "admitted_classes", "threshold")
TRACE_HEADER = ("epoch", "loss", "val_coverage", "val_set_size")
WEIGHT_HEADER = ("rank", "logit", "weight")


def fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def read_rows(path, header: Sequence[str] | None = None, *, prefix: bool = False):
    """Body rows of a CSV file.  ``header`` is checked exactly, or as a prefix."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    rows = [r for r in csv.reader(io.StringIO(text))]
    if not rows:
        raise ParseError(f"{path}: empty file", 1)
    head = tuple(h.strip() for h in rows[0])
    if header is not None:
        ok = head[: len(header)] == tuple(header) if prefix else head == tuple(header)
        if not ok:
            raise ParseError(f"{path}: expected header {','.join(header)}, got {','.join(head)}", 1)
    body = [r for r in rows[1:] if r and any(cell.strip() for cell in r)]
    return head, body


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_graph(edges_path, labels_path, num_classes: int | None = None) -> TemporalGraph:
    _, edges = read_rows(edges_path, EDGE_HEADER)
    _, labels = read_rows(labels_path, LABEL_HEADER)
    return load_graph(edges, labels, num_classes, first_line=2)


def read_probabilities(path, num_classes: int | None = None) -> ProbabilityTable:
    head, body = read_rows(path, ("node", "time"), prefix=True)
    return load_probabilities(body, num_classes, first_line=2)


def write_graph(g: TemporalGraph, edges_path, labels_path):
    write_rows(edges_path, EDGE_HEADER, g.edges)
    ordered = sorted(g.labels.items(), key=lambda kv: (kv[0].time, kv[0].node))
    write_rows(labels_path, LABEL_HEADER, ((v.node, v.time, c) for v, c in ordered))


def write_probabilities(p: ProbabilityTable, path):
    header = ("node", "time") + tuple(f"p{k}" for k in range(p.num_classes))
    write_rows(path, header, ((v.node, v.time, *map(float, row)) for v, row in zip(p.ids, p.values)))


def write_sets(sets: Iterable[PredictionSet], path):
    write_rows(
        path,
        SET_HEADER,
        (
            (s.node.node, s.node.time, "|".join(map(str, sorted(s.admitted))), float(s.quantile_used))
            for s in sets
        ),
    )


def read_sets(path) -> list[PredictionSet]:
    _, body = read_rows(path, SET_HEADER)
    out = []
    for i, rec in enumerate(body):
        line = i + 2
        if len(rec) != 4:
            raise ParseError(f"expected 4 fields, got {len(rec)}", line)
        try:
            node = TemporalNodeId(int(rec[0]), int(rec[1]))
            cells = rec[2].strip()
            admitted = frozenset(int(c) for c in cells.split("|")) if cells else frozenset()
            threshold = float(rec[3])
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        out.append(PredictionSet(node, admitted, threshold))
    return out
