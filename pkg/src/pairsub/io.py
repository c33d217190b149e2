"""Text and binary file formats.

* ``utilities.tsv``: header ``id<TAB>utility``, one node per row.
* ``graph.tsv``: header ``id<TAB>neighbor_id<TAB>similarity``, one edge
  direction per row (a symmetric graph lists every edge twice).
* ``solution.txt``: sorted ids, one per line, no header.
* embeddings / predictions: ``.npz`` with arrays ``ids`` and ``vectors`` (or
  ``probs``), or TSV with header ``id<TAB>c0<TAB>c1...``.

Reals are written with ``repr`` so that text files round-trip bit-exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np

from .core import ID_DTYPE, NeighborGraph, PairsubError, Solution, UtilityTable
from .graph_prep import EmbeddingMatrix, PredictionTable

UTILITY_HEADER = ("id", "utility")
GRAPH_HEADER = ("id", "neighbor_id", "similarity")


class DataFormatError(PairsubError, ValueError):
    def __init__(self, path, line, msg):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")


def _parse_id(text, path, line):
    try:
        v = int(text)
    except ValueError:
        raise DataFormatError(path, line, f"bad node id {text!r}") from None
    if not 0 <= v < 1 << 64:
        raise DataFormatError(path, line, f"node id {v} outside the unsigned 64-bit range")
    return v


def _parse_real(text, path, line):
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(path, line, f"bad number {text!r}") from None
    if not np.isfinite(v):
        raise DataFormatError(path, line, f"non-finite number {text!r}")
    return v


def iter_tsv(path, header: tuple[str, ...], kinds: str, chunk: int = 1 << 16) -> Iterator[list[np.ndarray]]:
    """Stream a headed TSV as column arrays; ``kinds`` has one letter per
    column, ``i`` for ids and ``f`` for reals. Errors carry the line number."""
    path = Path(path)
    if len(kinds) != len(header):
        raise ValueError("one kind per column required")
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot open: {exc.strerror}") from None
    with fh:
        first = fh.readline().rstrip("\n").split("\t")
        if tuple(first) != header:
            raise DataFormatError(path, 1, f"expected header {'/'.join(header)}, got {'/'.join(first)}")
        cols = [[] for _ in kinds]
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.rstrip("\n")
            if not raw:
                continue
            parts = raw.split("\t")
            if len(parts) != len(kinds):
                raise DataFormatError(path, lineno, f"expected {len(kinds)} columns, got {len(parts)}")
            for col, kind, text in zip(cols, kinds, parts):
                col.append(_parse_id(text, path, lineno) if kind == "i" else _parse_real(text, path, lineno))
            if len(cols[0]) >= chunk:
                yield _columns(cols, kinds)
                cols = [[] for _ in kinds]
        if cols[0]:
            yield _columns(cols, kinds)


def _columns(cols, kinds):
    return [np.array(c, dtype=ID_DTYPE if k == "i" else np.float64) for c, k in zip(cols, kinds)]


def _read_all(path, header, kinds):
    parts = list(iter_tsv(path, header, kinds))
    if not parts:
        return [np.empty(0, dtype=ID_DTYPE if k == "i" else np.float64) for k in kinds]
    return [np.concatenate(cols) for cols in zip(*parts)]


def _write_rows(path, header, columns, kinds):
    fmt = [str if k == "i" else float.__repr__ for k in kinds]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        lists = [c.tolist() for c in columns]
        fh.writelines("\t".join(f(v) for f, v in zip(fmt, row)) + "\n" for row in zip(*lists))


# -- utilities and graphs ------------------------------------------------------------

def read_utilities(path) -> UtilityTable:
    ids, vals = _read_all(path, UTILITY_HEADER, "if")
    if len(np.unique(ids)) != len(ids):
        raise DataFormatError(path, None, "duplicate node ids")
    if np.any(vals < 0):
        raise DataFormatError(path, None, "utilities must be non-negative")
    return UtilityTable(ids, vals)


def write_utilities(path, u: UtilityTable) -> None:
    _write_rows(path, UTILITY_HEADER, [u.ids, u.values], "if")


def read_graph(path, nodes=None) -> NeighborGraph:
    """Graph from edge rows; ``nodes`` adds isolated nodes (e.g. every id
    with a utility)."""
    src, dst, sim = _read_all(path, GRAPH_HEADER, "iif")
    try:
        return NeighborGraph.from_edges(src, dst, sim, nodes=nodes)
    except ValueError as exc:
        raise DataFormatError(path, None, str(exc)) from None


def write_graph(path, g: NeighborGraph) -> None:
    src, dst, sim = g.directed_edges()
    _write_rows(path, GRAPH_HEADER, [src, dst, sim], "iif")


def read_solution(path) -> Solution:
    path = Path(path)
    ids = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if raw:
                ids.append(_parse_id(raw, path, lineno))
    if len(set(ids)) != len(ids):
        raise DataFormatError(path, None, "duplicate ids in solution")
    return Solution(np.array(ids, dtype=ID_DTYPE))


def write_solution(path, sol: Solution) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{v}\n" for v in sol.members.tolist())


# -- dense matrices ------------------------------------------------------------------

def _read_matrix(path, field):
    path = Path(path)
    if path.suffix == ".npz":
        try:
            with np.load(path) as z:
                return z["ids"], z[field]
        except (OSError, KeyError, ValueError) as exc:
            raise DataFormatError(path, None, f"expected arrays 'ids' and '{field}': {exc}") from None
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
    if len(header) < 2 or header[0] != "id":
        raise DataFormatError(path, 1, "expected header id<TAB>c0<TAB>c1...")
    cols = _read_all(path, tuple(header), "i" + "f" * (len(header) - 1))
    return cols[0], np.column_stack(cols[1:]) if len(cols[0]) else np.empty((0, len(header) - 1))


def _write_matrix(path, ids, mat, field):
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, ids=np.asarray(ids, dtype=ID_DTYPE), **{field: mat})
        return
    header = ("id",) + tuple(f"c{j}" for j in range(mat.shape[1]))
    _write_rows(path, header, [np.asarray(ids)] + [mat[:, j] for j in range(mat.shape[1])],
                "i" + "f" * mat.shape[1])


def read_embeddings(path) -> EmbeddingMatrix:
    ids, vec = _read_matrix(path, "vectors")
    try:
        return EmbeddingMatrix(ids, vec)
    except ValueError as exc:
        raise DataFormatError(path, None, str(exc)) from None


def write_embeddings(path, e: EmbeddingMatrix) -> None:
    _write_matrix(path, e.ids, e.vectors, "vectors")


def read_predictions(path) -> PredictionTable:
    ids, probs = _read_matrix(path, "probs")
    try:
        return PredictionTable(ids, probs)
    except ValueError as exc:
        raise DataFormatError(path, None, str(exc)) from None


def write_predictions(path, p: PredictionTable) -> None:
    _write_matrix(path, p.ids, p.probs, "probs")
