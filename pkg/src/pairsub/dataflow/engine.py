"""Sharded sort-merge executor running under an explicit memory budget.

Every record buffer the engine holds is registered with a
:class:`MemoryBudget`; an allocation that would exceed the budget raises
:class:`BudgetExceeded` naming the stage. Operations size their buffers from
the budget so that a well-formed pipeline never trips it, and the peak is
observable afterwards.
"""

from __future__ import annotations

import contextlib
import itertools
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .records import (
    DataflowError,
    ShardedCollection,
    ShardWriter,
    key_field,
    load_collection,
    schema_dtype,
    sort_order,
)

# bytes charged per buffered record on top of the record itself (sort
# permutations, join index arrays)
INDEX_OVERHEAD = 8
MERGE_SHARE = 0.45
MIN_RUN_BUFFER = 256


class BudgetExceeded(DataflowError):
    def __init__(self, stage, requested, current, limit):
        self.stage = stage
        super().__init__(f"stage {stage!r}: {requested} bytes requested with {current} "
                         f"resident exceeds budget of {limit} bytes")


class MemoryBudget:
    def __init__(self, max_resident_bytes: int):
        if max_resident_bytes <= 0:
            raise ValueError("memory budget must be positive")
        self.max_resident_bytes = int(max_resident_bytes)
        self.current = 0
        self.peak = 0

    @contextlib.contextmanager
    def hold(self, nbytes: int, stage: str):
        nbytes = int(nbytes)
        if self.current + nbytes > self.max_resident_bytes:
            raise BudgetExceeded(stage, nbytes, self.current, self.max_resident_bytes)
        self.current += nbytes
        self.peak = max(self.peak, self.current)
        try:
            yield
        finally:
            self.current -= nbytes

    def reset_peak(self):
        self.peak = self.current


class _Cursor:
    """Sequential reader over all shards of a collection."""

    def __init__(self, coll: ShardedCollection):
        self.coll = coll
        self.shard = 0
        self.offset = 0

    @property
    def done(self) -> bool:
        return self.shard >= len(self.coll.counts)

    def read(self, n: int) -> np.ndarray:
        parts = []
        while n > 0 and not self.done:
            avail = self.coll.counts[self.shard] - self.offset
            take = min(n, avail)
            if take:
                parts.append(self.coll.read_shard(self.shard, self.offset, take))
            self.offset += take
            n -= take
            if self.offset >= self.coll.counts[self.shard]:
                self.shard += 1
                self.offset = 0
        if not parts:
            return np.empty(0, dtype=self.coll.dtype)
        return parts[0] if len(parts) == 1 else np.concatenate(parts)


def _charge(arr_len: int, dtype: np.dtype) -> int:
    return arr_len * (dtype.itemsize + INDEX_OVERHEAD)


class Engine:
    """Owns a run directory, a memory budget and a worker count.

    Collections live under ``<run>/<name>/<shard>.bin`` and are listed in
    ``<run>/MANIFEST`` (tab separated: name, shard count, record count,
    sorted flag).
    """

    def __init__(self, run_dir, budget: MemoryBudget | int, workers: int = 1, shard_records: int = 1 << 16):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.budget = budget if isinstance(budget, MemoryBudget) else MemoryBudget(budget)
        self.workers = max(1, int(workers))
        self.shard_records = int(shard_records)
        self._names = itertools.count()
        self._manifest: dict[str, ShardedCollection] = {}

    # -- collection bookkeeping -------------------------------------------------

    def temp_name(self, prefix: str) -> str:
        return f"{prefix}-{next(self._names):05d}"

    def writer(self, name: str, schema: int, sorted: bool) -> ShardWriter:
        return ShardWriter(self.run_dir, name, schema, self.shard_records, sorted)

    def register(self, coll: ShardedCollection) -> ShardedCollection:
        self._manifest[coll.name] = coll
        self._write_manifest()
        return coll

    def _write_manifest(self):
        lines = [f"{c.name}\t{len(c.shards)}\t{c.count}\t{int(c.sorted)}\n"
                 for c in sorted(self._manifest.values(), key=lambda c: c.name)]
        (self.run_dir / "MANIFEST").write_text("".join(lines))

    def load(self, name: str) -> ShardedCollection:
        for line in (self.run_dir / "MANIFEST").read_text().splitlines():
            cname, _, _, flag = line.split("\t")
            if cname == name:
                return self.register(load_collection(self.run_dir, name, flag == "1"))
        raise DataflowError(f"collection {name} not in manifest")

    def drop(self, *colls: ShardedCollection) -> None:
        for coll in colls:
            if coll is None:
                continue
            shutil.rmtree(self.run_dir / coll.name, ignore_errors=True)
            self._manifest.pop(coll.name, None)
        self._write_manifest()

    def rename(self, coll: ShardedCollection, name: str) -> ShardedCollection:
        if coll.name == name:
            return coll
        target = self.run_dir / name
        shutil.rmtree(target, ignore_errors=True)
        self._manifest.pop(name, None)
        (self.run_dir / coll.name).rename(target)
        self._manifest.pop(coll.name, None)
        shards = [target / p.name for p in coll.shards]
        return self.register(ShardedCollection(name, coll.schema, shards, list(coll.counts), coll.sorted))

    def from_array(self, name: str, schema: int, arr: np.ndarray, sorted: bool = False) -> ShardedCollection:
        """Ingest in-memory records (callers own the memory of ``arr``)."""
        w = self.writer(name, schema, sorted)
        dtype = schema_dtype(schema)
        step = self.shard_records
        for start in range(0, len(arr), step):
            w.write(np.ascontiguousarray(arr[start:start + step]).astype(dtype, copy=False))
        return self.register(w.close())

    # -- streaming -------------------------------------------------------------

    def chunk_records(self, dtype: np.dtype, share: float = 1.0) -> int:
        return max(1, int(self.budget.max_resident_bytes * share) // (dtype.itemsize + INDEX_OVERHEAD))

    def chunks(self, coll: ShardedCollection, max_records: int, stage: str) -> Iterator[np.ndarray]:
        """Consecutive slices of the collection, each charged to the budget while alive."""
        for i, n in enumerate(coll.counts):
            for off in range(0, n, max_records):
                cnt = min(max_records, n - off)
                with self.budget.hold(_charge(cnt, coll.dtype), stage):
                    yield coll.read_shard(i, off, cnt)

    def groups(self, coll: ShardedCollection, max_records: int, stage: str) -> Iterator[np.ndarray]:
        """Chunks of a key-sorted collection that never split a key group.

        Charges three chunk sizes while a piece is alive: the chunk, the
        concatenation with the carried-over group and the carry itself.
        """
        if not coll.sorted:
            raise DataflowError(f"{stage}: collection {coll.name} is not sorted")
        key = key_field(coll.schema)
        carry = np.empty(0, dtype=coll.dtype)
        last = None
        for chunk in self.chunks(coll, max_records, stage):
            keys = chunk[key]
            if np.any(keys[1:] < keys[:-1]) or (last is not None and len(keys) and keys[0] < last):
                raise DataflowError(f"{stage}: collection {coll.name} is not key-sorted")
            last = keys[-1] if len(keys) else last
            with self.budget.hold(2 * _charge(len(carry) + len(chunk), coll.dtype), stage):
                buf = np.concatenate([carry, chunk]) if len(carry) else chunk
                bkeys = buf[key]
                cut = int(np.searchsorted(bkeys, bkeys[-1], side="left"))
                carry = buf[cut:].copy()
                if cut:
                    yield buf[:cut]
                del buf
        if len(carry):
            with self.budget.hold(_charge(len(carry), coll.dtype), stage):
                yield carry

    def cogroup(self, left: ShardedCollection, right: ShardedCollection, stage: str,
                share: float = 1.0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Aligned pieces of two key-sorted collections.

        Each yielded pair contains every record of both sides for the keys it
        covers, so joins and grouped reductions can be evaluated per pair.
        """
        lkey, rkey = key_field(left.schema), key_field(right.schema)
        # per side: chunk + 2x(concat, carry) from groups(), plus the yielded
        # slices; the remainder is left for the consumer's output
        lmax = self.chunk_records(left.dtype, share / 10)
        rmax = self.chunk_records(right.dtype, share / 10)
        lit = self.groups(left, lmax, stage)
        rit = self.groups(right, rmax, stage)
        lbuf = next(lit, None)
        rbuf = next(rit, None)
        empty_l = np.empty(0, dtype=left.dtype)
        empty_r = np.empty(0, dtype=right.dtype)
        while lbuf is not None or rbuf is not None:
            if lbuf is None:
                yield empty_l, rbuf
                rbuf = next(rit, None)
                continue
            if rbuf is None:
                yield lbuf, empty_r
                lbuf = next(lit, None)
                continue
            bound = min(lbuf[lkey][-1], rbuf[rkey][-1])
            lcut = int(np.searchsorted(lbuf[lkey], bound, side="right"))
            rcut = int(np.searchsorted(rbuf[rkey], bound, side="right"))
            with self.budget.hold(_charge(lcut, left.dtype) + _charge(rcut, right.dtype), stage):
                yield lbuf[:lcut], rbuf[:rcut]
            lbuf = lbuf[lcut:] if lcut < len(lbuf) else next(lit, None)
            rbuf = rbuf[rcut:] if rcut < len(rbuf) else next(rit, None)

    # -- sorting -----------------------------------------------------------------

    def external_sort(self, coll: ShardedCollection, name: str | None = None, stage: str = "sort",
                      drop_input: bool = False) -> ShardedCollection:
        """Sort by all fields (key first) via sorted runs and a k-way merge."""
        name = name or self.temp_name("sorted")
        dtype = coll.dtype
        run_records = self.chunk_records(dtype, 0.4 / self.workers)
        tasks = [(i, off, min(run_records, n - off))
                 for i, n in enumerate(coll.counts) for off in range(0, n, run_records)]

        def make_run(t):
            idx, (i, off, cnt) = t
            with self.budget.hold(2 * _charge(cnt, dtype), stage):
                arr = coll.read_shard(i, off, cnt)
                arr = arr[sort_order(arr)]
                w = ShardWriter(self.run_dir, f"{name}.run{idx:05d}", coll.schema, max(cnt, 1), False)
                w.write(arr)
                return w.close()

        if self.workers > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                runs = list(pool.map(make_run, enumerate(tasks)))
        else:
            runs = [make_run(t) for t in enumerate(tasks)]
        out = self._merge_runs(runs, name, coll.schema, stage)
        for r in runs:
            shutil.rmtree(self.run_dir / r.name, ignore_errors=True)
        if drop_input:
            self.drop(coll)
        return self.register(out)

    def _merge_runs(self, runs, name, schema, stage) -> ShardedCollection:
        dtype = schema_dtype(schema)
        fan_in = max(2, self.chunk_records(dtype, MERGE_SHARE) // MIN_RUN_BUFFER)
        level = 0
        while len(runs) > fan_in:
            merged = []
            for j in range(0, len(runs), fan_in):
                part = self._merge_group(runs[j:j + fan_in], f"{name}.m{level}-{j:05d}", schema, stage, False)
                merged.append(part)
            for r in runs:
                shutil.rmtree(self.run_dir / r.name, ignore_errors=True)
            runs = merged
            level += 1
        return self._merge_group(runs, name, schema, stage, True)

    def _merge_group(self, runs, name, schema, stage, final) -> ShardedCollection:
        dtype = schema_dtype(schema)
        w = ShardWriter(self.run_dir, name, schema, self.shard_records if final else 1 << 62, True)
        if not runs:
            return w.close()
        # one hold for the whole merge: run buffers plus the merge window
        cap = max(1, self.chunk_records(dtype, MERGE_SHARE) // len(runs))
        with self.budget.hold(2 * _charge(cap * len(runs), dtype), stage):
            cursors = [_Cursor(r) for r in runs]
            bufs = [c.read(cap) for c in cursors]
            while any(len(b) for b in bufs):
                live = [i for i, b in enumerate(bufs) if len(b)]
                window = np.concatenate([bufs[i] for i in live])
                order = sort_order(window)
                rank = np.empty(len(window), dtype=np.int64)
                rank[order] = np.arange(len(window))
                ends = np.cumsum([len(bufs[i]) for i in live])
                # rows at or below the smallest tail of a run with unread data are final
                open_tails = [ends[j] - 1 for j, i in enumerate(live) if not cursors[i].done]
                limit = int(rank[open_tails].min()) if open_tails else len(window) - 1
                w.write(window[order[: limit + 1]])
                start = 0
                for j, i in enumerate(live):
                    part = rank[start:ends[j]]
                    rest = bufs[i][part > limit]
                    bufs[i] = np.concatenate([rest, cursors[i].read(cap - len(rest))])
                    start = ends[j]
        return w.close()

    # -- joins -----------------------------------------------------------------

    def merge_join(self, left: ShardedCollection, right: ShardedCollection, kind: str,
                   out_name: str, out_schema: int, combine: Callable, out_sorted: bool = False,
                   stage: str = "join") -> ShardedCollection:
        """Sort-merge join of two key-sorted collections.

        ``kind`` is ``inner``, ``left`` (left outer), ``exists`` or
        ``not_exists`` (semi/anti join on the left). ``combine(l, r, present)``
        builds output records from aligned left rows, right rows and a mask
        of rows that found a partner; for semi/anti joins it receives the
        filtered left rows only.
        """
        if kind not in ("inner", "left", "exists", "not_exists"):
            raise ValueError(f"unknown join kind {kind}")
        for c in (left, right):
            if not c.sorted:
                raise DataflowError(f"{stage}: merge_join needs key-sorted input, {c.name} is not")
        lkey, rkey = key_field(left.schema), key_field(right.schema)
        w = self.writer(out_name, out_schema, out_sorted)
        for lpart, rpart in self.cogroup(left, right, stage):
            if not len(lpart):
                continue
            lk, rk = lpart[lkey], rpart[rkey]
            lo = np.searchsorted(rk, lk, side="left")
            hi = np.searchsorted(rk, lk, side="right")
            counts = hi - lo
            if kind in ("exists", "not_exists"):
                keep = counts > 0 if kind == "exists" else counts == 0
                rows = lpart[keep]
                out = combine(rows, None, None) if combine else rows
            else:
                reps = counts if kind == "inner" else np.maximum(counts, 1)
                self._emit_pairs(w, lpart, rpart, lo, reps, counts > 0, combine, out_schema, stage)
                continue
            w.write(out)
        return self.register(w.close())

    def _emit_pairs(self, w, lpart, rpart, lo, reps, matched, combine, out_schema, stage):
        """Expand matched row pairs in blocks so many-to-many keys stay within budget."""
        odt = schema_dtype(out_schema)
        per_pair = _charge(1, lpart.dtype) + _charge(1, rpart.dtype) + _charge(1, odt)
        limit = max(1, int(self.budget.max_resident_bytes * 0.2) // per_pair)
        ends = np.cumsum(reps)
        start = 0
        while start < len(lpart):
            base = ends[start - 1] if start else 0
            # at least one left row per block; a single row emits its whole key group
            stop = max(start + 1, int(np.searchsorted(ends, base + limit, side="right")))
            r = reps[start:stop]
            n = int(r.sum())
            if n:
                with self.budget.hold(n * per_pair, stage):
                    li = np.repeat(np.arange(start, stop), r)
                    first = np.repeat(np.cumsum(r) - r, r)
                    present = np.repeat(matched[start:stop], r)
                    ri = np.where(present, np.repeat(lo[start:stop], r) + (np.arange(n) - first), 0)
                    rrows = rpart[ri] if len(rpart) else np.zeros(n, dtype=rpart.dtype)
                    w.write(combine(lpart[li], rrows, present))
            start = stop

    def map(self, coll: ShardedCollection, fn: Callable, out_name: str, out_schema: int,
            out_sorted: bool = False, stage: str = "map") -> ShardedCollection:
        """Apply ``fn(chunk, shard_index, offset)`` shard-parallel.

        ``fn`` must be record-wise (each output row depends on one input row;
        ``offset`` locates the chunk for error messages). Chunk sizes depend
        on the worker count, so only record-wise maps give identical output
        for every worker count.
        """
        dtype = coll.dtype
        per = self.chunk_records(dtype, 0.4 / self.workers)
        tasks = [(i, off, min(per, n - off)) for i, n in enumerate(coll.counts) for off in range(0, n, per)]

        def run(t):
            i, off, cnt = t
            with self.budget.hold(2 * _charge(cnt, dtype), stage):
                return fn(coll.read_shard(i, off, cnt), i, off)

        w = self.writer(out_name, out_schema, out_sorted)
        if self.workers > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                for start in range(0, len(tasks), self.workers):
                    for out in pool.map(run, tasks[start:start + self.workers]):
                        w.write(out)
        else:
            for t in tasks:
                w.write(run(t))
        return self.register(w.close())
