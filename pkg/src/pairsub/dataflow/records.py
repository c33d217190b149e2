"""Fixed-width binary records and on-disk sharded collections.

Shard layout: a 16-byte header (magic ``PSHD``, u16 format version, u16
schema id, u64 record count, all little-endian) followed by packed records.
The first field of every schema is its sort key.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PSHD"
VERSION = 1
HEADER = struct.Struct("<4sHHQ")
assert HEADER.size == 16


class DataflowError(Exception):
    pass


SCHEMAS: dict[int, np.dtype] = {
    1: np.dtype([("id", "<u8")]),
    2: np.dtype([("id", "<u8"), ("value", "<f8")]),
    3: np.dtype([("key", "<u8"), ("src", "<u8"), ("sim", "<f8")]),
    4: np.dtype([("node", "<u8"), ("neighbor", "<u8"), ("sim", "<f8")]),
    5: np.dtype([("key", "<u8"), ("src", "<u8"), ("sim", "<f8"), ("flag", "<u8")]),
    6: np.dtype([("id", "<u8"), ("flag", "<u8")]),
    7: np.dtype([("value", "<f8"), ("id", "<u8")]),
}
IDS, NODE_VALUE, TRIPLE, ADJ, EDGE4, STATUS, VALUE_ID = 1, 2, 3, 4, 5, 6, 7


def schema_dtype(schema: int) -> np.dtype:
    try:
        return SCHEMAS[schema]
    except KeyError:
        raise DataflowError(f"unknown schema id {schema}") from None


def key_field(schema: int) -> str:
    return schema_dtype(schema).names[0]


def sort_order(arr: np.ndarray) -> np.ndarray:
    """Stable order by all fields, first field most significant."""
    if len(arr) == 0:
        return np.empty(0, dtype=np.int64)
    names = arr.dtype.names
    if len(names) > 2:
        # the leading pair is almost always unique; fall back only on ties
        order = np.lexsort((arr[names[1]], arr[names[0]]))
        a, b = arr[names[0]][order], arr[names[1]][order]
        if not np.any((a[1:] == a[:-1]) & (b[1:] == b[:-1])):
            return order
    return np.lexsort(tuple(arr[name] for name in reversed(names)))


def read_header(path: Path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise DataflowError(f"{path}: truncated header")
    magic, version, schema, count = HEADER.unpack(raw)
    if magic != MAGIC or version != VERSION:
        raise DataflowError(f"{path}: not a shard file")
    return schema, count


@dataclass
class ShardedCollection:
    name: str
    schema: int
    shards: list[Path] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    sorted: bool = False

    @property
    def dtype(self) -> np.dtype:
        return schema_dtype(self.schema)

    @property
    def count(self) -> int:
        return sum(self.counts)

    @property
    def nbytes(self) -> int:
        return self.count * self.dtype.itemsize

    def read_shard(self, i: int, offset: int = 0, count: int = -1) -> np.ndarray:
        size = self.dtype.itemsize
        if count < 0:
            count = self.counts[i] - offset
        return np.fromfile(self.shards[i], dtype=self.dtype, count=count,
                           offset=HEADER.size + offset * size)

    def read_all(self) -> np.ndarray:
        """Whole collection in memory; tests and small inputs only."""
        if not self.shards:
            return np.empty(0, dtype=self.dtype)
        return np.concatenate([self.read_shard(i) for i in range(len(self.shards))])


class ShardWriter:
    """Append records to a collection, rolling to a new shard every
    ``shard_records`` records. For sorted output a shard is only cut where
    the key changes, which keeps shard key ranges disjoint."""

    def __init__(self, directory: Path, name: str, schema: int, shard_records: int, sorted: bool):
        self.dir = Path(directory) / name
        self.dir.mkdir(parents=True, exist_ok=True)
        for old in self.dir.glob("*.bin"):
            old.unlink()
        self.coll = ShardedCollection(name, schema, sorted=sorted)
        self.shard_records = max(1, shard_records)
        self._fh = None
        self._last_key = None
        self._shard_last_key = None

    def _open(self):
        path = self.dir / f"{len(self.coll.shards):05d}.bin"
        self._fh = open(path, "wb")
        self._fh.write(HEADER.pack(MAGIC, VERSION, self.coll.schema, 0))
        self.coll.shards.append(path)
        self.coll.counts.append(0)

    def _close_shard(self):
        if self._fh is None:
            return
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, VERSION, self.coll.schema, self.coll.counts[-1]))
        self._fh.close()
        self._fh = None

    def write(self, arr: np.ndarray) -> None:
        if len(arr) == 0:
            return
        if arr.dtype != self.coll.dtype:
            raise DataflowError(f"record dtype {arr.dtype} does not match schema {self.coll.schema}")
        if self.coll.sorted:
            keys = arr[key_field(self.coll.schema)]
            if np.any(keys[1:] < keys[:-1]) or (self._last_key is not None and keys[0] < self._last_key):
                raise DataflowError(f"{self.coll.name}: writing unsorted records to a sorted collection")
            self._last_key = keys[-1]
        while len(arr):
            if self._fh is None:
                self._open()
            room = self.shard_records - self.coll.counts[-1]
            take = len(arr) if room >= len(arr) else self._cut(arr, max(room, 0))
            if take == 0:
                self._close_shard()
                continue
            arr[:take].tofile(self._fh)
            self.coll.counts[-1] += take
            if self.coll.sorted:
                self._shard_last_key = arr[key_field(self.coll.schema)][take - 1]
            arr = arr[take:]
            # sorted shards close lazily: the next record may continue this key group
            if not self.coll.sorted and self.coll.counts[-1] >= self.shard_records:
                self._close_shard()

    def _cut(self, arr, room):
        if not self.coll.sorted:
            return room
        keys = arr[key_field(self.coll.schema)]
        starts = np.flatnonzero(keys[1:] != keys[:-1]) + 1
        if self.coll.counts[-1] and keys[0] != self._shard_last_key:
            starts = np.concatenate(([0], starts))
        ok = starts[starts <= room]
        if len(ok):
            return int(ok[-1])
        # no key change fits: let the shard run to the end of the current group
        return int(starts[0]) if len(starts) else len(arr)

    def close(self) -> ShardedCollection:
        if not self.coll.shards:
            self._open()  # empty collections still carry their schema on disk
        self._close_shard()
        return self.coll


def load_collection(directory: Path, name: str, is_sorted: bool) -> ShardedCollection:
    shards = sorted((Path(directory) / name).glob("*.bin"))
    if not shards:
        raise DataflowError(f"collection {name} has no shards under {directory}")
    schemas, counts = zip(*(read_header(path) for path in shards))
    if len(set(schemas)) != 1:
        raise DataflowError(f"collection {name} mixes schemas {sorted(set(schemas))}")
    return ShardedCollection(name, schemas[0], list(shards), list(counts), is_sorted)
