"""Timestamp-versioned maps with strict-floor lookup and spill-to-disk.

Each key owns a version chain ``[(ts, value), ...]`` kept sorted by ts.
``floor_lookup(k, t)`` returns the value of the greatest version strictly
below ``t``. ``spill_below(t)`` moves versions with ``ts <= t`` into an
append-only segment file; lookups reload the relevant per-key block from
disk when the in-memory chain cannot answer on its own.

Segment layout: for every key (sorted), its records back to back, each
``<u32 len><payload>`` with ``payload = <u16 klen><key><u64 ts><value>``.
The in-memory index keeps, per segment and key, the byte offset, record
count and ts range of the key's block.
"""

from __future__ import annotations

import bisect
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Generic, Optional, TypeVar

V = TypeVar("V")

_LEN = struct.Struct(">I")
_KLEN = struct.Struct(">H")
_TS = struct.Struct(">Q")
_I64 = struct.Struct(">q")


class SpillError(IOError):
    """A spill segment could not be written or read back."""


class Codec(Generic[V]):
    def encode(self, value: V) -> bytes:
        raise NotImplementedError

    def decode(self, data: bytes) -> V:
        raise NotImplementedError


class ValueCodec(Codec[Optional[int]]):
    """Integer payload or the initial sentinel (``None``)."""

    def encode(self, value):
        if value is None:
            return b"\x00"
        return b"\x01" + _I64.pack(value)

    def decode(self, data):
        if data[:1] == b"\x00" and len(data) == 1:
            return None
        if data[:1] == b"\x01" and len(data) == 9:
            return _I64.unpack(data[1:])[0]
        raise ValueError(f"bad value encoding {data!r}")


class TidSetCodec(Codec[frozenset]):
    def encode(self, value):
        tids = sorted(value)
        return _LEN.pack(len(tids)) + b"".join(_TS.pack(t) for t in tids)

    def decode(self, data):
        (n,) = _LEN.unpack_from(data)
        if len(data) != 4 + 8 * n:
            raise ValueError("bad tid-set encoding")
        return frozenset(struct.unpack_from(f">{n}Q", data, 4))


@dataclass
class _KeyBlock:
    offset: int
    count: int
    min_ts: int
    max_ts: int


@dataclass
class Segment:
    seq: int
    path: Path
    low: int
    high: int
    threshold: int
    blocks: dict[str, _KeyBlock]


class VersionedMap(Generic[V]):
    """Per-key version chains with strict-floor lookup and disk spill."""

    def __init__(self, initial: V, codec: Codec[V], spill_dir=None, cache_size: int = 4096):
        self.initial = initial
        self.codec = codec
        self._ts: dict[str, list[int]] = {}
        self._vals: dict[str, list[V]] = {}
        self._spill_dir = Path(spill_dir) if spill_dir is not None else None
        self._segments: list[Segment] = []
        self._spilled_keys: dict[str, list[Segment]] = {}
        self._spilled_max: dict[str, int] = {}
        self._cache: OrderedDict[tuple[int, str], tuple[list[int], list[V]]] = OrderedDict()
        self._cache_size = cache_size
        self.spill_threshold = -1
        self.reloads = 0

    # -- basic chain operations ---------------------------------------------

    def insert_version(self, key: str, ts: int, value: V) -> None:
        """Add (or replace) the version of ``key`` at ``ts``."""
        tss = self._ts.get(key)
        if tss is None:
            self._ts[key] = [ts]
            self._vals[key] = [value]
            return
        vals = self._vals[key]
        if tss[-1] < ts:
            tss.append(ts)
            vals.append(value)
            return
        i = bisect.bisect_left(tss, ts)
        if tss[i] == ts:
            vals[i] = value
        else:
            tss.insert(i, ts)
            vals.insert(i, value)

    def floor_entry(self, key: str, ts: int) -> Optional[tuple[int, V]]:
        """Greatest version ``(vts, value)`` of ``key`` with ``vts < ts``."""
        mem = None
        tss = self._ts.get(key)
        if tss:
            i = bisect.bisect_left(tss, ts)
            if i:
                mem = (tss[i - 1], self._vals[key][i - 1])
        segs = self._spilled_keys.get(key)
        if not segs or (mem is not None and mem[0] >= self._spilled_max[key]):
            return mem
        best = self._spilled_floor(key, ts, segs, above=-1 if mem is None else mem[0])
        return mem if best is None else best

    def floor_lookup(self, key: str, ts: int) -> V:
        entry = self.floor_entry(key, ts)
        return self.initial if entry is None else entry[1]

    def versions(self, key: str) -> list[tuple[int, V]]:
        """Every version of ``key`` (spilled ones included), oldest first."""
        merged: dict[int, V] = {}
        for seg in self._spilled_keys.get(key, ()):  # oldest segment first
            tss, vals = self._load_block(seg, key)
            merged.update(zip(tss, vals))
        merged.update(zip(self._ts.get(key, ()), self._vals.get(key, ())))
        return sorted(merged.items())

    def keys(self) -> set[str]:
        return set(self._ts) | set(self._spilled_keys)

    @property
    def resident_versions(self) -> int:
        return sum(len(v) for v in self._ts.values())

    # -- spill ----------------------------------------------------------------

    def _spilled_floor(self, key, ts, segs, above):
        """Best spilled version below ``ts`` that beats an in-memory one at ``above``.

        Memory wins ties; among segments the newest wins ties. Segments are
        visited newest first; an older segment only holds versions at or
        below its spill threshold, which bounds the search.
        """
        best_ts, best_seg = above, None
        for seg in reversed(segs):
            if seg.threshold <= best_ts:
                break
            blk = seg.blocks[key]
            if blk.min_ts >= ts or blk.max_ts <= best_ts:
                continue
            if blk.max_ts < ts:
                cand = blk.max_ts
            else:
                tss, _ = self._load_block(seg, key)
                cand = tss[bisect.bisect_left(tss, ts) - 1]
            if cand > best_ts:
                best_ts, best_seg = cand, seg
        if best_seg is None:
            return None
        tss, vals = self._load_block(best_seg, key)
        return best_ts, vals[bisect.bisect_left(tss, best_ts)]

    def _dir(self) -> Path:
        if self._spill_dir is None:
            self._spill_dir = Path(tempfile.mkdtemp(prefix="isoguard-spill-"))
        self._spill_dir.mkdir(parents=True, exist_ok=True)
        return self._spill_dir

    def spill_below(self, ts: int) -> Optional[Path]:
        """Move versions with timestamp ``<= ts`` to a new segment file."""
        moved: dict[str, tuple[list[int], list[V]]] = {}
        for key in sorted(self._ts):
            tss = self._ts[key]
            i = bisect.bisect_right(tss, ts)
            if not i:
                continue
            vals = self._vals[key]
            moved[key] = (tss[:i], vals[:i])
            if i == len(tss):
                del self._ts[key], self._vals[key]
            else:
                del tss[:i], vals[:i]
        self.spill_threshold = max(self.spill_threshold, ts)
        if not moved:
            return None
        low = min(t[0][0] for t in moved.values())
        high = max(t[0][-1] for t in moved.values())
        seq = len(self._segments)
        directory = self._dir()
        path = directory / f"spill-{low}-{high}.seg"
        if path.exists():
            path = directory / f"spill-{low}-{high}.{seq}.seg"
        blocks: dict[str, _KeyBlock] = {}
        try:
            with open(path, "wb") as fh:
                offset = 0
                for key, (tss, vals) in moved.items():
                    kb = key.encode("utf-8")
                    chunk = bytearray()
                    for t, v in zip(tss, vals):
                        payload = _KLEN.pack(len(kb)) + kb + _TS.pack(t) + self.codec.encode(v)
                        chunk += _LEN.pack(len(payload)) + payload
                    fh.write(chunk)
                    blocks[key] = _KeyBlock(offset, len(tss), tss[0], tss[-1])
                    offset += len(chunk)
        except OSError as exc:
            raise SpillError(f"cannot write spill segment {path}: {exc}") from exc
        seg = Segment(seq, path, low, high, self.spill_threshold, blocks)
        self._segments.append(seg)
        for key, blk in blocks.items():
            self._spilled_keys.setdefault(key, []).append(seg)
            self._spilled_max[key] = max(self._spilled_max.get(key, -1), blk.max_ts)
        return path

    def _load_block(self, seg: Segment, key: str) -> tuple[list[int], list[V]]:
        ck = (seg.seq, key)
        hit = self._cache.get(ck)
        if hit is not None:
            self._cache.move_to_end(ck)
            return hit
        blk = seg.blocks[key]
        self.reloads += 1
        tss: list[int] = []
        vals: list[V] = []
        try:
            with open(seg.path, "rb") as fh:
                fh.seek(blk.offset)
                for _ in range(blk.count):
                    (n,) = _LEN.unpack(fh.read(4))
                    payload = fh.read(n)
                    (klen,) = _KLEN.unpack_from(payload)
                    rkey = payload[2:2 + klen].decode("utf-8")
                    if rkey != key or len(payload) < 2 + klen + 8:
                        raise ValueError(f"record for {rkey!r} in block of {key!r}")
                    (t,) = _TS.unpack_from(payload, 2 + klen)
                    tss.append(t)
                    vals.append(self.codec.decode(payload[2 + klen + 8:]))
        except (OSError, ValueError, struct.error, UnicodeDecodeError) as exc:
            raise SpillError(f"corrupt spill segment {seg.path}: {exc}") from exc
        self._cache[ck] = (tss, vals)
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return tss, vals

    @property
    def segments(self) -> list[Segment]:
        return list(self._segments)
