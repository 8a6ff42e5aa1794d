"""Append-only event store.

Records live in segment files (``seg-000000.log``, ...). Each record is
framed as::

    u32 length (little endian) | u32 crc32(body) | body

and the body is::

    f64 time | u64 sequence | u8 flags | u16 len(interface) | u16 len(instance)
    | interface | instance | payload

all little endian. A segment rolls over once it exceeds ``segment_bytes``.
``manifest.json`` lists the segments and per-key counts; the in-memory
index is rebuilt by scanning segments on open, so the manifest is advisory.

With ``path=None`` the segments are kept in memory using the same framing.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from array import array
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

_FRAME = struct.Struct("<II")
_HEAD = struct.Struct("<dQBHH")

FLAG_UNKNOWN_INSTANCE = 1


class StoreError(ValueError):
    pass


class CorruptSegment(StoreError):
    pass


@dataclass(frozen=True)
class StoredEvent:
    interface: str
    instance: str
    time: float
    sequence: int
    payload: bytes
    unknown_instance: bool = False


@dataclass(frozen=True)
class Page:
    events: list[StoredEvent]
    token: str | None


class _KeyIndex:
    __slots__ = ("times", "segments", "offsets")

    def __init__(self):
        self.times = array("d")
        self.segments = array("I")
        self.offsets = array("Q")


class EventStore:
    def __init__(self, path: str | os.PathLike | None = None, *, known_instances=None, segment_bytes: int = 64 * 1024**2):
        self.path = Path(path) if path is not None else None
        self.segment_bytes = segment_bytes
        self.known_instances = known_instances
        self._segments: list[bytearray] = []
        self._files: list = []
        self._index: dict[tuple[str, str], _KeyIndex] = {}
        self._by_interface: dict[str, list[str]] = {}
        self.count = 0
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            self._recover()

    # -- writing ---------------------------------------------------------

    def append(self, interface: str, instance: str, time: float, payload: bytes) -> int:
        key = (interface, instance)
        idx = self._index.get(key)
        if idx is None:
            idx = self._index[key] = _KeyIndex()
            self._by_interface.setdefault(interface, []).append(instance)
        elif idx.times and time < idx.times[-1]:
            raise StoreError(f"time went backwards for {interface}/{instance}")
        seq = len(idx.times) + 1
        flags = 0
        if self.known_instances is not None and instance not in self.known_instances:
            flags |= FLAG_UNKNOWN_INSTANCE
        iface_b = interface.encode()
        inst_b = instance.encode()
        body = _HEAD.pack(time, seq, flags, len(iface_b), len(inst_b)) + iface_b + inst_b + payload
        record = _FRAME.pack(len(body), zlib.crc32(body)) + body

        if not self._segments or len(self._segments[-1]) + len(record) > self.segment_bytes:
            self._roll()
        seg_no = len(self._segments) - 1
        segment = self._segments[seg_no]
        offset = len(segment)
        segment += record
        if self._files:
            self._files[-1].write(record)

        idx.times.append(time)
        idx.segments.append(seg_no)
        idx.offsets.append(offset)
        self.count += 1
        return seq

    def _roll(self) -> None:
        self._segments.append(bytearray())
        if self.path is not None:
            if self._files:
                self._files[-1].close()
            seg_path = self.path / f"seg-{len(self._segments) - 1:06d}.log"
            self._files = [open(seg_path, "ab")]

    def flush(self) -> None:
        if self._files:
            self._files[-1].flush()
        if self.path is not None:
            manifest = {
                "segments": [f"seg-{i:06d}.log" for i in range(len(self._segments))],
                "records": self.count,
                "keys": {f"{i}/{n}": len(x.times) for (i, n), x in sorted(self._index.items())},
            }
            (self.path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    def close(self) -> None:
        self.flush()
        for fh in self._files:
            fh.close()
        self._files = []

    # -- recovery --------------------------------------------------------

    def _recover(self) -> None:
        paths = sorted(self.path.glob("seg-*.log"))
        for seg_no, seg_path in enumerate(paths):
            data = bytearray(seg_path.read_bytes())
            self._segments.append(data)
            pos = 0
            while pos < len(data):
                if pos + _FRAME.size > len(data):
                    raise CorruptSegment(f"{seg_path}: truncated frame at {pos}")
                length, crc = _FRAME.unpack_from(data, pos)
                body = bytes(data[pos + _FRAME.size : pos + _FRAME.size + length])
                if len(body) != length or zlib.crc32(body) != crc:
                    raise CorruptSegment(f"{seg_path}: checksum mismatch at {pos}")
                _, _, _, li, ln = _HEAD.unpack_from(body, 0)
                iface = body[_HEAD.size : _HEAD.size + li].decode()
                inst = body[_HEAD.size + li : _HEAD.size + li + ln].decode()
                key = (iface, inst)
                idx = self._index.get(key)
                if idx is None:
                    idx = self._index[key] = _KeyIndex()
                    self._by_interface.setdefault(iface, []).append(inst)
                idx.times.append(_HEAD.unpack_from(body, 0)[0])
                idx.segments.append(seg_no)
                idx.offsets.append(pos)
                self.count += 1
                pos += _FRAME.size + length
        if paths:
            self._files = [open(paths[-1], "ab")]

    # -- reading ---------------------------------------------------------

    def _read(self, seg_no: int, offset: int) -> StoredEvent:
        segment = self._segments[seg_no]
        length, _ = _FRAME.unpack_from(segment, offset)
        start = offset + _FRAME.size
        time, seq, flags, li, ln = _HEAD.unpack_from(segment, start)
        p = start + _HEAD.size
        iface = bytes(segment[p : p + li]).decode()
        inst = bytes(segment[p + li : p + li + ln]).decode()
        payload = bytes(segment[p + li + ln : start + length])
        return StoredEvent(iface, inst, time, seq, payload, bool(flags & FLAG_UNKNOWN_INSTANCE))

    def latest(self, interface: str, instance: str) -> StoredEvent | None:
        idx = self._index.get((interface, instance))
        if idx is None or not idx.times:
            return None
        return self._read(idx.segments[-1], idx.offsets[-1])

    def sequence_count(self, interface: str, instance: str) -> int:
        idx = self._index.get((interface, instance))
        return 0 if idx is None else len(idx.times)

    def keys(self) -> list[tuple[str, str]]:
        return sorted(self._index)

    def instances(self, interface: str) -> list[str]:
        return list(self._by_interface.get(interface, ()))

    def _key_slice(self, interface: str, instance: str, start: float, end: float) -> Iterator[StoredEvent]:
        idx = self._index.get((interface, instance))
        if idx is None:
            return
        lo = bisect_left(idx.times, start)
        hi = bisect_right(idx.times, end)
        for i in range(lo, hi):
            yield self._read(idx.segments[i], idx.offsets[i])

    def range(
        self,
        interface: str,
        instance: str | None = None,
        start: float = float("-inf"),
        end: float = float("inf"),
        limit: int | None = None,
        token: str | None = None,
    ) -> Page:
        """Time-ordered events in ``[start, end]``.

        Without ``instance`` all instances of the interface are merged,
        ordered by ``(time, instance, sequence)``. ``limit`` pages the
        result; pass the returned token back to continue.
        """
        if start > end:
            raise StoreError("inverted time range")
        instances = [instance] if instance is not None else sorted(self._by_interface.get(interface, ()))
        events = [e for inst in instances for e in self._key_slice(interface, inst, start, end)]
        if instance is None:
            events.sort(key=lambda e: (e.time, e.instance, e.sequence))
        skip = int(token) if token else 0
        if skip < 0 or skip > len(events):
            raise StoreError(f"invalid continuation token {token!r}")
        if limit is None:
            return Page(events[skip:], None)
        page = events[skip : skip + limit]
        nxt = skip + len(page)
        return Page(page, str(nxt) if nxt < len(events) else None)

    def history(self, interface: str, instance: str) -> list[StoredEvent]:
        return list(self._key_slice(interface, instance, float("-inf"), float("inf")))
