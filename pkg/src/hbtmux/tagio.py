"""Reading and writing the binary time-tag container.

Layout (all little-endian):

* 36-byte header: ``magic "HBTTAG01" (8s) | version (u32) | pixel_count (u16)
  | reserved (u16) | tick_ps (u32) | duration_ps (u64) | record_count (u64)``
* then ``record_count`` records of 12 bytes each:
  ``pixel (u16) | reserved (u16) | timestamp in ticks (u64)``

Records are 4-byte aligned (hence the reserved pads) and must be sorted by
timestamp.  Serialization is byte-stable: the same header and tags always
produce the same file.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .core import ChannelMap

MAGIC = b"HBTTAG01"
VERSION = 1
_HEADER_STRUCT = struct.Struct("<8sIHHIQQ")
HEADER_SIZE = _HEADER_STRUCT.size  # 36
RECORD_SIZE = 12

TAG_DTYPE = np.dtype([("pixel", "<u2"), ("reserved", "<u2"), ("t", "<u8")])
assert TAG_DTYPE.itemsize == RECORD_SIZE

__all__ = [
    "HEADER_SIZE",
    "RECORD_SIZE",
    "TAG_DTYPE",
    "TagFileHeader",
    "TagFormatError",
    "TagOrderError",
    "make_tags",
    "write_tags",
    "read_header",
    "read_tags",
    "read_tags_chunked",
    "split_by_pixel",
    "SplitCounts",
]


class TagFormatError(ValueError):
    """Raised when a tag file is malformed; messages name the byte offset."""


class TagOrderError(ValueError):
    """Raised when tags to be written are not sorted by timestamp."""


@dataclass(frozen=True)
class TagFileHeader:
    pixel_count: int
    tick_ps: int = 1
    duration_ps: int = 0
    record_count: int = 0
    version: int = VERSION

    def pack(self) -> bytes:
        return _HEADER_STRUCT.pack(
            MAGIC,
            self.version,
            self.pixel_count,
            0,
            self.tick_ps,
            self.duration_ps,
            self.record_count,
        )

    @classmethod
    def unpack(cls, blob: bytes) -> "TagFileHeader":
        if len(blob) < HEADER_SIZE:
            raise TagFormatError(
                f"header truncated at byte offset {len(blob)}, need {HEADER_SIZE}"
            )
        magic, version, pixel_count, _pad, tick_ps, duration_ps, record_count = (
            _HEADER_STRUCT.unpack(blob[:HEADER_SIZE])
        )
        if magic != MAGIC:
            raise TagFormatError(f"bad magic {magic!r} at byte offset 0")
        if version != VERSION:
            raise TagFormatError(f"unsupported format version {version}")
        if tick_ps < 1:
            raise TagFormatError(f"tick_ps must be >= 1, got {tick_ps}")
        return cls(
            pixel_count=pixel_count,
            tick_ps=tick_ps,
            duration_ps=duration_ps,
            record_count=record_count,
            version=version,
        )


def make_tags(pixels, times) -> np.ndarray:
    """Build a tag record array from pixel ids and tick timestamps."""
    pixels = np.asarray(pixels)
    times = np.asarray(times)
    if pixels.shape != times.shape or pixels.ndim != 1:
        raise ValueError("pixels and times must be 1-d arrays of equal length")
    if pixels.size:
        if pixels.min() < 0 or pixels.max() > 0xFFFF:
            raise ValueError("pixel ids must fit in uint16")
        if times.min() < 0:
            raise ValueError("timestamps must be non-negative")
    out = np.zeros(pixels.size, dtype=TAG_DTYPE)
    out["pixel"] = pixels
    out["t"] = times
    return out


def _open_maybe(source, mode: str) -> tuple[BinaryIO, bool]:
    if isinstance(source, (str, Path)):
        return open(source, mode), True
    return source, False


def _coerce_chunk(chunk) -> np.ndarray:
    arr = np.asarray(chunk)
    if arr.dtype != TAG_DTYPE:
        if arr.dtype.names and {"pixel", "t"} <= set(arr.dtype.names):
            out = np.zeros(arr.size, dtype=TAG_DTYPE)
            out["pixel"] = arr["pixel"]
            out["t"] = arr["t"]
            arr = out
        else:
            raise TypeError("tags must be a record array with 'pixel' and 't' fields")
    return np.ascontiguousarray(arr)


def write_tags(header: TagFileHeader, tags, destination) -> int:
    """Write tags to ``destination``; returns the number of records written.

    ``tags`` may be a single record array or an iterator of record arrays
    (chunked writing).  Timestamps must be non-decreasing across the whole
    sequence or :class:`TagOrderError` is raised.  The header's record count
    is filled in from what was actually written; a zero ``duration_ps`` is
    replaced by the last timestamp in ps.
    """
    if isinstance(tags, np.ndarray):
        chunks: Iterable = (tags,)
    else:
        chunks = tags
    f, should_close = _open_maybe(destination, "wb")
    written = 0
    offset = 0
    last_t = None
    try:
        try:
            f.write(b"\x00" * HEADER_SIZE)  # placeholder, rewritten at the end
            offset = HEADER_SIZE
            for chunk in chunks:
                arr = _coerce_chunk(chunk)
                if arr.size == 0:
                    continue
                t = arr["t"].astype(np.int64)
                if np.any(np.diff(t) < 0):
                    raise TagOrderError(
                        "tags must be sorted by timestamp before writing"
                    )
                if last_t is not None and t[0] < last_t:
                    raise TagOrderError(
                        f"tag stream goes backwards at record {written}: "
                        f"{int(t[0])} after {int(last_t)}"
                    )
                f.write(arr.tobytes())
                offset += arr.nbytes
                written += arr.size
                last_t = t[-1]
            duration = header.duration_ps
            if duration == 0 and last_t is not None:
                duration = int(last_t) * header.tick_ps
            final = replace(header, record_count=written, duration_ps=duration)
            f.seek(0)
            f.write(final.pack())
        except OSError as exc:
            raise OSError(
                f"tag write to {destination} failed near byte offset {offset}: {exc}"
            ) from exc
    finally:
        if should_close:
            f.close()
    return written


def read_header(source) -> TagFileHeader:
    f, should_close = _open_maybe(source, "rb")
    try:
        return TagFileHeader.unpack(f.read(HEADER_SIZE))
    finally:
        if should_close:
            f.close()


def read_tags_chunked(source, chunk_hint: int = 1 << 20) -> Iterator[np.ndarray]:
    """Iterate over a tag file in batches of at most ``chunk_hint`` records.

    A file of 10 records read with ``chunk_hint=3`` yields batches of
    3, 3, 3 and 1 records.  Memory use is bounded by the chunk size, never
    the file size.  Malformed files raise :class:`TagFormatError` naming the
    byte offset of the problem.
    """
    if chunk_hint < 1:
        raise ValueError(f"chunk_hint must be a positive record count, got {chunk_hint}")
    return _chunk_iter(source, chunk_hint)


def _chunk_iter(source, chunk_hint: int) -> Iterator[np.ndarray]:
    f, should_close = _open_maybe(source, "rb")
    try:
        header = TagFileHeader.unpack(f.read(HEADER_SIZE))
        expected_end = HEADER_SIZE + header.record_count * RECORD_SIZE
        if f.seekable():
            size = f.seek(0, os.SEEK_END)
            f.seek(HEADER_SIZE)
            if size < expected_end:
                raise TagFormatError(
                    f"file ends at byte offset {size}, "
                    f"but {header.record_count} records need {expected_end}"
                )
            if size > expected_end:
                raise TagFormatError(
                    f"unexpected trailing bytes after byte offset {expected_end}"
                )
        produced = 0
        while produced < header.record_count:
            want = min(chunk_hint, header.record_count - produced)
            blob = f.read(want * RECORD_SIZE)
            if len(blob) < want * RECORD_SIZE:
                raise TagFormatError(
                    f"record region truncated at byte offset "
                    f"{HEADER_SIZE + produced * RECORD_SIZE + len(blob)}"
                )
            yield np.frombuffer(blob, dtype=TAG_DTYPE)
            produced += want
        if not f.seekable() and f.read(1):
            raise TagFormatError(
                f"unexpected trailing bytes after byte offset {expected_end}"
            )
    finally:
        if should_close:
            f.close()


def read_tags(source) -> tuple[TagFileHeader, np.ndarray]:
    """Read an entire tag file into memory.  Fine for small files; use
    :func:`read_tags_chunked` for anything large."""
    if hasattr(source, "seek"):
        source.seek(0)
    header = read_header(source)
    if hasattr(source, "seek"):
        source.seek(0)
    parts = list(read_tags_chunked(source, chunk_hint=1 << 22))
    if parts:
        return header, np.concatenate(parts)
    return header, np.zeros(0, dtype=TAG_DTYPE)


@dataclass(frozen=True)
class SplitCounts:
    kept: int = 0
    masked: int = 0
    unknown: int = 0

    @property
    def total(self) -> int:
        return self.kept + self.masked + self.unknown


def split_by_pixel(
    stream, channel_map: ChannelMap, tick_ps: int = 1
) -> tuple[dict[int, np.ndarray], SplitCounts]:
    """Demultiplex a tag stream into per-pixel timestamp arrays (ps).

    ``stream`` is a tag record array or an iterator of them (for example the
    output of :func:`read_tags_chunked`).  Tags on masked pixels are dropped
    and counted; tags on pixels absent from the map are dropped and counted
    separately (a warning sign, not an error).  Every mapped, unmasked pixel
    appears in the result even if it saw no tags, so downstream code can
    distinguish "silent detector" from "not wired up".
    """
    if isinstance(stream, np.ndarray):
        stream = (stream,)

    classify = np.zeros(0x10000, dtype=np.int8)  # 0 unknown, 1 keep, 2 masked
    for chan in channel_map.channels:
        classify[chan.pixel] = 2 if chan.pixel in channel_map.masked else 1

    active = channel_map.active_pixels()
    parts: dict[int, list[np.ndarray]] = {p: [] for p in active}
    kept = masked = unknown = 0
    for chunk in stream:
        pixels = chunk["pixel"]
        kinds = classify[pixels]
        kept_mask = kinds == 1
        n_keep = int(np.count_nonzero(kept_mask))
        kept += n_keep
        masked += int(np.count_nonzero(kinds == 2))
        unknown += int(np.count_nonzero(kinds == 0))
        if n_keep == 0:
            continue
        times = chunk["t"][kept_mask].astype(np.int64) * tick_ps
        pix = pixels[kept_mask]
        order = np.argsort(pix, kind="stable")  # stable keeps time order per pixel
        pix_sorted = pix[order]
        bounds = np.searchsorted(pix_sorted, np.array(active, dtype=np.uint16))
        bounds = np.append(bounds, pix_sorted.size)
        times_sorted = times[order]
        for i, p in enumerate(active):
            lo, hi = bounds[i], bounds[i + 1]
            if hi > lo:
                parts[p].append(times_sorted[lo:hi])

    streams = {
        p: (np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64))
        for p, chunks in parts.items()
    }
    return streams, SplitCounts(kept=kept, masked=masked, unknown=unknown)
