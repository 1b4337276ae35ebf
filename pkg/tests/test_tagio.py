"""Binary time-tag container: layout, round trips, error reporting."""

import hashlib
import struct

import numpy as np
import pytest

from hbtmux.core import ChannelMap, default_channel_map
from hbtmux.tagio import (
    HEADER_SIZE,
    RECORD_SIZE,
    TAG_DTYPE,
    TagFileHeader,
    TagFormatError,
    TagOrderError,
    make_tags,
    read_header,
    read_tags,
    read_tags_chunked,
    split_by_pixel,
    write_tags,
)


def small_tags():
    pixels = np.array([0, 3, 1, 0, 2], dtype=np.uint16)
    times = np.array([10, 10, 25, 300, 1000], dtype=np.uint64)
    return make_tags(pixels, times)


class TestLayout:
    def test_frozen_sizes(self):
        # 12-byte records keep 4-byte alignment after the header
        assert HEADER_SIZE == 36
        assert RECORD_SIZE == 12
        assert TAG_DTYPE.itemsize == RECORD_SIZE

    def test_header_pack_unpack(self):
        h = TagFileHeader(pixel_count=200, tick_ps=1, duration_ps=5000, record_count=7)
        blob = h.pack()
        assert len(blob) == HEADER_SIZE
        assert blob[:8] == b"HBTTAG01"
        assert TagFileHeader.unpack(blob) == h

    def test_file_begins_with_magic(self, tmp_path):
        path = tmp_path / "t.tags"
        write_tags(TagFileHeader(pixel_count=4), small_tags(), path)
        assert path.read_bytes()[:8] == b"HBTTAG01"


class TestRoundTrip:
    def test_write_then_read(self, tmp_path):
        path = tmp_path / "t.tags"
        tags = small_tags()
        n = write_tags(TagFileHeader(pixel_count=4, duration_ps=2000), tags, path)
        assert n == 5
        header, back = read_tags(path)
        assert header.record_count == 5
        assert header.duration_ps == 2000
        np.testing.assert_array_equal(back["pixel"], tags["pixel"])
        np.testing.assert_array_equal(back["t"], tags["t"])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tags"
        write_tags(TagFileHeader(pixel_count=4), make_tags([], []), path)
        header, back = read_tags(path)
        assert header.record_count == 0
        assert back.size == 0

    def test_write_accepts_chunk_iterator(self, tmp_path):
        path = tmp_path / "t.tags"
        chunks = [
            make_tags([0, 1], [5, 6]),
            make_tags([], []),
            make_tags([2], [6]),
            make_tags([0], [100]),
        ]
        n = write_tags(TagFileHeader(pixel_count=4), iter(chunks), path)
        assert n == 4
        header, back = read_tags(path)
        assert header.record_count == 4
        np.testing.assert_array_equal(back["t"], [5, 6, 6, 100])

    def test_byte_stable(self, tmp_path):
        a, b = tmp_path / "a.tags", tmp_path / "b.tags"
        tags = small_tags()
        write_tags(TagFileHeader(pixel_count=4, duration_ps=99), tags, a)
        write_tags(TagFileHeader(pixel_count=4, duration_ps=99), tags, b)
        ha = hashlib.sha256(a.read_bytes()).hexdigest()
        hb = hashlib.sha256(b.read_bytes()).hexdigest()
        assert ha == hb

    def test_default_duration_is_last_tag(self, tmp_path):
        path = tmp_path / "t.tags"
        write_tags(TagFileHeader(pixel_count=4), small_tags(), path)
        assert read_header(path).duration_ps == 1000


class TestChunkedRead:
    def test_chunk_pattern(self, tmp_path):
        """Ten records read with hint three arrive as 3, 3, 3, 1."""
        path = tmp_path / "t.tags"
        tags = make_tags(np.zeros(10, np.uint16), np.arange(10, dtype=np.uint64))
        write_tags(TagFileHeader(pixel_count=1), tags, path)
        sizes = [chunk.size for chunk in read_tags_chunked(path, chunk_hint=3)]
        assert sizes == [3, 3, 3, 1]

    def test_chunks_concatenate_to_whole(self, tmp_path):
        path = tmp_path / "t.tags"
        tags = small_tags()
        write_tags(TagFileHeader(pixel_count=4), tags, path)
        parts = list(read_tags_chunked(path, chunk_hint=2))
        whole = np.concatenate(parts)
        np.testing.assert_array_equal(whole["t"], tags["t"])

    def test_bad_chunk_hint(self, tmp_path):
        path = tmp_path / "t.tags"
        write_tags(TagFileHeader(pixel_count=4), small_tags(), path)
        with pytest.raises(ValueError):
            next(read_tags_chunked(path, chunk_hint=0))


class TestErrors:
    def test_bad_magic_offset_zero(self, tmp_path):
        path = tmp_path / "bad.tags"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 28)
        with pytest.raises(TagFormatError, match="offset 0"):
            read_header(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "bad.tags"
        path.write_bytes(b"HBTTAG01\x01")
        with pytest.raises(TagFormatError, match="offset"):
            read_header(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "bad.tags"
        good = TagFileHeader(pixel_count=1).pack()
        path.write_bytes(good[:8] + struct.pack("<I", 99) + good[12:])
        with pytest.raises(TagFormatError, match="version"):
            read_header(path)

    def test_truncated_record_region(self, tmp_path):
        path = tmp_path / "t.tags"
        write_tags(TagFileHeader(pixel_count=4), small_tags(), path)
        blob = path.read_bytes()
        cut = tmp_path / "cut.tags"
        cut.write_bytes(blob[:-5])  # chop mid-record
        with pytest.raises(TagFormatError, match=str(len(blob) - 5)):
            list(read_tags_chunked(cut, chunk_hint=100))

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "t.tags"
        write_tags(TagFileHeader(pixel_count=4), small_tags(), path)
        end = HEADER_SIZE + 5 * RECORD_SIZE
        with open(path, "ab") as f:
            f.write(b"\xff" * 3)
        with pytest.raises(TagFormatError, match=str(end)):
            list(read_tags_chunked(path, chunk_hint=100))

    def test_unsorted_rejected(self, tmp_path):
        tags = make_tags([0, 0], [50, 10])
        with pytest.raises(TagOrderError):
            write_tags(TagFileHeader(pixel_count=1), tags, tmp_path / "x.tags")

    def test_unsorted_across_chunks_rejected(self, tmp_path):
        chunks = [make_tags([0], [50]), make_tags([0], [10])]
        with pytest.raises(TagOrderError):
            write_tags(TagFileHeader(pixel_count=1), iter(chunks), tmp_path / "x.tags")

    def test_pixel_out_of_range(self, tmp_path):
        with pytest.raises(ValueError):
            make_tags([70000], [1])


class TestSplitByPixel:
    def to_map(self):
        return default_channel_map(n_per_arm=2)  # pixels 0,1 = arm A; 2,3 = arm B

    def test_accounting_is_exact(self):
        cmap = self.to_map()
        pixels = [0, 1, 2, 3, 9, 0, 9]  # pixel 9 is not in the map
        times = [1, 2, 3, 4, 5, 6, 7]
        streams, counts = split_by_pixel(make_tags(pixels, times), cmap)
        assert counts.kept == 5
        assert counts.unknown == 2
        assert counts.masked == 0
        assert counts.kept + counts.masked + counts.unknown == len(pixels)
        np.testing.assert_array_equal(streams[0], [1, 6])

    def test_masked_pixels_dropped_and_counted(self):
        cmap = self.to_map().with_masked([1])
        streams, counts = split_by_pixel(make_tags([0, 1, 1, 2], [1, 2, 3, 4]), cmap)
        assert counts.masked == 2
        assert 1 not in streams
        assert set(streams) == {0, 2, 3}

    def test_mapped_but_silent_pixels_get_empty_streams(self):
        streams, _ = split_by_pixel(make_tags([0], [1]), self.to_map())
        assert set(streams) == {0, 1, 2, 3}
        assert streams[3].size == 0

    def test_accepts_chunk_iterator(self, tmp_path):
        cmap = self.to_map()
        path = tmp_path / "t.tags"
        tags = make_tags([0, 2, 0, 3], [1, 2, 3, 4])
        write_tags(TagFileHeader(pixel_count=4), tags, path)
        streams, counts = split_by_pixel(read_tags_chunked(path, chunk_hint=2), cmap)
        assert counts.kept == 4
        np.testing.assert_array_equal(streams[0], [1, 3])

    def test_tick_scaling(self):
        streams, _ = split_by_pixel(make_tags([0], [7]), self.to_map(), tick_ps=4)
        np.testing.assert_array_equal(streams[0], [28])
        assert streams[0].dtype == np.int64
