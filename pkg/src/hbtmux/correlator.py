"""Start-stop-free cross-correlation of per-pixel timestamp streams.

The histogram convention: for a pair ``(a, b)`` every combination of tags
with ``dt = t_b - t_a`` inside ``[-window, +window]`` contributes one count
to bin ``floor((dt + window) / bin_width)``.  The single value ``dt ==
+window`` is clamped into the top bin so the window is inclusive at both
edges.  All arithmetic is integer picoseconds; per-pair offset corrections
are applied at 1 ps resolution before binning.

With arm B fiber-delayed, the bunching peak of a matched pair sits near
``+fiber_delay_ps`` on the positive side of the histogram.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import ChannelMap, OffsetTable

_B_BLOCK = 1 << 16  # B-side tags processed per vector step

__all__ = [
    "CorrelationJob",
    "PairHistogramSet",
    "pair_histogram",
    "run_all_pairs",
    "normalize_histogram",
]


def _check_geometry(window_ps: int, bin_width_ps: int) -> None:
    if int(window_ps) != window_ps or int(bin_width_ps) != bin_width_ps:
        raise ValueError("window and bin width must be integer picoseconds")
    if window_ps <= 0 or bin_width_ps <= 0:
        raise ValueError(
            f"window and bin width must be positive, got {window_ps}, {bin_width_ps}"
        )
    if window_ps % bin_width_ps != 0:
        raise ValueError(
            f"window ({window_ps} ps) must be a multiple of the bin width "
            f"({bin_width_ps} ps)"
        )


@dataclass(frozen=True)
class CorrelationJob:
    """What to correlate: pixel pairs, histogram geometry, optional offsets.

    Pairs are ``(arm A pixel, arm B pixel)``; the offset table, when given,
    shifts each pair's dt axis by ``offset[b] - offset[a]`` so that
    calibrated peaks line up at the common delay.
    """

    pairs: tuple[tuple[int, int], ...]
    window_ps: int = 20000
    bin_width_ps: int = 20
    offsets: OffsetTable | None = None

    def __post_init__(self):
        _check_geometry(self.window_ps, self.bin_width_ps)
        norm = tuple((int(a), int(b)) for a, b in self.pairs)
        if len(set(norm)) != len(norm):
            raise ValueError("duplicate pixel pairs in correlation job")
        object.__setattr__(self, "pairs", norm)

    @property
    def n_bins(self) -> int:
        return 2 * self.window_ps // self.bin_width_ps

    def pair_shifts_ps(self) -> np.ndarray:
        """Integer dt shift per pair, in job order."""
        if self.offsets is None:
            return np.zeros(len(self.pairs), dtype=np.int64)
        return np.array(
            [
                round(self.offsets.offset_ps(b) - self.offsets.offset_ps(a))
                for a, b in self.pairs
            ],
            dtype=np.int64,
        )


def pair_histogram(
    times_a, times_b, window_ps: int, bin_width_ps: int, shift_ps: int = 0
) -> np.ndarray:
    """Histogram of ``t_b - t_a - shift`` over one pixel pair.

    Both inputs must be sorted ascending (ps).  Exact: every tag pair within
    the window is counted, with no coincidence-unit approximations.
    """
    _check_geometry(window_ps, bin_width_ps)
    a = np.ascontiguousarray(times_a, dtype=np.int64)
    b = np.ascontiguousarray(times_b, dtype=np.int64)
    shift = int(round(shift_ps))
    n_bins = 2 * window_ps // bin_width_ps
    out = np.zeros(n_bins, dtype=np.int64)
    for start in range(0, b.size, _B_BLOCK):
        tb = b[start : start + _B_BLOCK] - shift
        if a.size == 0 or tb.size == 0:
            continue
        lo = np.searchsorted(a, tb - window_ps, side="left")
        hi = np.searchsorted(a, tb + window_ps, side="right")
        n_match = hi - lo
        total = int(n_match.sum())
        if total == 0:
            continue
        # flatten the per-tag index ranges [lo, hi) into one index vector
        starts = np.repeat(lo, n_match)
        local = np.arange(total) - np.repeat(np.cumsum(n_match) - n_match, n_match)
        dt = np.repeat(tb, n_match) - a[starts + local]
        k = (dt + window_ps) // bin_width_ps
        np.minimum(k, n_bins - 1, out=k)
        out += np.bincount(k, minlength=n_bins)
    return out


@dataclass(frozen=True, eq=False)
class PairHistogramSet:
    """Histograms for many pairs sharing one geometry.

    ``counts[i]`` belongs to ``pairs[i]``; ``missing[i]`` is set when either
    pixel of the pair had no stream at all (as opposed to a present but
    silent detector, which simply yields zero counts).
    """

    pairs: tuple[tuple[int, int], ...]
    window_ps: int
    bin_width_ps: int
    counts: np.ndarray
    missing: tuple[bool, ...]
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_index", {pair: i for i, pair in enumerate(self.pairs)}
        )

    @property
    def n_bins(self) -> int:
        return 2 * self.window_ps // self.bin_width_ps

    def bin_centers_ps(self) -> np.ndarray:
        w = self.bin_width_ps
        return -self.window_ps + (np.arange(self.n_bins) + 0.5) * w

    def histogram_for(self, pixel_a: int, pixel_b: int) -> np.ndarray:
        return self.counts[self._index[(pixel_a, pixel_b)]]


def _validate_arms(job: CorrelationJob, channel_map: ChannelMap) -> None:
    for a, b in job.pairs:
        arm_a = channel_map.channel_for_pixel(a).arm
        arm_b = channel_map.channel_for_pixel(b).arm
        if (arm_a, arm_b) != ("A", "B"):
            raise ValueError(
                f"pair ({a}, {b}) must be (arm A, arm B); got ({arm_a}, {arm_b})"
            )


def _sparse_worker(streams, job, shifts, counts, slots):
    for slot in slots:
        a, b = job.pairs[slot]
        counts[slot] = pair_histogram(
            streams[a], streams[b], job.window_ps, job.bin_width_ps,
            shift_ps=int(shifts[slot]),
        )


def _merged_worker(merged_t, merged_src, streams, job, shifts, counts, b_jobs):
    window = job.window_ps
    width = job.bin_width_ps
    n_bins = job.n_bins
    for b_pixel, local_slot_of_src, rows in b_jobs:
        local_shifts = shifts[rows]
        pad = int(np.abs(local_shifts).max()) if rows.size else 0
        acc = np.zeros(rows.size * n_bins, dtype=np.int64)
        tb_all = streams[b_pixel]
        for start in range(0, tb_all.size, _B_BLOCK):
            tb = np.asarray(tb_all[start : start + _B_BLOCK], dtype=np.int64)
            if merged_t.size == 0 or tb.size == 0:
                continue
            lo = np.searchsorted(merged_t, tb - window - pad, side="left")
            hi = np.searchsorted(merged_t, tb + window + pad, side="right")
            n_match = hi - lo
            total = int(n_match.sum())
            if total == 0:
                continue
            starts = np.repeat(lo, n_match)
            local = np.arange(total) - np.repeat(
                np.cumsum(n_match) - n_match, n_match
            )
            idx = starts + local
            slot = local_slot_of_src[merged_src[idx]]
            valid = slot >= 0
            if not valid.any():
                continue
            dt = np.repeat(tb, n_match)[valid] - merged_t[idx[valid]]
            slot = slot[valid]
            dt -= local_shifts[slot]
            inside = (dt >= -window) & (dt <= window)
            if not inside.any():
                continue
            dt = dt[inside]
            slot = slot[inside]
            k = (dt + window) // width
            np.minimum(k, n_bins - 1, out=k)
            acc += np.bincount(slot * n_bins + k, minlength=acc.size)
        counts[rows] += acc.reshape(rows.size, n_bins)


def run_all_pairs(
    streams: Mapping[int, np.ndarray],
    job: CorrelationJob,
    channel_map: ChannelMap,
    workers: int = 1,
) -> PairHistogramSet:
    """Correlate every pair in the job against the per-pixel streams.

    The result is bit-identical for any worker count: workers own disjoint
    histogram rows and all arithmetic is integer.  Pairs whose pixels are
    absent from ``streams`` come back zeroed with their ``missing`` flag set.

    Two internal strategies, chosen by pair density: sparse jobs (a few
    pairs per B pixel, e.g. matched diagonals) loop pair by pair; dense
    jobs (towards all-pairs matrices) sweep each B stream once against a
    merged arm-A stream.  Results are identical, only speed differs.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    _validate_arms(job, channel_map)
    n_pairs = len(job.pairs)
    counts = np.zeros((n_pairs, job.n_bins), dtype=np.int64)
    shifts = job.pair_shifts_ps()
    missing = tuple(a not in streams or b not in streams for a, b in job.pairs)
    live = [i for i in range(n_pairs) if not missing[i]]
    b_pixels = sorted({job.pairs[i][1] for i in live})

    use_merged = len(live) > 3 * max(1, len(b_pixels))
    if not live:
        pass
    elif not use_merged:
        groups = [live[w::workers] for w in range(workers)]
        groups = [g for g in groups if g]
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            futures = [
                pool.submit(_sparse_worker, streams, job, shifts, counts, g)
                for g in groups
            ]
            for fut in futures:
                fut.result()
    else:
        a_pixels = sorted({job.pairs[i][0] for i in live})
        a_idx = {p: i for i, p in enumerate(a_pixels)}
        merged_t = np.concatenate([np.asarray(streams[p], np.int64) for p in a_pixels])
        merged_src = np.concatenate(
            [np.full(len(streams[p]), i, np.int32) for i, p in enumerate(a_pixels)]
        )
        order = np.argsort(merged_t, kind="stable")
        merged_t = merged_t[order]
        merged_src = merged_src[order]
        b_jobs = []
        for b in b_pixels:
            rows = np.array(
                [i for i in live if job.pairs[i][1] == b], dtype=np.int64
            )
            local_slot_of_src = np.full(len(a_pixels), -1, dtype=np.int64)
            for local, i in enumerate(rows):
                local_slot_of_src[a_idx[job.pairs[i][0]]] = local
            b_jobs.append((b, local_slot_of_src, rows))
        groups = [b_jobs[w::workers] for w in range(workers)]
        groups = [g for g in groups if g]
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            futures = [
                pool.submit(
                    _merged_worker, merged_t, merged_src, streams, job, shifts,
                    counts, g,
                )
                for g in groups
            ]
            for fut in futures:
                fut.result()

    return PairHistogramSet(
        pairs=job.pairs,
        window_ps=job.window_ps,
        bin_width_ps=job.bin_width_ps,
        counts=counts,
        missing=missing,
    )


def normalize_histogram(
    counts,
    window_ps: int,
    bin_width_ps: int,
    exclude_ps: tuple[float, float] | None = None,
) -> tuple[np.ndarray, float]:
    """Scale a histogram so its accidental floor sits at 1.

    The baseline is the mean of the sideband bins, those whose centers fall
    outside ``exclude_ps`` (default: the central half of the window, which
    comfortably covers any peak near the nominal delay).  At least 50
    sideband bins are required for a stable estimate.  Returns the
    normalized histogram and the baseline in counts per bin, which is also
    the right scale for Poisson error bars.
    """
    counts = np.asarray(counts)
    _check_geometry(window_ps, bin_width_ps)
    n_bins = 2 * window_ps // bin_width_ps
    if counts.shape != (n_bins,):
        raise ValueError(
            f"histogram has {counts.shape} bins, geometry implies {n_bins}"
        )
    if exclude_ps is None:
        exclude_ps = (-window_ps / 2, window_ps / 2)
    lo, hi = exclude_ps
    centers = -window_ps + (np.arange(n_bins) + 0.5) * bin_width_ps
    sideband = (centers < lo) | (centers > hi)
    n_side = int(np.count_nonzero(sideband))
    if n_side < 50:
        raise ValueError(
            f"only {n_side} sideband bins outside the exclusion region; "
            "need at least 50 to estimate the baseline"
        )
    baseline = float(counts[sideband].mean())
    if baseline <= 0.0:
        raise ValueError("sideband region is empty; cannot normalize histogram")
    return counts / baseline, baseline
