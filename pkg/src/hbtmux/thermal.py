"""Synthetic chaotic-light datasets.

The chain mirrors the instrument: each matched wavelength band carries one
classical many-mode intensity, two detectors (one per spectrometer arm)
sample photon arrivals from it, and per-pixel detector effects are applied
before both arms merge into a single time-ordered tag stream.

Two samplers coexist. `simulate_channel_intensity` plus `sample_photons`
materialise the intensity on a grid no coarser than a tenth of the
coherence time; that is exact but only affordable for short traces.
`simulate_dataset` instead thins a uniform candidate stream against the
field evaluated at the candidate instants only, which costs per photon
rather than per grid cell and carries the same statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import (
    ChannelMap,
    DetectorConfig,
    SpectralChannel,
    coherence_sigma_ps,
    default_channel_map,
    freq_sigma_from_lambda,
    pair_coherence_sigma_ps,
)
from .tagio import TagFileHeader, make_tags, write_tags

__all__ = [
    "SimConfig",
    "apply_detector",
    "sample_photons",
    "simulate_channel_intensity",
    "simulate_dataset",
]

# substream labels; every random draw hangs off (seed, label, pixel)
_STREAM_MODES = 1
_STREAM_PHOTONS = 2
_STREAM_TIMING = 3
_STREAM_DARKS = 4
_STREAM_XTALK = 5

# accept-reject ceiling in units of the mean intensity; the intensity is
# exponentially distributed, so the clipped tail carries weight exp(-20)
_ENVELOPE = 20.0
_XTALK_JITTER_PS = 5.0
_EVAL_BLOCK = 1 << 15


def _rng(seed: int, stream: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(key)]))


def _effective_sigma_c_ps(channel: SpectralChannel) -> float:
    # a coincidence pair sees both arms' passbands; for a lone channel the
    # partner is taken to be an identical response
    sigma_f = freq_sigma_from_lambda(channel.lambda_center_nm, channel.lambda_sigma_nm)
    return coherence_sigma_ps(math.sqrt(2.0) * sigma_f)


def _draw_modes(sigma_c_ps: float, mode_count: int, rng: np.random.Generator):
    """Mode frequencies (cycles per ps) and complex amplitudes.

    Frequencies are stratified over the Gaussian band so the realised
    spectral width is stable from seed to seed; amplitudes are standard
    complex normals, which makes the summed field exactly Gaussian.
    """
    sigma_f_per_ps = 1.0 / (2.0 * math.sqrt(2.0) * math.pi * sigma_c_ps)
    u = (np.arange(mode_count) + rng.random(mode_count)) / mode_count
    freq = ndtri(u) * sigma_f_per_ps
    re = rng.standard_normal(mode_count)
    im = rng.standard_normal(mode_count)
    amp = (re + 1j * im) / math.sqrt(2.0)
    return freq, amp


def _field_at(times_ps: np.ndarray, freq: np.ndarray, amp: np.ndarray) -> np.ndarray:
    """Complex field at arbitrary instants, blocked to bound memory."""
    out = np.empty(times_ps.size, dtype=np.complex128)
    for start in range(0, times_ps.size, _EVAL_BLOCK):
        block = times_ps[start : start + _EVAL_BLOCK]
        phases = 2j * np.pi * np.multiply.outer(block, freq)
        out[start : start + _EVAL_BLOCK] = np.exp(phases) @ amp
    return out


def _field_on_grid(n_cells: int, dt_ps: float, freq: np.ndarray,
                   amp: np.ndarray) -> np.ndarray:
    """Complex field on a uniform grid.

    Per block the phases advance by cumulative products from one exactly
    computed anchor, which is much cheaper than exponentiating every cell
    and keeps rounding drift bounded by the block length.
    """
    out = np.empty(n_cells, dtype=np.complex128)
    step = np.exp(2j * np.pi * freq * dt_ps)
    powers = np.empty((freq.size, _EVAL_BLOCK), dtype=np.complex128)
    powers[:, 0] = 1.0
    for start in range(0, n_cells, _EVAL_BLOCK):
        length = min(_EVAL_BLOCK, n_cells - start)
        anchor = np.exp(2j * np.pi * freq * (start * dt_ps)) * amp
        powers[:, 1:length] = step[:, None]
        np.cumprod(powers[:, :length], axis=1, out=powers[:, :length])
        out[start : start + length] = anchor @ powers[:, :length]
    return out


def simulate_channel_intensity(
    channel: SpectralChannel,
    mode_count: int,
    duration_ps: float,
    seed: int,
    dt_ps: float | None = None,
) -> tuple[float, np.ndarray]:
    """Unit-mean intensity trace for the band a channel observes.

    Returns ``(dt_ps, intensity)``. The grid step defaults to a tenth of
    the coherence time and may only be refined, never coarsened. A single
    mode has no beats, so ``mode_count=1`` yields a flat trace.
    """
    if mode_count < 1:
        raise ValueError("mode_count must be at least 1")
    if duration_ps <= 0:
        raise ValueError("duration_ps must be positive")
    sigma_c = _effective_sigma_c_ps(channel)
    limit = sigma_c / 10.0
    if dt_ps is None:
        dt_ps = limit
    elif dt_ps > limit * (1.0 + 1e-12):
        raise ValueError(
            f"dt_ps={dt_ps:g} too coarse: the grid must resolve the "
            f"coherence time ({sigma_c:g} ps), so dt_ps <= {limit:g}"
        )
    elif dt_ps <= 0:
        raise ValueError("dt_ps must be positive")

    rng = _rng(seed, _STREAM_MODES, channel.pixel)
    freq, amp = _draw_modes(sigma_c, mode_count, rng)
    power = float(np.sum(np.abs(amp) ** 2))
    n_cells = int(np.ceil(duration_ps / dt_ps))
    intensity = np.abs(_field_on_grid(n_cells, dt_ps, freq, amp)) ** 2 / power
    return dt_ps, intensity


def sample_photons(
    intensity_trace: np.ndarray,
    dt_ps: float,
    rate_cps: float,
    arm_split: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Photon arrival times (integer ps) for the two arms of one band.

    The band feeds both detectors, so the total rate is twice the
    per-channel rate; ``arm_split`` is the probability a photon lands in
    arm A.
    """
    trace = np.asarray(intensity_trace, dtype=np.float64)
    if trace.ndim != 1 or trace.size == 0:
        raise ValueError("intensity_trace must be a non-empty 1-d array")
    if np.any(trace < 0):
        raise ValueError("intensity_trace must be non-negative")
    if dt_ps <= 0:
        raise ValueError("dt_ps must be positive")
    if rate_cps < 0:
        raise ValueError("rate_cps must be non-negative")
    if not 0.0 <= arm_split <= 1.0:
        raise ValueError("arm_split must lie in [0, 1]")

    rng = _rng(seed, _STREAM_PHOTONS, 0)
    lam = trace * (2.0 * rate_cps * 1e-12 * dt_ps)
    total = float(lam.sum())
    n = int(rng.poisson(total)) if total > 0 else 0
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty

    cum = np.cumsum(lam)
    u = np.sort(rng.random(n)) * total
    idx = np.searchsorted(cum, u, side="right").clip(0, trace.size - 1)
    frac = rng.random(n)
    times = np.floor((idx + frac) * dt_ps).astype(np.int64)
    to_a = rng.random(n) < arm_split
    return np.sort(times[to_a]), np.sort(times[~to_a])


def _thinned_times(
    freq: np.ndarray,
    amp: np.ndarray,
    power: float,
    rate_cps: float,
    duration_ps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Arrival instants (float ps, sorted) sampled without a grid.

    Candidates arrive uniformly at ``_ENVELOPE`` times the mean total rate
    and survive with probability intensity/_ENVELOPE evaluated exactly at
    the candidate instant.
    """
    mean_per_ps = 2.0 * rate_cps * 1e-12
    n_cand = int(rng.poisson(_ENVELOPE * mean_per_ps * duration_ps))
    if n_cand == 0:
        return np.empty(0, dtype=np.float64)
    t_cand = np.sort(rng.random(n_cand)) * duration_ps
    accept_u = rng.random(n_cand) * _ENVELOPE
    intensity = np.abs(_field_at(t_cand, freq, amp)) ** 2 / power
    return t_cand[accept_u < intensity]


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to synthesise one dataset deterministically."""

    channel_map: ChannelMap
    detector: DetectorConfig
    rate_per_channel_cps: float
    duration_s: float
    seed: int
    mode_count: int = 64
    arm_split: float = 0.5
    coherence_sigma_ps: float | None = None
    shared_band_groups: tuple[tuple[int, ...], ...] = ()
    tick_ps: int = 1

    def __post_init__(self):
        if not self.rate_per_channel_cps > 0:
            raise ValueError("rate_per_channel_cps must be positive")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.mode_count < 8:
            raise ValueError("mode_count below 8 distorts bunching contrast")
        if not 0.0 <= self.arm_split <= 1.0:
            raise ValueError("arm_split must lie in [0, 1]")
        if self.coherence_sigma_ps is not None and not self.coherence_sigma_ps > 0:
            raise ValueError("coherence_sigma_ps override must be positive")
        if self.tick_ps < 1:
            raise ValueError("tick_ps must be at least 1")
        groups = tuple(tuple(sorted(int(r) for r in g)) for g in self.shared_band_groups)
        object.__setattr__(self, "shared_band_groups", groups)
        n_ranks = len(self.channel_map.matched_pairs())
        seen: set[int] = set()
        for group in groups:
            if any(r < 0 or r >= n_ranks for r in group):
                raise ValueError(f"band group {group} names a rank outside 0..{n_ranks - 1}")
            if seen & set(group):
                raise ValueError("band groups must not overlap")
            if list(group) != list(range(group[0], group[-1] + 1)):
                raise ValueError(
                    f"band group {group} must cover adjacent wavelength ranks"
                )
            seen |= set(group)

    @classmethod
    def from_toml(cls, source) -> "SimConfig":
        """Build a config from a TOML file (path or bytes file object).

        Layout: a ``[sim]`` table with the scalar fields, an optional
        ``[detector]`` table, and either ``channel_map = "path"`` or an
        inline ``[sim.channel_map]`` table of `default_channel_map`
        arguments.
        """
        if hasattr(source, "read"):
            data = tomllib.load(source)
        else:
            with open(source, "rb") as fh:
                data = tomllib.load(fh)
        sim = dict(data.get("sim", {}))
        det = dict(data.get("detector", {}))

        map_spec = sim.pop("channel_map", None)
        if map_spec is None:
            channel_map = default_channel_map()
        elif isinstance(map_spec, str):
            base = Path(source).parent if not hasattr(source, "read") else Path(".")
            channel_map = ChannelMap.from_text(Path(base, map_spec).read_text())
        elif isinstance(map_spec, dict):
            channel_map = default_channel_map(**map_spec)
        else:
            raise ValueError("channel_map must be a path string or an inline table")

        if "static_offset_ps" in det:
            det["static_offset_ps"] = {int(k): float(v) for k, v in det["static_offset_ps"].items()}
        if "dead_pixels" in det:
            det["dead_pixels"] = tuple(int(p) for p in det["dead_pixels"])
        detector = DetectorConfig(**det)

        if "shared_band_groups" in sim:
            sim["shared_band_groups"] = tuple(tuple(g) for g in sim["shared_band_groups"])
        known = {f.name for f in fields(cls)}
        unknown = set(sim) - known
        if unknown:
            raise ValueError(f"unknown [sim] keys: {sorted(unknown)}")
        missing = {"rate_per_channel_cps", "duration_s", "seed"} - set(sim)
        if missing:
            raise ValueError(f"[sim] is missing required keys: {sorted(missing)}")
        return cls(channel_map=channel_map, detector=detector, **sim)


def _band_plan(config: SimConfig) -> list[tuple[int, float, list[tuple[int, int]]]]:
    """Bands as (trace_key, sigma_c_ps, [(pixel_a, pixel_b), ...]).

    Each matched pair is its own band unless grouped; grouped pairs share
    one field realisation. Keys are arm-A pixels so that simulating a
    subset of channels reproduces the surviving streams bit for bit.
    """
    pairs = config.channel_map.matched_pairs()
    grouped = {rank: None for rank in range(len(pairs))}
    for gi, group in enumerate(config.shared_band_groups):
        for rank in group:
            grouped[rank] = gi

    bands: dict[object, list[int]] = {}
    for rank in range(len(pairs)):
        key = ("g", grouped[rank]) if grouped[rank] is not None else ("r", rank)
        bands.setdefault(key, []).append(rank)

    plan = []
    for ranks in sorted(bands.values(), key=lambda r: r[0]):
        lead_a, lead_b = pairs[ranks[0]]
        if config.coherence_sigma_ps is not None:
            sigma_c = config.coherence_sigma_ps
        else:
            sigma_c = pair_coherence_sigma_ps(
                config.channel_map.channel_for_pixel(lead_a),
                config.channel_map.channel_for_pixel(lead_b),
            )
        plan.append((lead_a, sigma_c, [pairs[r] for r in ranks]))
    return plan


def apply_detector(
    streams: dict[int, np.ndarray],
    arm: str,
    detector: DetectorConfig,
    channel_map: ChannelMap,
    duration_ps: int,
    seed: int,
) -> np.ndarray:
    """Turn ideal per-pixel arrival times into detected tags for one arm.

    Applies, per pixel: dead-pixel suppression, detection efficiency,
    fiber delay (arm B) and static offsets, Gaussian timing spread, dark
    counts, and optical crosstalk into the physically adjacent pixels.
    Crosstalk may land on a pixel wired to the other arm; the returned
    stream simply carries that pixel id. Output is time-ordered.
    """
    if arm not in ("A", "B"):
        raise ValueError(f"arm must be 'A' or 'B', got {arm!r}")
    dead = set(detector.dead_pixels)
    live_targets = set(channel_map.pixels()) - dead
    sigma = math.hypot(detector.jitter_sigma_ps, detector.offset_residual_ps)
    out_pixels: list[np.ndarray] = []
    out_times: list[np.ndarray] = []

    def emit(pixel: int, times: np.ndarray):
        keep = times >= 0
        out_pixels.append(np.full(int(keep.sum()), pixel, dtype=np.int64))
        out_times.append(times[keep])

    for pixel in channel_map.arm_pixels(arm):
        if pixel in dead:
            continue
        times = np.asarray(streams.get(pixel, ()), dtype=np.int64).astype(np.float64)
        rng_t = _rng(seed, _STREAM_TIMING, pixel)
        if detector.pde < 1.0 and times.size:
            times = times[rng_t.random(times.size) < detector.pde]
        shift = detector.static_offset_ps.get(pixel, 0.0)
        if arm == "B":
            shift += detector.fiber_delay_ps
        if times.size:
            if sigma > 0:
                times = times + rng_t.normal(0.0, sigma, times.size)
            times = np.rint(times + shift).astype(np.int64)
        else:
            times = times.astype(np.int64)

        if detector.dark_cps > 0:
            rng_d = _rng(seed, _STREAM_DARKS, pixel)
            n_dark = int(rng_d.poisson(detector.dark_cps * duration_ps * 1e-12))
            darks = rng_d.integers(0, duration_ps, n_dark, dtype=np.int64)
            times = np.concatenate([times, darks])

        emit(pixel, times)

        if detector.crosstalk_prob > 0 and times.size:
            rng_x = _rng(seed, _STREAM_XTALK, pixel)
            for neighbour in (pixel - 1, pixel + 1):
                picked = rng_x.random(times.size) < detector.crosstalk_prob
                n_dup = int(picked.sum())
                smear = rng_x.normal(0.0, _XTALK_JITTER_PS, n_dup)
                if neighbour in live_targets:
                    dup = np.rint(times[picked] + smear).astype(np.int64)
                    emit(neighbour, dup)

    if not out_times:
        return make_tags(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    pixels = np.concatenate(out_pixels)
    times = np.concatenate(out_times)
    order = np.lexsort((pixels, times))
    return make_tags(pixels[order], times[order])


def simulate_dataset(config: SimConfig, destination=None) -> tuple[TagFileHeader, np.ndarray]:
    """Synthesise a full dataset; optionally write it as a tag file.

    Per band the field is evaluated only at thinning candidates, so the
    cost scales with the photon budget, not with duration over coherence
    time. Identical configs give byte-identical results.
    """
    duration_ps = int(round(config.duration_s * 1e12))
    streams_a: dict[int, np.ndarray] = {}
    streams_b: dict[int, np.ndarray] = {}

    for trace_key, sigma_c, members in _band_plan(config):
        rng_m = _rng(config.seed, _STREAM_MODES, trace_key)
        freq, amp = _draw_modes(sigma_c, config.mode_count, rng_m)
        power = float(np.sum(np.abs(amp) ** 2))
        for pixel_a, pixel_b in members:
            rng_p = _rng(config.seed, _STREAM_PHOTONS, pixel_a)
            arrivals = _thinned_times(
                freq, amp, power, config.rate_per_channel_cps, duration_ps, rng_p
            )
            to_a = rng_p.random(arrivals.size) < config.arm_split
            streams_a[pixel_a] = np.floor(arrivals[to_a]).astype(np.int64)
            streams_b[pixel_b] = np.floor(arrivals[~to_a]).astype(np.int64)

    tags_a = apply_detector(streams_a, "A", config.detector, config.channel_map,
                            duration_ps, config.seed)
    tags_b = apply_detector(streams_b, "B", config.detector, config.channel_map,
                            duration_ps, config.seed)
    merged = np.concatenate([tags_a, tags_b])
    order = np.lexsort((merged["pixel"], merged["t"]))
    tags = merged[order]
    if config.tick_ps > 1:
        tags = tags.copy()
        tags["t"] //= config.tick_ps

    span_ps = duration_ps
    if tags.size:
        span_ps = max(span_ps, int(tags["t"][-1]) * config.tick_ps)
    header = TagFileHeader(
        pixel_count=max(config.channel_map.pixels()) + 1,
        tick_ps=config.tick_ps,
        duration_ps=span_ps,
        record_count=tags.size,
    )
    if destination is not None:
        write_tags(header, tags, destination)
    return header, tags
