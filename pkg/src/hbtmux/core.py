"""Shared physical conversions and configuration types.

Everything downstream (simulator, correlator, fitter, analysis) speaks in
terms of the types defined here: spectral channels grouped into a
:class:`ChannelMap`, detector imperfections in :class:`DetectorConfig`, and
per-pixel timing corrections in :class:`OffsetTable`.

Conventions used throughout the package:

* wavelengths in nm, frequencies in Hz, times in ps
* detector pixels are small non-negative integers, unique across both arms
* arm ``"A"`` is the reference arm; arm ``"B"`` carries the nominal fiber
  delay, so cross-arm correlations peak near ``+fiber_delay_ps``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

SPEED_OF_LIGHT_M_PER_S = 2.99792458e8

__all__ = [
    "SPEED_OF_LIGHT_M_PER_S",
    "freq_sigma_from_lambda",
    "coherence_sigma_ps",
    "coherence_sigma_ps_from_lambda",
    "pair_coherence_sigma_ps",
    "SpectralChannel",
    "ChannelMap",
    "default_channel_map",
    "DetectorConfig",
    "OffsetTable",
]


def freq_sigma_from_lambda(lambda_nm: float, lambda_sigma_nm: float) -> float:
    """Convert an rms spectral width from wavelength to frequency.

    ``sigma_f = c * sigma_lambda / lambda**2``, valid for narrow bands.
    Returns Hz; e.g. 0.040 nm at 640 nm is about 2.93e10 Hz.
    """
    if lambda_nm <= 0.0:
        raise ValueError(f"wavelength must be positive, got {lambda_nm}")
    if lambda_sigma_nm <= 0.0:
        raise ValueError(f"spectral width must be positive, got {lambda_sigma_nm}")
    # the 1e9 restores Hz after working in nm
    return SPEED_OF_LIGHT_M_PER_S * lambda_sigma_nm / lambda_nm**2 * 1e9


def coherence_sigma_ps(freq_sigma_hz: float) -> float:
    """Gaussian coherence time (ps) for an rms spectral width (Hz).

    Defined so the squared field correlation is
    ``exp(-tau**2 / (2 * sigma_c**2))``; for a Gaussian spectrum that gives
    ``sigma_c = 1 / (2 * sqrt(2) * pi * sigma_f)``.  The bunching peak of an
    ideal correlator then has rms width ``sigma_c``.
    """
    if freq_sigma_hz <= 0.0:
        raise ValueError(f"frequency width must be positive, got {freq_sigma_hz}")
    return 1e12 / (2.0 * math.sqrt(2.0) * math.pi * freq_sigma_hz)


def coherence_sigma_ps_from_lambda(lambda_nm: float, lambda_sigma_nm: float) -> float:
    return coherence_sigma_ps(freq_sigma_from_lambda(lambda_nm, lambda_sigma_nm))


@dataclass(frozen=True)
class SpectralChannel:
    """One spectrometer output pixel: an arm, a pixel id, and a passband."""

    arm: str
    pixel: int
    lambda_center_nm: float
    lambda_sigma_nm: float

    def __post_init__(self):
        if self.arm not in ("A", "B"):
            raise ValueError(f"arm must be 'A' or 'B', got {self.arm!r}")
        if self.pixel < 0:
            raise ValueError(f"pixel must be non-negative, got {self.pixel}")
        if self.lambda_center_nm <= 0.0 or self.lambda_sigma_nm <= 0.0:
            raise ValueError("wavelength and width must be positive")


def pair_coherence_sigma_ps(chan_a: SpectralChannel, chan_b: SpectralChannel) -> float:
    """Effective coherence time of a cross-arm channel pair.

    Each arm filters the source through its own passband, so the pair sees
    the two rms widths added in quadrature.  For two equal 0.040 nm channels
    at 640 nm this gives 2.72 ps, not the 3.84 ps of a single passband.
    """
    fa = freq_sigma_from_lambda(chan_a.lambda_center_nm, chan_a.lambda_sigma_nm)
    fb = freq_sigma_from_lambda(chan_b.lambda_center_nm, chan_b.lambda_sigma_nm)
    return coherence_sigma_ps(math.hypot(fa, fb))


@dataclass(frozen=True)
class ChannelMap:
    """Pixel-to-wavelength assignment for both spectrometer arms.

    ``masked`` pixels exist physically but are excluded from splitting,
    pairing and analysis (hot or misbehaving detectors).
    """

    channels: tuple[SpectralChannel, ...]
    masked: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "channels", tuple(sorted(self.channels, key=lambda c: c.pixel))
        )
        object.__setattr__(self, "masked", frozenset(self.masked))
        seen = set()
        for chan in self.channels:
            if chan.pixel in seen:
                raise ValueError(f"duplicate pixel {chan.pixel} in channel map")
            seen.add(chan.pixel)
        object.__setattr__(self, "_by_pixel", {c.pixel: c for c in self.channels})

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def pixels(self) -> tuple[int, ...]:
        return tuple(c.pixel for c in self.channels)

    def arm_pixels(self, arm: str) -> tuple[int, ...]:
        return tuple(c.pixel for c in self.channels if c.arm == arm)

    def active_pixels(self, arm: str | None = None) -> tuple[int, ...]:
        """Unmasked pixels, optionally restricted to one arm."""
        return tuple(
            c.pixel
            for c in self.channels
            if c.pixel not in self.masked and (arm is None or c.arm == arm)
        )

    def channel_for_pixel(self, pixel: int) -> SpectralChannel:
        try:
            return self._by_pixel[pixel]
        except KeyError:
            raise KeyError(f"pixel {pixel} not in channel map") from None

    def matched_pairs(self) -> list[tuple[int, int]]:
        """Cross-arm pixel pairs observing the same wavelength.

        Channels of each arm are ranked by center wavelength and paired rank
        by rank; pairs touching a masked pixel are dropped.  Returned sorted
        by the arm-A pixel id.
        """
        arm_a = sorted(
            (c for c in self.channels if c.arm == "A" and c.pixel not in self.masked),
            key=lambda c: c.lambda_center_nm,
        )
        arm_b = sorted(
            (c for c in self.channels if c.arm == "B" and c.pixel not in self.masked),
            key=lambda c: c.lambda_center_nm,
        )
        pairs = [(a.pixel, b.pixel) for a, b in zip(arm_a, arm_b)]
        return sorted(pairs)

    @property
    def pixel_pitch_nm(self) -> float:
        """Median wavelength step between pixel neighbours within an arm."""
        steps = []
        for arm in ("A", "B"):
            chans = [c for c in self.channels if c.arm == arm]
            chans.sort(key=lambda c: c.pixel)
            steps += [
                abs(b.lambda_center_nm - a.lambda_center_nm)
                for a, b in zip(chans, chans[1:])
                if b.pixel == a.pixel + 1
            ]
        if not steps:
            return 0.0
        steps.sort()
        return steps[len(steps) // 2]

    def with_masked(self, pixels: Iterable[int]) -> "ChannelMap":
        return replace(self, masked=self.masked | set(pixels))

    def to_text(self) -> str:
        """Serialize to the plain-text map format (see :func:`from_text`)."""
        lines = ["# channel map: arm pixel lambda_center_nm lambda_sigma_nm"]
        for c in self.channels:
            lines.append(
                f"{c.arm} {c.pixel} {c.lambda_center_nm:.6f} {c.lambda_sigma_nm:.6f}"
            )
        for pixel in sorted(self.masked):
            lines.append(f"mask {pixel}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ChannelMap":
        """Parse the whitespace-separated map format.

        One channel per line: ``arm pixel lambda_center_nm lambda_sigma_nm``.
        ``mask <pixel>`` lines mark pixels to exclude; ``#`` starts a comment
        (full-line or trailing); blank lines are ignored.
        """
        channels: list[SpectralChannel] = []
        masked: set[int] = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            try:
                if fields[0] == "mask":
                    if len(fields) != 2:
                        raise ValueError("expected: mask <pixel>")
                    masked.add(int(fields[1]))
                    continue
                if len(fields) != 4:
                    raise ValueError(
                        "expected: arm pixel lambda_center_nm lambda_sigma_nm"
                    )
                channels.append(
                    SpectralChannel(
                        arm=fields[0],
                        pixel=int(fields[1]),
                        lambda_center_nm=float(fields[2]),
                        lambda_sigma_nm=float(fields[3]),
                    )
                )
            except ValueError as exc:
                raise ValueError(f"channel map line {lineno}: {exc}") from None
        return cls(channels=tuple(channels), masked=frozenset(masked))


def default_channel_map(
    n_per_arm: int = 100,
    center_nm: float = 640.0,
    pitch_nm: float = 0.11,
    sigma_nm: float = 0.040,
) -> ChannelMap:
    """Mirrored two-arm map covering roughly the 635 to 645 nm band.

    Arm A occupies pixels ``0 .. n-1`` with wavelength increasing along the
    pixel axis; arm B occupies ``n .. 2n-1`` with wavelength decreasing.  The
    two arms therefore meet at their reddest channels, so the boundary pixels
    ``n-1`` and ``n`` are simultaneously a matched wavelength pair and
    physical neighbours.  With the defaults the grid spans 634.555 to
    645.445 nm at 0.11 nm pitch.
    """
    channels = []
    half = (n_per_arm - 1) / 2.0
    for i in range(n_per_arm):
        lam = center_nm + (i - half) * pitch_nm
        channels.append(SpectralChannel("A", i, lam, sigma_nm))
    for j in range(n_per_arm):
        lam = center_nm + (half - j) * pitch_nm
        channels.append(SpectralChannel("B", n_per_arm + j, lam, sigma_nm))
    return ChannelMap(channels=tuple(channels))


@dataclass(frozen=True)
class DetectorConfig:
    """Detection-chain imperfections applied to ideal photon arrival times.

    All knobs default to "off" (ideal detector) except the arm-B fiber delay,
    which is part of the nominal geometry rather than an imperfection.

    ``jitter_sigma_ps`` is the per-detection Gaussian timing jitter of the
    detector and TDC chain.  ``offset_residual_ps`` is the catch-all residual
    timing smear left after calibration, likewise applied per detection; both
    arms contributing gives the familiar quadrature widening
    ``sqrt(sigma_c**2 + 2*jitter**2 + 2*residual**2)`` of a cross-arm peak.
    ``static_offset_ps`` holds deliberate per-pixel cable/readout delays,
    useful when exercising the offset-calibration chain.
    """

    jitter_sigma_ps: float = 0.0
    offset_residual_ps: float = 0.0
    pde: float = 1.0
    dark_cps: float = 0.0
    crosstalk_prob: float = 0.0
    dead_pixels: tuple[int, ...] = ()
    fiber_delay_ps: float = 5000.0
    static_offset_ps: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.pde <= 1.0:
            raise ValueError(f"pde must lie in [0, 1], got {self.pde}")
        if not 0.0 <= self.crosstalk_prob < 0.5:
            raise ValueError(
                f"crosstalk_prob must lie in [0, 0.5), got {self.crosstalk_prob}"
            )
        if self.jitter_sigma_ps < 0.0 or self.offset_residual_ps < 0.0:
            raise ValueError("timing widths must be non-negative")
        if self.dark_cps < 0.0:
            raise ValueError(f"dark rate must be non-negative, got {self.dark_cps}")
        object.__setattr__(self, "dead_pixels", tuple(self.dead_pixels))
        object.__setattr__(self, "static_offset_ps", dict(self.static_offset_ps))


@dataclass(frozen=True)
class OffsetTable:
    """Per-pixel timing offsets plus the common cross-arm delay.

    A pixel's offset is the extra delay its detections carry.  The expected
    center of the correlation peak between pixels ``a`` (arm A) and ``b``
    (arm B) is ``delay_ps + offset[b] - offset[a]``; pixels without an entry
    count as zero.
    """

    offsets: Mapping[int, float] = field(default_factory=dict)
    delay_ps: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "offsets", dict(self.offsets))

    def offset_ps(self, pixel: int) -> float:
        return self.offsets.get(pixel, 0.0)

    def pair_mu_ps(self, pixel_a: int, pixel_b: int) -> float:
        return self.delay_ps + self.offset_ps(pixel_b) - self.offset_ps(pixel_a)

    def to_text(self) -> str:
        lines = [
            "# offset table: 'delay <ps>' then 'pixel offset_ps' rows",
            f"delay {self.delay_ps:.6f}",
        ]
        for pixel in sorted(self.offsets):
            lines.append(f"{pixel} {self.offsets[pixel]:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OffsetTable":
        delay = 0.0
        offsets: dict[int, float] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            try:
                if fields[0] == "delay":
                    if len(fields) != 2:
                        raise ValueError("expected: delay <ps>")
                    delay = float(fields[1])
                elif len(fields) == 2:
                    offsets[int(fields[0])] = float(fields[1])
                else:
                    raise ValueError("expected: <pixel> <offset_ps>")
            except ValueError as exc:
                raise ValueError(f"offset table line {lineno}: {exc}") from None
        return cls(offsets=offsets, delay_ps=delay)
