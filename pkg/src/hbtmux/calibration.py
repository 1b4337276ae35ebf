"""Instrument calibration: wavelength solutions and timing-offset networks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import ChannelMap, OffsetTable

__all__ = [
    "OffsetSolution",
    "WavelengthFit",
    "find_line_centroids",
    "fit_wavelength_map",
    "simulate_lamp_exposure",
    "solve_offsets",
]


def find_line_centroids(
    counts,
    n_lines: int | None = None,
    threshold: float | None = None,
    halfwidth: int = 3,
) -> np.ndarray:
    """Sub-pixel positions of emission lines in a 1-d spectrum.

    Local maxima above the threshold (default five times the median, which
    rides on the background) seed each line; the position is refined by a
    parabola through the log of the three background-subtracted top
    samples, falling back to a windowed centre of mass. Peaks closer than
    ``halfwidth`` to either end are not usable and are skipped. Returns
    positions in array-index units, ascending.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1:
        raise ValueError("counts must be a 1-d array")
    if counts.size < 2 * halfwidth + 1:
        return np.empty(0)
    if threshold is None:
        threshold = 5.0 * float(np.median(counts))

    interior = np.arange(halfwidth, counts.size - halfwidth)
    is_peak = (counts[interior] > counts[interior - 1]) & (
        counts[interior] >= counts[interior + 1]
    ) & (counts[interior] > threshold)
    candidates = interior[is_peak]
    candidates = candidates[np.argsort(counts[candidates])[::-1]]

    kept: list[int] = []
    for i in candidates:
        if all(abs(i - j) > halfwidth for j in kept):
            kept.append(int(i))
        if n_lines is not None and len(kept) == n_lines:
            break

    centers = []
    for i in kept:
        window = counts[i - halfwidth : i + halfwidth + 1]
        net = window - min(window[0], window[-1])
        net = np.clip(net, 0.0, None)
        if net.sum() <= 0:
            centers.append(float(i))
            continue
        com = i - halfwidth + float(np.arange(net.size) @ net) / float(net.sum())
        y0, y1, y2 = net[halfwidth - 1], net[halfwidth], net[halfwidth + 1]
        if y0 > 0 and y1 > 0 and y2 > 0:
            l0, l1, l2 = math.log(y0), math.log(y1), math.log(y2)
            denom = l0 - 2.0 * l1 + l2
            if denom < 0:
                delta = 0.5 * (l0 - l2) / denom
                if abs(delta) <= 1.0:
                    centers.append(i + delta)
                    continue
        centers.append(com)
    return np.sort(np.asarray(centers))


@dataclass(frozen=True)
class WavelengthFit:
    """Affine pixel-to-wavelength solution for one spectrometer arm."""

    slope_nm_per_px: float
    intercept_nm: float
    residual_rms_nm: float
    n_lines: int

    def lambda_at(self, pixel: float) -> float:
        return self.slope_nm_per_px * pixel + self.intercept_nm


def fit_wavelength_map(centroids_px, lines_nm) -> WavelengthFit:
    """Least-squares line through (pixel position, known wavelength) pairs.

    Pairing is element-wise, so the caller lists the lamp lines in the
    order they land on the array: ascending wavelength for an arm whose
    dispersion is positive, descending for the mirrored arm.
    """
    px = np.asarray(centroids_px, dtype=np.float64)
    lam = np.asarray(lines_nm, dtype=np.float64)
    if px.shape != lam.shape:
        raise ValueError("centroids and line wavelengths must pair one-to-one")
    if px.size < 2:
        raise ValueError("need at least two lines for a wavelength solution")
    if np.ptp(px) == 0:
        raise ValueError("line positions are degenerate")
    slope, intercept = np.polyfit(px, lam, 1)
    residuals = lam - (slope * px + intercept)
    return WavelengthFit(
        slope_nm_per_px=float(slope),
        intercept_nm=float(intercept),
        residual_rms_nm=float(np.sqrt(np.mean(residuals**2))),
        n_lines=px.size,
    )


def simulate_lamp_exposure(
    channel_map: ChannelMap,
    arm: str,
    lines_nm,
    amplitude: float = 10000.0,
    psf_sigma_px: float = 1.3,
    background: float = 50.0,
    seed: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Counts a calibration lamp would leave on one arm of the array.

    Returns ``(pixels, counts)`` with pixels ascending. Line positions
    follow the map's own dispersion; the point-spread width is optical,
    not the channel passband.
    """
    pixels = np.asarray(channel_map.arm_pixels(arm), dtype=np.int64)
    if pixels.size < 2:
        raise ValueError(f"arm {arm!r} has too few pixels for an exposure")
    lams = np.array([channel_map.channel_for_pixel(int(p)).lambda_center_nm for p in pixels])
    slope, intercept = np.polyfit(pixels, lams, 1)
    counts = np.full(pixels.size, float(background))
    for line in np.atleast_1d(np.asarray(lines_nm, dtype=np.float64)):
        position = (line - intercept) / slope
        counts += amplitude * np.exp(-((pixels - position) ** 2) / (2 * psf_sigma_px**2))
    if seed is not None:
        counts = np.random.default_rng(seed).poisson(counts).astype(np.float64)
    return pixels, counts


@dataclass(frozen=True)
class OffsetSolution:
    """Weighted solution of the pair-delay network."""

    table: OffsetTable
    delay_err_ps: float
    offset_err_ps: dict[int, float]
    chi2: float
    dof: int

    @property
    def chi2_reduced(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")


def solve_offsets(
    measurements: dict[tuple[int, int], tuple[float, float]],
    reference_a: int | None = None,
    reference_b: int | None = None,
) -> OffsetSolution:
    """Per-pixel timing offsets from measured pair-peak positions.

    Each measurement ``(pixel_a, pixel_b) -> (mu_ps, sigma_ps)`` asserts
    mu = delay + offset_b - offset_a. One pixel per arm is pinned to zero
    (lowest id by default); the rest, plus the shared delay, come from a
    weighted least-squares solve. The measurement graph must connect all
    pixels, otherwise the relative offsets are undefined.
    """
    if not measurements:
        raise ValueError("no measurements given")
    edges = []
    for (a, b), value in measurements.items():
        mu, sigma = value
        if not (np.isfinite(mu) and np.isfinite(sigma)) or sigma <= 0:
            raise ValueError(f"pair ({a}, {b}): sigma must be positive and finite")
        edges.append((int(a), int(b), float(mu), float(sigma)))

    side_a = {a for a, _, _, _ in edges}
    side_b = {b for _, b, _, _ in edges}
    conflict = side_a & side_b
    if conflict:
        raise ValueError(f"pixels {sorted(conflict)} appear in both roles")

    nodes = sorted(side_a | side_b)
    node_index = {p: i for i, p in enumerate(nodes)}
    rows = [node_index[a] for a, b, _, _ in edges]
    cols = [node_index[b] for _, b, _, _ in edges]
    graph = coo_matrix(
        (np.ones(len(edges)), (rows, cols)), shape=(len(nodes), len(nodes))
    )
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp > 1:
        raise ValueError(f"offset network is disconnected ({n_comp} groups)")

    ref_a = min(side_a) if reference_a is None else int(reference_a)
    ref_b = min(side_b) if reference_b is None else int(reference_b)
    if ref_a not in side_a or ref_b not in side_b:
        raise ValueError("references must appear in the measurements")

    free = sorted((side_a | side_b) - {ref_a, ref_b})
    col_of = {p: 1 + i for i, p in enumerate(free)}
    n_params = 1 + len(free)

    design = np.zeros((len(edges), n_params))
    y = np.empty(len(edges))
    weight = np.empty(len(edges))
    for i, (a, b, mu, sigma) in enumerate(edges):
        design[i, 0] = 1.0
        if a in col_of:
            design[i, col_of[a]] = -1.0
        if b in col_of:
            design[i, col_of[b]] = 1.0
        y[i] = mu
        weight[i] = 1.0 / sigma**2

    sqrt_w = np.sqrt(weight)
    solution, *_ = np.linalg.lstsq(design * sqrt_w[:, None], y * sqrt_w, rcond=None)
    normal = design.T @ (design * weight[:, None])
    covariance = np.linalg.inv(normal)
    residual = y - design @ solution
    chi2 = float(weight @ residual**2)
    dof = len(edges) - n_params

    offsets = {ref_a: 0.0, ref_b: 0.0}
    errors = {ref_a: 0.0, ref_b: 0.0}
    for p in free:
        offsets[p] = float(solution[col_of[p]])
        errors[p] = float(np.sqrt(covariance[col_of[p], col_of[p]]))
    table = OffsetTable(offsets=offsets, delay_ps=float(solution[0]))
    return OffsetSolution(
        table=table,
        delay_err_ps=float(np.sqrt(covariance[0, 0])),
        offset_err_ps=errors,
        chi2=chi2,
        dof=dof,
    )
