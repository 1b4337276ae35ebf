"""Command-line pipeline.

Subcommands cover the whole workflow: synthesize a dataset, calibrate the
wavelength and timing axes, correlate pixel pairs, fit the bunching peaks,
assemble the contrast matrix, check the time-bandwidth budget, estimate
the multiplexing gain, and render a static report. Every artifact-writing
subcommand drops a ``<output>.manifest.json`` next to its primary output
recording the resolved configuration, input/output digests, and timing.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import build_matrix, diagonal_profile, hg_budget, sensitivity_gain
from .calibration import find_line_centroids, fit_wavelength_map, solve_offsets
from .core import ChannelMap, OffsetTable
from .correlator import CorrelationJob, PairHistogramSet, run_all_pairs
from .peakfit import FitConstraints, FitResult, batch_fit
from .presets import PRESET_NAMES, get_preset
from .tagio import read_tags, split_by_pixel
from .thermal import SimConfig, simulate_dataset

_TOOL = f"hbtmux {__version__}"


# ---------------------------------------------------------------- helpers

def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return _jsonable(value.item())
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _write_manifest(primary: Path, subcommand: str, config: dict,
                    inputs: dict[str, Path], outputs: dict[str, Path],
                    stats: dict) -> Path:
    def describe(paths):
        out = {}
        for name, path in paths.items():
            path = Path(path)
            out[name] = {
                "path": str(path),
                "sha256": _sha256(path),
                "bytes": path.stat().st_size,
            }
        return out

    manifest = {
        "tool": _TOOL,
        "subcommand": subcommand,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": _jsonable(config),
        "inputs": describe(inputs),
        "outputs": describe(outputs),
        "stats": _jsonable(stats),
    }
    path = Path(str(primary) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _sim_config_dict(cfg: SimConfig) -> dict:
    return {
        "rate_per_channel_cps": cfg.rate_per_channel_cps,
        "duration_s": cfg.duration_s,
        "seed": cfg.seed,
        "mode_count": cfg.mode_count,
        "arm_split": cfg.arm_split,
        "coherence_sigma_ps": cfg.coherence_sigma_ps,
        "shared_band_groups": cfg.shared_band_groups,
        "tick_ps": cfg.tick_ps,
        "detector": dataclasses.asdict(cfg.detector),
        "n_channels": cfg.channel_map.n_channels,
        "channel_map_sha256": hashlib.sha256(
            cfg.channel_map.to_text().encode()
        ).hexdigest(),
    }


def _load_channel_map(args) -> ChannelMap:
    if getattr(args, "map", None):
        return ChannelMap.from_text(Path(args.map).read_text())
    if getattr(args, "preset", None):
        return get_preset(args.preset).sim.channel_map
    raise ValueError("a channel map is required: pass --map FILE or --preset NAME")


def _parse_floats(text: str) -> list[float]:
    values = [float(v) for v in text.replace(",", " ").split()]
    if not values:
        raise ValueError("empty numeric list")
    return values


def save_histograms(path, hist: PairHistogramSet) -> None:
    np.savez_compressed(
        path,
        pairs=np.asarray(hist.pairs, dtype=np.int64),
        counts=hist.counts,
        missing=np.asarray(hist.missing, dtype=bool),
        window_ps=np.int64(hist.window_ps),
        bin_width_ps=np.int64(hist.bin_width_ps),
    )


def load_histograms(path) -> PairHistogramSet:
    with np.load(path) as data:
        return PairHistogramSet(
            pairs=tuple((int(a), int(b)) for a, b in data["pairs"]),
            window_ps=int(data["window_ps"]),
            bin_width_ps=int(data["bin_width_ps"]),
            counts=data["counts"],
            missing=tuple(bool(m) for m in data["missing"]),
        )


_FIT_FIELDS = (
    "contrast", "contrast_err", "mu_ps", "mu_err", "sigma_ps", "sigma_err",
    "background", "sine_amplitude", "sine_period_ps", "sine_phase_rad",
    "status", "chi2", "dof", "n_iter", "message",
)


def save_fit_results(path, results: dict, meta: dict) -> None:
    payload = dict(meta)
    payload["pairs"] = {
        f"{a}-{b}": _jsonable(
            {**{f: getattr(r, f) for f in _FIT_FIELDS}, "at_bound": list(r.at_bound)}
        )
        for (a, b), r in results.items()
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_fit_results(path) -> tuple[dict[tuple[int, int], FitResult], dict]:
    payload = json.loads(Path(path).read_text())
    results = {}
    for key, rec in payload["pairs"].items():
        a, b = (int(p) for p in key.split("-"))
        kwargs = {
            f: (math.nan if rec[f] is None else rec[f])
            for f in _FIT_FIELDS
            if f in rec
        }
        kwargs["at_bound"] = tuple(rec.get("at_bound", ()))
        results[(a, b)] = FitResult(**kwargs)
    meta = {k: v for k, v in payload.items() if k != "pairs"}
    return results, meta


# ------------------------------------------------------------- subcommands

def _cmd_simulate(args) -> int:
    if args.config:
        cfg = SimConfig.from_toml(args.config)
    elif args.preset:
        cfg = get_preset(args.preset).sim
    else:
        print("error: simulate needs --preset or --config", file=sys.stderr)
        return 2
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.rate is not None:
        overrides["rate_per_channel_cps"] = args.rate
    if args.duration is not None:
        overrides["duration_s"] = args.duration
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    out = Path(args.out)
    start = time.perf_counter()
    header, tags = simulate_dataset(cfg, destination=out)
    wall = time.perf_counter() - start

    outputs = {"tags": out}
    if args.map_out:
        Path(args.map_out).write_text(cfg.channel_map.to_text())
        outputs["channel_map"] = Path(args.map_out)
    stats = {
        "records": int(header.record_count),
        "wall_s": wall,
        "records_per_s": header.record_count / wall if wall > 0 else None,
    }
    _write_manifest(out, "simulate", _sim_config_dict(cfg), {}, outputs, stats)
    print(f"wrote {header.record_count} records to {out} in {wall:.1f} s")
    return 0


def _build_pairs(cmap: ChannelMap, mode: str, diagonals: list[int]):
    matched = cmap.matched_pairs()
    if mode == "all":
        a_pixels = [a for a, _ in matched]
        b_pixels = [b for _, b in matched]
        return [(a, b) for a in a_pixels for b in b_pixels]
    seen = []
    for d in diagonals:
        for rank in range(len(matched)):
            partner = rank + d
            if 0 <= partner < len(matched):
                pair = (matched[rank][0], matched[partner][1])
                if pair not in seen:
                    seen.append(pair)
    return seen


def _cmd_correlate(args) -> int:
    cmap = _load_channel_map(args)
    preset = get_preset(args.preset) if args.preset else None
    window = args.window if args.window is not None else (
        preset.window_ps if preset else 20000
    )
    bin_width = args.bin if args.bin is not None else (
        preset.bin_width_ps if preset else 20
    )
    offsets = None
    if args.offsets:
        offsets = OffsetTable.from_text(Path(args.offsets).read_text())

    diagonals = [int(d) for d in _parse_floats(args.diagonals)]
    pairs = _build_pairs(cmap, args.pairs, diagonals)
    if not pairs:
        raise ValueError("no pixel pairs selected")

    header, tags = read_tags(args.tags)
    streams, counts = split_by_pixel(tags, cmap, tick_ps=header.tick_ps)
    job = CorrelationJob(pairs=tuple(pairs), window_ps=window,
                         bin_width_ps=bin_width, offsets=offsets)
    start = time.perf_counter()
    hist = run_all_pairs(streams, job, cmap, workers=args.workers)
    wall = time.perf_counter() - start

    out = Path(args.out)
    save_histograms(out, hist)
    config = {
        "pairs_mode": args.pairs,
        "diagonals": diagonals,
        "n_pairs": len(pairs),
        "window_ps": window,
        "bin_width_ps": bin_width,
        "workers": args.workers,
        "offsets": args.offsets,
    }
    stats = {
        "records": int(tags.size),
        "kept": counts.kept,
        "masked": counts.masked,
        "unknown": counts.unknown,
        "wall_s": wall,
        "records_per_s": tags.size / wall if wall > 0 else None,
    }
    _write_manifest(out, "correlate", config, {"tags": Path(args.tags)},
                    {"histograms": out}, stats)
    print(f"correlated {len(pairs)} pairs over {tags.size} records "
          f"({tags.size / max(wall, 1e-9):.3g} records/s)")
    return 0


def _cmd_fit(args) -> int:
    preset = get_preset(args.preset) if args.preset else None
    hist = load_histograms(args.hist)

    if args.offsets:
        offsets = OffsetTable.from_text(Path(args.offsets).read_text())
    elif preset:
        offsets = preset.nominal_offsets
    else:
        offsets = OffsetTable(offsets={}, delay_ps=0.0)

    constraints = preset.constraints if preset else FitConstraints()
    updates = {}
    if args.sigma_bounds:
        lo, hi = _parse_floats(args.sigma_bounds)
        updates["sigma_bounds_ps"] = (lo, hi)
    if args.contrast_bound is not None:
        updates["contrast_bounds"] = (-args.contrast_bound, args.contrast_bound)
    if args.mu_halfrange is not None:
        updates["mu_halfrange_ps"] = args.mu_halfrange
    if args.sine:
        updates["include_sine"] = True
    if updates:
        constraints = dataclasses.replace(constraints, **updates)

    exclude = None
    if args.exclude:
        lo, hi = _parse_floats(args.exclude)
        exclude = (lo, hi)
    elif preset:
        exclude = preset.exclude_ps

    start = time.perf_counter()
    results = batch_fit(hist, offsets, constraints=constraints, exclude_ps=exclude)
    wall = time.perf_counter() - start

    n_ok = sum(1 for r in results.values() if r.ok)
    out = Path(args.out)
    meta = {
        "window_ps": hist.window_ps,
        "bin_width_ps": hist.bin_width_ps,
        "exclude_ps": list(exclude) if exclude else None,
        "constraints": dataclasses.asdict(constraints),
    }
    save_fit_results(out, results, meta)
    stats = {"n_pairs": len(results), "n_ok": n_ok, "wall_s": wall}
    _write_manifest(out, "fit", meta, {"histograms": Path(args.hist)},
                    {"fits": out}, stats)
    print(f"fitted {len(results)} pairs, {n_ok} usable")
    return 0


def _cmd_matrix(args) -> int:
    cmap = _load_channel_map(args)
    results, _ = load_fit_results(args.fits)
    matrix = build_matrix(results, cmap)
    out = Path(args.out)
    np.savez_compressed(
        out,
        pixels_a=np.asarray(matrix.pixels_a, dtype=np.int64),
        pixels_b=np.asarray(matrix.pixels_b, dtype=np.int64),
        lambda_a=np.asarray(matrix.lambda_a),
        lambda_b=np.asarray(matrix.lambda_b),
        contrast=matrix.contrast,
        contrast_err=matrix.contrast_err,
        sigma_ps=matrix.sigma_ps,
        mu_ps=matrix.mu_ps,
        ok=matrix.ok,
    )

    outputs = {"matrix": out}
    if args.plot:
        from .plots import diagonal_figure, matrix_figure, save_figure

        matrix_png = Path(f"{args.plot}_matrix.png")
        diag_png = Path(f"{args.plot}_diagonals.png")
        save_figure(matrix_figure(matrix), matrix_png)
        save_figure(diagonal_figure(matrix), diag_png)
        outputs["matrix_png"] = matrix_png
        outputs["diagonals_png"] = diag_png

    summary = {}
    for offset in (0, 1, 2):
        try:
            profile = diagonal_profile(matrix, offset=offset)
        except ValueError:
            continue
        if np.all(np.isnan(profile)):
            continue
        summary[f"diag{offset:+d}_mean_contrast"] = float(np.nanmean(profile))
    stats = {"shape": list(matrix.shape), **summary}
    _write_manifest(out, "matrix", {"fits": str(args.fits)},
                    {"fits": Path(args.fits)}, outputs, stats)
    for key, value in summary.items():
        print(f"{key}: {value:.5f}")
    return 0


def _cmd_calibrate_wavelength(args) -> int:
    lines = sorted(_parse_floats(args.lines))
    if len(lines) < 2:
        raise ValueError("need at least two lamp lines")
    out = Path(args.out)
    result = {}
    for arm, spec_path in (("A", args.spectrum_a), ("B", args.spectrum_b)):
        data = np.loadtxt(spec_path)
        if data.ndim != 2 or data.shape[1] < 2:
            raise ValueError(f"{spec_path}: expected rows of 'pixel counts'")
        pixels, counts = data[:, 0], data[:, 1]
        centroids = find_line_centroids(counts, n_lines=len(lines))
        if centroids.size != len(lines):
            raise ValueError(
                f"arm {arm}: found {centroids.size} of {len(lines)} lines"
            )
        positions = np.interp(centroids, np.arange(pixels.size), pixels)
        fits = [fit_wavelength_map(positions, order)
                for order in (lines, lines[::-1])]
        best = min(fits, key=lambda f: f.residual_rms_nm)
        result[arm] = dataclasses.asdict(best)
        print(f"arm {arm}: {best.slope_nm_per_px:+.5f} nm/px, "
              f"rms {best.residual_rms_nm * 1000:.2f} pm")
    out.write_text(json.dumps(_jsonable(result), indent=2) + "\n")
    _write_manifest(out, "calibrate-wavelength", {"lines_nm": lines},
                    {"spectrum_a": Path(args.spectrum_a),
                     "spectrum_b": Path(args.spectrum_b)},
                    {"wavelength_fit": out}, {})
    return 0


def _cmd_calibrate_offsets(args) -> int:
    results, _ = load_fit_results(args.fits)
    measurements = {}
    for (a, b), res in results.items():
        if res.ok and math.isfinite(res.mu_ps) and res.mu_err > 0:
            measurements[(a, b)] = (res.mu_ps, res.mu_err)
    if not measurements:
        raise ValueError("no usable peak positions in the fit results")
    solution = solve_offsets(measurements, reference_a=args.reference_a,
                             reference_b=args.reference_b)
    out = Path(args.out)
    out.write_text(solution.table.to_text())
    stats = {
        "n_measurements": len(measurements),
        "delay_ps": solution.table.delay_ps,
        "delay_err_ps": solution.delay_err_ps,
        "chi2": solution.chi2,
        "dof": solution.dof,
        "chi2_reduced": solution.chi2_reduced,
    }
    _write_manifest(out, "calibrate-offsets", {}, {"fits": Path(args.fits)},
                    {"offsets": out}, stats)
    print(f"delay {solution.table.delay_ps:.2f} ps "
          f"(+- {solution.delay_err_ps:.2f}), "
          f"chi2/dof {solution.chi2_reduced:.2f} over {len(measurements)} pairs")
    return 0


def _cmd_hg_budget(args) -> int:
    budget = hg_budget(args.lambda_nm, args.dlambda, args.dt)
    print(f"time-bandwidth ratio: {budget.ratio:.1f}")
    print(f"maximum contrast: {budget.max_contrast:.1%}")
    if args.json:
        Path(args.json).write_text(
            json.dumps(_jsonable(dataclasses.asdict(budget)), indent=2) + "\n"
        )
    return 0


def _cmd_sensitivity(args) -> int:
    visibilities = _parse_floats(args.visibilities)
    rates = _parse_floats(args.rates) if args.rates else None
    gain = sensitivity_gain(visibilities, rates=rates, reference=args.reference)
    print(f"relative sensitivity gain: {gain:.4f}")
    print(f"equivalent single-channel integration speedup: {gain**2:.2f}x")
    if args.json:
        Path(args.json).write_text(json.dumps({"gain": gain}, indent=2) + "\n")
    return 0


_REPORT_TEMPLATE = """<!DOCTYPE html>
<html><head><meta charset="utf-8"><title>correlation report</title>
<style>
 body {{ font-family: sans-serif; margin: 2em; max-width: 70em; }}
 img {{ max-width: 100%; border: 1px solid #ccc; margin: 0.5em 0; }}
 table {{ border-collapse: collapse; }}
 td, th {{ border: 1px solid #aaa; padding: 0.3em 0.8em; text-align: right; }}
 caption {{ text-align: left; font-weight: bold; padding: 0.4em 0; }}
</style></head><body>
<h1>correlation report</h1>
<p>generated by {tool} at {created}</p>
{sections}
</body></html>
"""


def _cmd_report(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sections = []

    fits = None
    if args.fits:
        fits, meta = load_fit_results(args.fits)
        rows = []
        for (a, b), r in sorted(fits.items()):
            if not r.ok:
                continue
            rows.append(
                f"<tr><td>({a}, {b})</td><td>{r.contrast:.5f}</td>"
                f"<td>{r.contrast_err:.5f}</td><td>{r.mu_ps:.1f}</td>"
                f"<td>{r.sigma_ps:.2f}</td><td>{r.status}</td></tr>"
            )
        sections.append(
            "<h2>peak fits</h2>"
            f"<p>{len(rows)} usable of {len(fits)} pairs</p>"
            "<table><tr><th>pair</th><th>contrast</th><th>err</th>"
            "<th>mu (ps)</th><th>sigma (ps)</th><th>status</th></tr>"
            + "".join(rows[:200]) + "</table>"
        )

    if args.hist and fits:
        from .correlator import normalize_histogram
        from .plots import correlation_figure, save_figure

        hist = load_histograms(args.hist)
        usable = [(abs(r.contrast) / r.contrast_err, pair)
                  for pair, r in fits.items()
                  if r.ok and r.contrast_err > 0]
        if usable:
            _, best_pair = max(usable)
            counts = hist.histogram_for(*best_pair)
            meta_ex = meta.get("exclude_ps") if args.fits else None
            norm, _ = normalize_histogram(
                counts, hist.window_ps, hist.bin_width_ps,
                exclude_ps=tuple(meta_ex) if meta_ex else None,
            )
            fig = correlation_figure(hist.bin_centers_ps(), norm,
                                     fits[best_pair],
                                     title=f"pair {best_pair}")
            save_figure(fig, out_dir / "best_pair.png")
            sections.append(
                f"<h2>strongest pair {best_pair}</h2>"
                '<img src="best_pair.png" alt="correlation histogram">'
            )

    if args.matrix:
        from .analysis import ContrastMatrix
        from .plots import diagonal_figure, matrix_figure, save_figure

        with np.load(args.matrix) as data:
            matrix = ContrastMatrix(
                pixels_a=tuple(int(p) for p in data["pixels_a"]),
                pixels_b=tuple(int(p) for p in data["pixels_b"]),
                lambda_a=tuple(float(v) for v in data["lambda_a"]),
                lambda_b=tuple(float(v) for v in data["lambda_b"]),
                contrast=data["contrast"],
                contrast_err=data["contrast_err"],
                sigma_ps=data["sigma_ps"],
                mu_ps=data["mu_ps"],
                ok=data["ok"],
            )
        save_figure(matrix_figure(matrix), out_dir / "matrix.png")
        save_figure(diagonal_figure(matrix), out_dir / "diagonals.png")
        sections.append(
            "<h2>contrast matrix</h2>"
            '<img src="matrix.png" alt="contrast matrix">'
            '<img src="diagonals.png" alt="diagonal profiles">'
        )

    if not sections:
        raise ValueError("nothing to report: pass --fits, --hist, or --matrix")

    index = out_dir / "index.html"
    index.write_text(_REPORT_TEMPLATE.format(
        tool=_TOOL,
        created=datetime.now(timezone.utc).isoformat(),
        sections="\n".join(sections),
    ))
    print(f"report written to {out_dir}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hbtmux",
        description="spectrally multiplexed photon-correlation pipeline",
    )
    parser.add_argument("--version", action="version", version=_TOOL)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_preset(p):
        p.add_argument("--preset", choices=PRESET_NAMES,
                       help="named configuration bundle")

    p = sub.add_parser("simulate", help="synthesize a tag stream")
    add_preset(p)
    p.add_argument("--config", help="TOML simulation config")
    p.add_argument("--seed", type=int)
    p.add_argument("--rate", type=float, help="per-channel rate (cps)")
    p.add_argument("--duration", type=float, help="acquisition time (s)")
    p.add_argument("--out", required=True, help="output tag file")
    p.add_argument("--map-out", help="also write the channel map as text")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("correlate", help="histogram pair delays")
    add_preset(p)
    p.add_argument("--tags", required=True)
    p.add_argument("--map", help="channel map text file")
    p.add_argument("--pairs", choices=("matched", "all"), default="matched")
    p.add_argument("--diagonals", default="0",
                   help="wavelength-rank offsets to include, e.g. '0,2'")
    p.add_argument("--window", type=int, help="half window (ps)")
    p.add_argument("--bin", type=int, help="bin width (ps)")
    p.add_argument("--offsets", help="offset table for dt alignment")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output .npz")
    p.set_defaults(handler=_cmd_correlate)

    p = sub.add_parser("fit", help="fit bunching peaks")
    add_preset(p)
    p.add_argument("--hist", required=True, help="correlate output .npz")
    p.add_argument("--offsets", help="offset table for nominal peak centers")
    p.add_argument("--sigma-bounds", help="'lo,hi' in ps")
    p.add_argument("--contrast-bound", type=float,
                   help="symmetric contrast bound")
    p.add_argument("--mu-halfrange", type=float)
    p.add_argument("--sine", action="store_true",
                   help="include a sinusoidal background term")
    p.add_argument("--exclude", help="'lo,hi' ps interval kept out of baseline")
    p.add_argument("--out", required=True, help="output .json")
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("matrix", help="assemble the contrast matrix")
    add_preset(p)
    p.add_argument("--fits", required=True)
    p.add_argument("--map", help="channel map text file")
    p.add_argument("--plot", help="prefix for PNG figures")
    p.add_argument("--out", required=True, help="output .npz")
    p.set_defaults(handler=_cmd_matrix)

    p = sub.add_parser("calibrate-wavelength",
                       help="fit pixel-to-wavelength solutions")
    p.add_argument("--spectrum-a", required=True,
                   help="text file, rows of 'pixel counts'")
    p.add_argument("--spectrum-b", required=True)
    p.add_argument("--lines", required=True,
                   help="known lamp wavelengths (nm), comma separated")
    p.add_argument("--out", required=True, help="output .json")
    p.set_defaults(handler=_cmd_calibrate_wavelength)

    p = sub.add_parser("calibrate-offsets",
                       help="solve per-pixel timing offsets")
    p.add_argument("--fits", required=True)
    p.add_argument("--reference-a", type=int)
    p.add_argument("--reference-b", type=int)
    p.add_argument("--out", required=True, help="output offset table")
    p.set_defaults(handler=_cmd_calibrate_offsets)

    p = sub.add_parser("hg-budget",
                       help="time-bandwidth ratio and contrast ceiling")
    p.add_argument("--lambda", dest="lambda_nm", type=float, required=True,
                   help="center wavelength (nm)")
    p.add_argument("--dlambda", type=float, required=True,
                   help="channel bandwidth, rms (nm)")
    p.add_argument("--dt", type=float, required=True,
                   help="timing resolution, rms (ps)")
    p.add_argument("--json", help="also write the numbers as JSON")
    p.set_defaults(handler=_cmd_hg_budget)

    p = sub.add_parser("sensitivity", help="multi-channel sensitivity gain")
    p.add_argument("--visibilities", required=True,
                   help="per-channel visibilities, comma separated")
    p.add_argument("--rates", help="per-channel rates, comma separated")
    p.add_argument("--reference", type=int,
                   help="index of the reference channel")
    p.add_argument("--json", help="also write the gain as JSON")
    p.set_defaults(handler=_cmd_sensitivity)

    p = sub.add_parser("report", help="render a static HTML report")
    p.add_argument("--hist", help="correlate output .npz")
    p.add_argument("--fits", help="fit output .json")
    p.add_argument("--matrix", help="matrix output .npz")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
