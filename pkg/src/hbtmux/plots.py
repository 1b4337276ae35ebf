"""Diagnostic figures. Uses a non-interactive backend throughout."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ContrastMatrix, diagonal_profile
from .peakfit import FitResult, peak_model

__all__ = [
    "correlation_figure",
    "diagonal_figure",
    "matrix_figure",
    "save_figure",
]


def correlation_figure(centers_ps, normalized, fit: FitResult | None = None,
                       title: str | None = None):
    """Normalized coincidence histogram, optionally with its fitted model."""
    centers_ps = np.asarray(centers_ps, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(centers_ps, normalized, lw=0.7, color="0.3", label="data")
    if fit is not None and fit.ok:
        dense = np.linspace(centers_ps[0], centers_ps[-1], 2000)
        ax.plot(dense, peak_model(dense, fit), color="crimson", lw=1.4,
                label=f"fit: C={fit.contrast:.4f}, sigma={fit.sigma_ps:.1f} ps")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("delay (ps)")
    ax.set_ylabel("normalized coincidences")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig


def matrix_figure(matrix: ContrastMatrix):
    """Contrast over all channel pairs on wavelength-ordered axes."""
    fig, ax = plt.subplots(figsize=(6.4, 5.4))
    data = np.ma.masked_invalid(matrix.contrast)
    image = ax.imshow(data, origin="lower", aspect="auto", cmap="viridis")
    fig.colorbar(image, ax=ax, label="contrast")

    def ticks(values):
        idx = np.linspace(0, len(values) - 1, min(6, len(values))).astype(int)
        return idx, [f"{values[i]:.2f}" for i in idx]

    ix, lx = ticks(matrix.lambda_b)
    ax.set_xticks(ix, lx, rotation=45, fontsize=7)
    iy, ly = ticks(matrix.lambda_a)
    ax.set_yticks(iy, ly, fontsize=7)
    ax.set_xlabel("arm B wavelength (nm)")
    ax.set_ylabel("arm A wavelength (nm)")
    fig.tight_layout()
    return fig


def diagonal_figure(matrix: ContrastMatrix, offsets=(0, 1, 2)):
    """Contrast along the matched diagonal and its neighbours."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for offset in offsets:
        try:
            profile = diagonal_profile(matrix, offset=offset)
        except ValueError:
            continue
        ax.plot(profile, marker=".", ms=3, lw=0.8, label=f"offset {offset:+d}")
    ax.axhline(0.0, color="0.7", lw=0.6)
    ax.set_xlabel("position along diagonal")
    ax.set_ylabel("contrast")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def save_figure(fig, path, dpi: int = 130) -> None:
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
