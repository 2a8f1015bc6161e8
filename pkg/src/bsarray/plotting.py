"""Report figures, drawn without pyplot so they are safe to call from any thread."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.figure import Figure

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _save(fig: Figure, path: Path) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    return str(path)


def photon_distributions(path: Path, series: Mapping[str, np.ndarray], title: str = "") -> str:
    """Side-by-side bars of photon-number distributions."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.subplots()
    width = 0.8 / max(len(series), 1)
    for i, (label, probs) in enumerate(series.items()):
        n = np.arange(len(probs))
        ax.bar(n + (i - (len(series) - 1) / 2) * width, probs, width=width, label=label)
    ax.set_xlabel("photon number n")
    ax.set_ylabel("probability")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def complex_points(path: Path, groups: Mapping[str, Sequence[complex]], title: str = "") -> str:
    """Scatter of complex amplitudes, one marker style per group."""
    fig = Figure(figsize=(4.5, 4.5))
    ax = fig.subplots()
    for (label, values), marker in zip(groups.items(), "osd^v<>"):
        z = np.asarray(values, dtype=complex)
        ax.plot(z.real, z.imag, marker, linestyle="none", label=label)
        for k, w in enumerate(z, start=1):
            ax.annotate(str(k), (w.real, w.imag), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.axhline(0, color="0.8", lw=0.8)
    ax.axvline(0, color="0.8", lw=0.8)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def detector_histograms(path: Path, histograms: Sequence[Sequence[int]], pattern: Sequence[int]) -> str:
    """One panel per detector; the required count is highlighted."""
    fig = Figure(figsize=(3 * len(histograms), 3))
    axes = np.atleast_1d(fig.subplots(1, len(histograms)))
    for k, (ax, hist, need) in enumerate(zip(axes, histograms, pattern), start=1):
        counts = np.asarray(hist)
        colors = ["C1" if q == need else "C0" for q in range(len(counts))]
        ax.bar(np.arange(len(counts)), counts, color=colors)
        ax.set_title(f"detector {k} (need {need})")
        ax.set_xlabel("counts")
    axes[0].set_ylabel("shots")
    return _save(fig, path)


def cat_sweep(path: Path, ns: Sequence[int], fidelity: Sequence[float], ratio: Sequence[float]) -> str:
    fig = Figure(figsize=(7, 3))
    left, right = fig.subplots(1, 2)
    left.plot(ns, fidelity, "o-")
    left.set_xlabel("n")
    left.set_ylabel("fidelity to |alpha>+|beta>")
    right.plot(ns, ratio, "s-")
    right.axhline(1.0, color="0.6", lw=0.8)
    right.set_xlabel("n")
    right.set_ylabel("exact / asymptotic probability")
    return _save(fig, path)


def block_magnitudes(path: Path, block: np.ndarray, total: int) -> str:
    """Heat map of ``|<m, N-m|U|n, N-n>|``."""
    fig = Figure(figsize=(4.5, 4))
    ax = fig.subplots()
    image = ax.imshow(np.abs(block), origin="lower", cmap="viridis")
    fig.colorbar(image, ax=ax)
    ax.set_xlabel("input signal photons n")
    ax.set_ylabel("output signal photons m")
    ax.set_title(f"N = {total}")
    return _save(fig, path)
