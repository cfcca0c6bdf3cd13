"""Figures for run reports. Uses the Agg backend; every function writes a file."""
from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5) - 1.0) / 2.0
COL_WIDTH = 3.4    # inches
PAGE_WIDTH = 7.1

RC = {
    "font.family": "serif",
    "font.size": 8,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "mathtext.fontset": "stix",
    "lines.linewidth": 1.0,
    "lines.markersize": 3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 200,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    with plt.rc_context(RC):
        fig.savefig(path)
    plt.close(fig)


def plot_tracks(path, track_rows, truth_rows, frame_s=0.1):
    """DOA and pitch against time: truth as grey lines, estimates coloured by label."""
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(PAGE_WIDTH, PAGE_WIDTH * 0.55))
        truth = defaultdict(list)
        for k, sid, doa, pitch, active in truth_rows:
            truth[sid].append((k * frame_s, doa if active else np.nan, pitch if active else np.nan))
        for sid, rows in sorted(truth.items()):
            t, d, p = np.array(rows).T
            a1.plot(t, d, color="0.7", lw=3, zorder=1)
            a2.plot(t, p, color="0.7", lw=3, zorder=1)
        est = defaultdict(list)
        for k, label, doa, pitch in track_rows:
            est[label].append((k * frame_s, doa, pitch))
        for label, rows in sorted(est.items()):
            t, d, p = np.array(rows).T
            name = f"{label[0]}-{label[1]}"
            a1.plot(t, d, ".", label=name, zorder=2)
            a2.plot(t, p, ".", zorder=2)
        a1.set_ylabel("DOA (deg)")
        a1.set_ylim(0, 360)
        a2.set_ylabel("F0 (Hz)")
        a2.set_xlabel("time (s)")
        if est:
            a1.legend(title="label", ncol=min(len(est), 6), frameon=False)
    _save(fig, path)


def plot_ospa(path, results, frame_s=0.1, cutoff=5.0):
    """Stacked localization / cardinality components of the per-frame OSPA."""
    loc = np.array([r.localization_component for r in results])
    card = np.array([r.cardinality_component for r in results])
    t = np.arange(len(results)) * frame_s
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(PAGE_WIDTH, PAGE_WIDTH * 0.35))
        ax.stackplot(t, loc, card, labels=["localization", "cardinality"], step="mid", alpha=0.8)
        ax.set_ylim(0, cutoff * 1.05)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("OSPA (deg)")
        ax.legend(frameon=False, loc="upper right")
    _save(fig, path)


def plot_spectrum(path, spectra, frame_s=0.1):
    """Per-pair coherence of the DOA spectrum as a time-DOA heatmap."""
    if not spectra:
        return
    img = np.array([s.coherence() for s in spectra]).T
    grid = spectra[0].grid
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(PAGE_WIDTH, PAGE_WIDTH * 0.4))
        m = ax.imshow(img, aspect="auto", origin="lower", cmap="magma",
                      extent=[0, len(spectra) * frame_s, grid[0], grid[-1] + (grid[1] - grid[0])])
        fig.colorbar(m, ax=ax, label="coherence")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("DOA (deg)")
    _save(fig, path)


def plot_beam_pattern(path, rows, look_doa=None):
    """Gain (dB) over frequency and DOA from ``(freq, doa, gain_db)`` rows."""
    a = np.asarray(rows, dtype=float)
    freqs = np.unique(a[:, 0])
    doas = np.unique(a[:, 1])
    gain = a[:, 2].reshape(len(freqs), len(doas))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(COL_WIDTH * 1.6, COL_WIDTH))
        m = ax.pcolormesh(doas, freqs, np.clip(gain, -40, 5), shading="auto", cmap="viridis")
        fig.colorbar(m, ax=ax, label="gain (dB)")
        if look_doa is not None:
            ax.axvline(look_doa, color="w", lw=0.8, ls="--")
        ax.set_xlabel("DOA (deg)")
        ax.set_ylabel("frequency (Hz)")
    _save(fig, path)
