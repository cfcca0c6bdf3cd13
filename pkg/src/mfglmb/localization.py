"""Multi-channel GCC-PHAT (MCC-PHAT) DOA spectrum and peak detection."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .scene import SOURCE_RADIUS, MicArray

log = logging.getLogger(__name__)

F_MAX = 3600.0
BAND = (300.0, 3600.0)
NFFT = 8192
RECT_FLOOR = 1e-3
PHAT_FLOOR = 1e-12


@dataclass(frozen=True)
class PairSet:
    pairs: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass
class DoaSpectrum:
    grid: np.ndarray
    values: np.ndarray
    frame_index: int = 0
    n_pairs: int = 1

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0]) if len(self.grid) > 1 else 360.0

    def coherence(self) -> np.ndarray:
        """Per-pair geometric-mean GCC-PHAT value at each grid point."""
        return self.values ** (1.0 / max(self.n_pairs, 1))


def valid_pairs(array: MicArray, f_max: float = F_MAX) -> PairSet:
    """Microphone pairs closer than ``v / f_max`` (the spatial alias bound)."""
    limit = array.sound_speed / f_max
    xy = array.xy
    pairs = tuple(
        (i, j) for i, j in combinations(range(array.n_mics), 2)
        if np.linalg.norm(xy[i] - xy[j]) < limit
    )
    if not pairs:
        log.warning("no microphone pair satisfies the alias bound %.4f m", limit)
    return PairSet(pairs)


def pair_tdoa(array: MicArray, i: int, j: int, doa_deg, radius=SOURCE_RADIUS):
    """Time difference ``tau_ij`` in seconds for a source at ``doa_deg``."""
    d = array.delays(doa_deg, radius)
    return d[..., i] - d[..., j]


def _band_bins(fs, nfft, band):
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    return np.flatnonzero(sel), freqs[sel]


def _phat(Xi, Xj):
    cross = Xi * np.conj(Xj)
    return cross / np.maximum(np.abs(cross), PHAT_FLOOR)


def gcc_phat_pair(frame_i, frame_j, tau, fs, nfft=NFFT, band=BAND) -> float:
    """PHAT-weighted cross-correlation of two blocks evaluated at lag ``tau`` (s).

    The value is the band-averaged real part, so it lies in [-1, 1]; it peaks
    at ``tau`` equal to the delay of ``frame_i`` relative to ``frame_j``.
    """
    frame_i = np.asarray(frame_i, dtype=float)
    frame_j = np.asarray(frame_j, dtype=float)
    if frame_i.shape != frame_j.shape:
        raise ValueError("blocks must have equal length")
    bins, freqs = _band_bins(fs, nfft, band)
    Xi = np.fft.rfft(frame_i, nfft)[bins]
    Xj = np.fft.rfft(frame_j, nfft)[bins]
    xi = _phat(Xi, Xj)
    return float(np.mean(np.real(xi * np.exp(2j * np.pi * freqs * tau))))


@lru_cache(maxsize=8)
def _steering(array: MicArray, pairs: PairSet, grid_step: float, nfft: int, band: tuple):
    grid = np.arange(0.0, 360.0, grid_step)
    bins, freqs = _band_bins(array.sample_rate, nfft, band)
    ii = np.array([p[0] for p in pairs.pairs])
    jj = np.array([p[1] for p in pairs.pairs])
    d = array.delays(grid)                       # (G, M)
    tau = d[:, ii] - d[:, jj]                    # (G, P)
    # (P, F, G), complex64 keeps the table at a few tens of MB
    steer = np.exp(2j * np.pi * freqs[None, :, None] * tau.T[:, None, :]).astype(np.complex64)
    return grid, bins, ii, jj, steer


def mcc_phat_spectrum(frames, array: MicArray, pairs: PairSet | None = None,
                      grid_step: float = 1.0, frame_index: int = 0, nfft: int = NFFT,
                      band=BAND, floor: float = RECT_FLOOR, window: str | None = None) -> DoaSpectrum:
    """Product over pairs of rectified GCC-PHAT values on a DOA grid.

    Computed as ``exp(sum log max(xi, floor))`` to avoid sign flips and
    underflow. ``window="hann"`` tapers the block before the FFT.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.shape[0] != array.n_mics:
        raise ValueError(f"expected {array.n_mics} channels, got {frames.shape[0]}")
    if window == "hann":
        frames = frames * np.hanning(frames.shape[1])
    elif window not in (None, "rect"):
        raise ValueError(f"unknown window {window!r}")
    if pairs is None:
        pairs = valid_pairs(array)
    if len(pairs) == 0:
        raise ValueError("empty pair set")
    grid, bins, ii, jj, steer = _steering(array, pairs, float(grid_step), nfft, tuple(band))
    X = np.fft.rfft(frames, nfft, axis=1)[:, bins]
    xi = _phat(X[ii], X[jj]).astype(np.complex64)            # (P, F)
    gcc = np.einsum("pf,pfg->pg", xi, steer).real / len(bins)  # (P, G)
    logv = np.sum(np.log(np.maximum(gcc.astype(float), floor)), axis=0)
    return DoaSpectrum(grid, np.exp(logv), frame_index, len(pairs))


def detect_doas(spec: DoaSpectrum, rel_threshold: float = 0.5, max_detections: int = 4,
                min_coherence: float = 0.0, per_pair: bool = False) -> list[float]:
    """Circular local maxima of the spectrum, parabolically refined.

    A peak is kept when it reaches ``rel_threshold`` times the global maximum.
    With ``per_pair`` the comparison is made on the per-pair geometric mean
    (``values ** (1/n_pairs)``) instead of the raw product, which keeps a
    weaker concurrent talker from being crushed by the exponent. If
    ``min_coherence`` > 0 the peak's per-pair geometric mean must also reach
    it; this rejects frames that carry only sensor noise. The strongest
    ``max_detections`` peaks are returned in descending order.
    """
    v = np.asarray(spec.values, dtype=float)
    if v.size < 3:
        return []
    left = np.roll(v, 1)
    right = np.roll(v, -1)
    is_peak = (v > left) & (v >= right)
    level = spec.coherence() if per_pair else v
    keep = is_peak & (level >= rel_threshold * level.max())
    if min_coherence > 0:
        keep &= spec.coherence() >= min_coherence
    idx = np.flatnonzero(keep)
    idx = idx[np.argsort(-v[idx], kind="stable")][:max_detections]
    step = spec.step
    out = []
    for i in idx:
        # refine in log domain: the spectrum is a product, near-Gaussian around its peaks
        a, b, c = np.log(np.maximum([left[i], v[i], right[i]], 1e-300))
        den = a - 2 * b + c
        off = 0.5 * (a - c) / den if den < 0 else 0.0
        d = float(np.mod(spec.grid[i] + np.clip(off, -0.5, 0.5) * step, 360.0))
        out.append(0.0 if d >= 360.0 else d)
    return out
