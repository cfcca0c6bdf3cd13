"""Frame-level pitch by harmonic summation over short sub-frames."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

F0_RANGE = (50.0, 500.0)


@dataclass(frozen=True)
class PitchEstimate:
    f0: float | None
    confidence: float = 0.0

    @property
    def voiced(self) -> bool:
        return self.f0 is not None


@dataclass(frozen=True)
class PitchParams:
    sub_s: float = 0.025
    n_harmonics: int = 8
    n_grid: int = 256
    voicing_ratio: float = 2.0
    subharmonic_penalty: float = 0.5
    min_voiced: int = 2
    nfft: int = 8192
    f0_range: tuple[float, float] = F0_RANGE


def _harmonic_score(mag, df, f0s, n_harm):
    h = np.arange(1, n_harm + 1)
    pos = np.outer(f0s, h) / df
    vals = np.interp(pos.ravel(), np.arange(len(mag)), mag, right=0.0).reshape(pos.shape)
    return vals @ (1.0 / h)


def subframe_scores(x, fs, params: PitchParams = PitchParams()):
    """Harmonic-summation score of one sub-frame on the log-spaced F0 grid.

    Returns ``(grid, raw, penalised)``; ``penalised`` subtracts
    ``subharmonic_penalty`` times the score at half the candidate F0.
    """
    lo, hi = params.f0_range
    grid = np.geomspace(lo, hi, params.n_grid)
    # untapered: the narrower mainlobe keeps low-F0 and single-line inputs above the voicing ratio
    mag = np.abs(np.fft.rfft(x, params.nfft))
    df = fs / params.nfft
    raw = _harmonic_score(mag, df, grid, params.n_harmonics)
    half = _harmonic_score(mag, df, grid / 2, params.n_harmonics)
    return grid, raw, raw - params.subharmonic_penalty * half


def estimate_pitch(frame, fs, params: PitchParams = PitchParams()) -> PitchEstimate:
    """Average F0 of the voiced sub-frames of ``frame``.

    Sub-frames of ``sub_s`` seconds hop by half their length. A sub-frame is
    voiced when its peak raw score is at least ``voicing_ratio`` times the
    median score; its F0 is the parabolically refined peak of the penalised
    score. Fewer than ``min_voiced`` voiced sub-frames gives an absent
    estimate.
    """
    frame = np.asarray(frame, dtype=float)
    sub = int(round(params.sub_s * fs))
    if sub < 8 or len(frame) < sub or not np.any(frame):
        return PitchEstimate(None, 0.0)
    hop = sub // 2
    starts = range(0, len(frame) - sub + 1, hop)
    peaks = []
    n_sub = 0
    for s in starts:
        n_sub += 1
        grid, raw, pen = subframe_scores(frame[s:s + sub], fs, params)
        med = np.median(raw)
        if med <= 0 or raw.max() < params.voicing_ratio * med:
            continue
        i = int(np.argmax(pen))
        logf = np.log(grid[i])
        if 0 < i < len(grid) - 1:
            a, b, c = pen[i - 1], pen[i], pen[i + 1]
            den = a - 2 * b + c
            if den < 0:
                step = np.log(grid[1] / grid[0])
                logf += np.clip(0.5 * (a - c) / den, -0.5, 0.5) * step
        peaks.append(np.exp(logf))
    conf = len(peaks) / n_sub if n_sub else 0.0
    if len(peaks) < params.min_voiced:
        return PitchEstimate(None, conf)
    f0 = float(np.clip(np.mean(peaks), *params.f0_range))
    return PitchEstimate(f0, conf)
