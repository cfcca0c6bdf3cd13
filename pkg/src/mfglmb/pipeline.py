"""Frame loop: localize, beamform, estimate pitch, filter."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .beamform import BeamformerBank, DesignParams, extract_sound
from .glmb import FeatureObservation, FilterParams, GlmbFilter, TrackEstimate, wrap_deg
from .localization import BAND, NFFT, DoaSpectrum, detect_doas, mcc_phat_spectrum, valid_pairs
from .pitch import PitchParams, estimate_pitch
from .scene import MicArray

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrontEndParams:
    frame_s: float = 0.1
    grid_step: float = 1.0
    nfft: int = NFFT
    band: tuple[float, float] = BAND
    window: str = "hann"
    rel_threshold: float = 0.3
    max_detections: int = 4
    min_coherence: float = 0.22
    per_pair: bool = True
    f_max: float = BAND[1]

    @classmethod
    def from_dict(cls, d: dict) -> "FrontEndParams":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown front-end parameters: {sorted(extra)}")
        if "band" in d:
            d = {**d, "band": tuple(d["band"])}
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FrameResult:
    frame: int
    observations: list[FeatureObservation]
    estimates: list[TrackEstimate]
    cardinality: np.ndarray
    top_weights: list[float]
    spectrum: DoaSpectrum | None = None


@dataclass
class RunResult:
    frames: list[FrameResult] = field(default_factory=list)
    frame_len: int = 4800
    fs: float = 48000.0
    elapsed_s: float = 0.0

    @property
    def estimates(self) -> list[list[TrackEstimate]]:
        return [f.estimates for f in self.frames]

    def labels(self) -> list[tuple[int, int]]:
        seen = []
        for f in self.frames:
            for e in f.estimates:
                if e.label not in seen:
                    seen.append(e.label)
        return seen


class FrontEnd:
    """Per-frame candidate extraction shared by the tracker and the tests."""

    def __init__(self, array: MicArray, params: FrontEndParams = FrontEndParams(),
                 design: DesignParams = DesignParams(), pitch: PitchParams = PitchParams()):
        self.array = array
        self.params = params
        self.pitch = pitch
        self.pairs = valid_pairs(array, params.f_max)
        self.bank = BeamformerBank(array, design)
        self.frame_len = int(round(params.frame_s * array.sample_rate))

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.frame_len

    def spectrum(self, block, k: int) -> DoaSpectrum:
        p = self.params
        return mcc_phat_spectrum(block, self.array, self.pairs, p.grid_step, k, p.nfft,
                                 p.band, window=p.window)

    def observe(self, mix, k: int):
        """Observations of frame ``k`` and the DOA spectrum they came from."""
        p = self.params
        L = self.frame_len
        block = mix[:, k * L:(k + 1) * L]
        spec = self.spectrum(block, k)
        doas = detect_doas(spec, p.rel_threshold, p.max_detections, p.min_coherence, p.per_pair)
        J = self.bank.design.n_taps
        ahead = mix[:, (k + 1) * L:(k + 1) * L + J - 1]
        obs = []
        for doa in doas:
            s = extract_sound(self.bank.get(doa), block, ahead)
            est = estimate_pitch(s, self.array.sample_rate, self.pitch)
            obs.append(FeatureObservation(float(wrap_deg(doa)), est.f0, s, k))
        return obs, spec


def track(mix, array: MicArray, front: FrontEndParams = FrontEndParams(),
          filt: FilterParams = FilterParams(), keep_spectra: bool = False) -> RunResult:
    """Run the full per-frame pipeline over an M x N mixture."""
    mix = np.asarray(mix, dtype=float)
    if mix.shape[0] != array.n_mics:
        raise ValueError(f"mixture has {mix.shape[0]} channels, array has {array.n_mics}")
    t0 = time.perf_counter()
    fe = FrontEnd(array, front)
    flt = GlmbFilter(filt, fe.frame_len)
    res = RunResult(frame_len=fe.frame_len, fs=array.sample_rate)
    for k in range(fe.n_frames(mix.shape[1])):
        obs, spec = fe.observe(mix, k)
        est = flt.step(obs)
        st = flt.state
        w = np.sort(st.weights())[::-1][:10]
        res.frames.append(FrameResult(k, obs, est, st.cardinality_distribution(), w.tolist(),
                                      spec if keep_spectra else None))
        log.debug("frame %d: %d obs, %d tracks, %d hyps", k, len(obs), len(est), len(st.hypotheses))
    res.elapsed_s = time.perf_counter() - t0
    return res
