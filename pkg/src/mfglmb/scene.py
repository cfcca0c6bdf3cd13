"""Synthetic multi-speaker scenes and anechoic microphone-array rendering.

Sources are harmonic complexes (synthetic vowels) so that pitch ground truth
is exact. Propagation uses the spherical-wavefront geometry of a source on a
circle of radius ``r`` around the array center; per-block fractional delays
are applied as frequency-domain phase shifts.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np
from scipy import fft as sfft

SOURCE_RADIUS = 1.0
HARMONIC_FMAX = 3600.0
RAMP_S = 0.010
PITCH_RANGE = (50.0, 500.0)
# amplitude of harmonic h ~ h**-HARMONIC_TILT; the fundamental stays the strongest line
HARMONIC_TILT = 0.25


@dataclass(frozen=True)
class MicArray:
    """Planar microphone array, coordinates in meters relative to the center."""

    positions: tuple[tuple[float, float], ...]
    sample_rate: float = 48000.0
    sound_speed: float = 343.0

    def __post_init__(self):
        pos = tuple((float(x), float(y)) for x, y in self.positions)
        object.__setattr__(self, "positions", pos)
        if len(pos) == 0:
            raise ValueError("array needs at least one microphone")
        if len(set(pos)) != len(pos):
            raise ValueError("microphone positions must be distinct")
        if self.sample_rate <= 0 or self.sound_speed <= 0:
            raise ValueError("sample_rate and sound_speed must be positive")

    @classmethod
    def circular(cls, n_mics=8, diameter=0.1, sample_rate=48000.0, sound_speed=343.0):
        angles = 2 * np.pi * np.arange(n_mics) / n_mics
        radius = diameter / 2
        pos = tuple((radius * math.cos(a), radius * math.sin(a)) for a in angles)
        return cls(pos, sample_rate, sound_speed)

    @property
    def n_mics(self) -> int:
        return len(self.positions)

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)

    def delays(self, doa_deg, radius=SOURCE_RADIUS) -> np.ndarray:
        """Propagation delay of each mic relative to the array center, in seconds.

        ``doa_deg`` may be a scalar or an array; the result has shape
        ``doa.shape + (n_mics,)``.
        """
        doa = np.deg2rad(np.asarray(doa_deg, dtype=float))
        src = radius * np.stack([np.cos(doa), np.sin(doa)], axis=-1)
        dist = np.linalg.norm(src[..., None, :] - self.xy, axis=-1)
        return (dist - radius) / self.sound_speed

    def to_dict(self) -> dict:
        return {
            "positions": [list(p) for p in self.positions],
            "sample_rate": self.sample_rate,
            "sound_speed": self.sound_speed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MicArray":
        if "positions" not in d:
            return cls.circular(
                d.get("n_mics", 8),
                d.get("diameter", 0.1),
                d.get("sample_rate", 48000.0),
                d.get("sound_speed", 343.0),
            )
        return cls(
            tuple(tuple(p) for p in d["positions"]),
            d.get("sample_rate", 48000.0),
            d.get("sound_speed", 343.0),
        )


def _interp(breakpoints, t):
    pts = np.asarray(breakpoints, dtype=float).reshape(-1, 2)
    return np.interp(t, pts[:, 0], pts[:, 1])


@dataclass
class SourceTrajectory:
    """Ground-truth DOA/pitch breakpoints and voiced intervals of one talker.

    ``doa`` and ``pitch`` are lists of ``(time_s, value)`` breakpoints,
    linearly interpolated and held constant outside their span. DOA values
    may be unwrapped (e.g. 350 -> 370) and are wrapped on evaluation.
    """

    doa: list[tuple[float, float]]
    pitch: list[tuple[float, float]]
    activity: list[tuple[float, float]] = field(default_factory=list)
    amplitude: float = 1.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        self.doa = [tuple(map(float, p)) for p in self.doa]
        self.pitch = [tuple(map(float, p)) for p in self.pitch]
        self.activity = sorted(tuple(map(float, a)) for a in self.activity)
        if not self.pitch:
            raise ValueError("pitch breakpoints required")
        for lo, hi in self.activity:
            if hi <= lo or lo < 0:
                raise ValueError(f"bad activity interval ({lo}, {hi})")
        for (_, e0), (s1, _) in zip(self.activity, self.activity[1:]):
            if s1 < e0:
                raise ValueError("activity intervals overlap")
        for _, f0 in self.pitch:
            if not PITCH_RANGE[0] <= f0 <= PITCH_RANGE[1]:
                raise ValueError(f"pitch {f0} Hz outside {PITCH_RANGE}")

    def doa_at(self, t):
        if not self.doa:
            raise ValueError("DOA undefined: no breakpoints")
        return np.mod(_interp(self.doa, t), 360.0)

    def pitch_at(self, t):
        return _interp(self.pitch, t)

    def active_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=bool)
        for lo, hi in self.activity:
            out |= (t >= lo) & (t < hi)
        return out

    def check_defined(self, duration_s):
        if not self.doa:
            raise ValueError(f"source {self.name!r}: DOA undefined")
        if len(self.doa) > 1:
            t0, t1 = self.doa[0][0], self.doa[-1][0]
            if t0 > 0 or t1 < duration_s:
                raise ValueError(
                    f"source {self.name!r}: DOA breakpoints span [{t0}, {t1}] "
                    f"but scenario lasts {duration_s} s"
                )
        for lo, hi in self.activity:
            if hi > duration_s + 1e-9:
                raise ValueError(f"source {self.name!r}: activity beyond duration")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "doa": [list(p) for p in self.doa],
            "pitch": [list(p) for p in self.pitch],
            "activity": [list(a) for a in self.activity],
            "amplitude": self.amplitude,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceTrajectory":
        return cls(
            doa=d["doa"],
            pitch=d["pitch"],
            activity=d.get("activity", []),
            amplitude=d.get("amplitude", 1.0),
            seed=d.get("seed", 0),
            name=d.get("name", ""),
        )


@dataclass
class Scenario:
    array: MicArray
    sources: list[SourceTrajectory]
    duration_s: float
    noise_std: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def n_samples(self) -> int:
        return int(round(self.array.sample_rate * self.duration_s))

    def to_dict(self) -> dict:
        return {
            "array": self.array.to_dict(),
            "sources": [s.to_dict() for s in self.sources],
            "duration_s": self.duration_s,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            array=MicArray.from_dict(d.get("array", {})),
            sources=[SourceTrajectory.from_dict(s) for s in d.get("sources", [])],
            duration_s=float(d["duration_s"]),
            noise_std=float(d.get("noise_std", 1e-3)),
            seed=int(d.get("seed", 0)),
        )

    def with_seed(self, seed: int) -> "Scenario":
        """Copy with the noise seed and every source's phase seed re-drawn from ``seed``."""
        ss = np.random.SeedSequence(seed)
        child = [int(c.generate_state(1)[0]) for c in ss.spawn(len(self.sources))]
        sources = [
            SourceTrajectory.from_dict({**s.to_dict(), "seed": c})
            for s, c in zip(self.sources, child)
        ]
        return Scenario(self.array, sources, self.duration_s, self.noise_std, seed)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    try:
        return Scenario.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed scenario ({exc})") from exc


def reference_scenario_path() -> Path:
    return Path(__file__).parent / "data" / "reference_scenario.json"


def reference_scenario() -> Scenario:
    return load_scenario(reference_scenario_path())


def _envelope(activity, t, ramp_s=RAMP_S):
    env = np.zeros_like(t)
    for lo, hi in activity:
        inside = (t >= lo) & (t < hi)
        r = min(ramp_s, (hi - lo) / 2)
        up = np.clip((t - lo) / r, 0.0, 1.0)
        down = np.clip((hi - t) / r, 0.0, 1.0)
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.minimum(up, down))
        env = np.where(inside, ramp, env)
    return env


def synthesize_source(traj: SourceTrajectory, fs: float, duration_s: float) -> np.ndarray:
    """Harmonic complex following the trajectory's pitch, gated by its activity.

    Harmonic ``h`` has amplitude proportional to ``h**-HARMONIC_TILT`` and a random phase
    drawn from ``traj.seed``; harmonics are kept up to 3600 Hz. The active
    signal has RMS ``amplitude / sqrt(2)``.
    """
    n = int(round(fs * duration_s))
    if not traj.activity or n == 0:
        return np.zeros(n)
    t = np.arange(n) / fs
    env = _envelope(traj.activity, t)
    f0 = traj.pitch_at(t)
    phase = 2 * np.pi * np.concatenate(([0.0], np.cumsum(f0[:-1]) / fs))
    n_harm = max(1, int(HARMONIC_FMAX // max(p for _, p in traj.pitch)))
    rng = np.random.default_rng(traj.seed)
    phis = rng.uniform(0, 2 * np.pi, n_harm)
    amps = np.arange(1, n_harm + 1) ** -HARMONIC_TILT
    amps *= traj.amplitude / np.sqrt(np.sum(amps**2))
    sig = np.zeros(n)
    for h in range(n_harm):
        sig += amps[h] * np.sin((h + 1) * phase + phis[h])
    return sig * env


def delay_blockwise(signal, array: MicArray, doa_per_block, block_len, margin=512):
    """Delay ``signal`` to every microphone, holding the DOA fixed per block.

    Each block is cut with ``margin`` samples of context on both sides,
    phase-shifted in the frequency domain and its center kept.
    """
    n = len(signal)
    out = np.zeros((array.n_mics, n))
    padded = np.concatenate([np.zeros(margin), signal, np.zeros(margin + block_len)])
    seg_len = sfft.next_fast_len(block_len + 2 * margin, real=True)
    freqs = np.fft.rfftfreq(seg_len, 1.0 / array.sample_rate)
    for b, doa in enumerate(doa_per_block):
        start = b * block_len
        if start >= n:
            break
        stop = min(start + block_len, n)
        seg = padded[start:start + seg_len]
        if not np.any(seg):
            continue
        spec = sfft.rfft(seg)
        tau = array.delays(doa)
        shifted = sfft.irfft(spec[None, :] * np.exp(-2j * np.pi * freqs[None, :] * tau[:, None]), n=seg_len)
        out[:, start:stop] = shifted[:, margin:margin + stop - start]
    return out


def render_mixture(scn: Scenario, block_s=0.1, return_images=False):
    """Render the M x N anechoic mixture of all sources plus white sensor noise.

    With ``return_images`` the per-source noiseless multichannel images are
    returned as well (list of M x N arrays), which is what the metrics use as
    ground truth.
    """
    fs = scn.array.sample_rate
    n = scn.n_samples
    block_len = int(round(block_s * fs))
    n_blocks = math.ceil(n / block_len)
    centers = (np.arange(n_blocks) + 0.5) * block_len / fs
    mix = np.zeros((scn.array.n_mics, n))
    images = []
    for src in scn.sources:
        src.check_defined(scn.duration_s)
        sig = synthesize_source(src, fs, scn.duration_s)
        img = delay_blockwise(sig, scn.array, src.doa_at(centers), block_len)
        mix += img
        if return_images:
            images.append(img)
    if scn.noise_std > 0:
        rng = np.random.default_rng(scn.seed)
        mix += rng.normal(0.0, scn.noise_std, mix.shape)
    if return_images:
        return mix, images
    return mix


def source_signals(scn: Scenario) -> list[np.ndarray]:
    """Dry source signals as they would arrive at the array center."""
    return [synthesize_source(s, scn.array.sample_rate, scn.duration_s) for s in scn.sources]


def frame_truth(scn: Scenario, frame_s=0.1, min_active=0.5):
    """Per-frame ground truth rows ``(frame, source_id, doa, pitch, active)``.

    A source counts as active in a frame when voiced for at least
    ``min_active`` of the frame.
    """
    n_frames = math.ceil(scn.n_samples / round(frame_s * scn.array.sample_rate))
    rows = []
    sub = np.linspace(0, frame_s, 21)[:-1] + frame_s / 40
    for k in range(n_frames):
        tc = (k + 0.5) * frame_s
        for i, src in enumerate(scn.sources):
            frac = float(np.mean(src.active_at(k * frame_s + sub)))
            rows.append((k, i, float(src.doa_at(tc)), float(src.pitch_at(tc)), frac >= min_active))
    return rows


def first_voiced_frame(src: SourceTrajectory, frame_s=0.1, min_active=0.5):
    if not src.activity:
        return None
    sub = np.linspace(0, frame_s, 21)[:-1] + frame_s / 40
    k = int(src.activity[0][0] // frame_s)
    while k * frame_s < src.activity[-1][1]:
        if np.mean(src.active_at(k * frame_s + sub)) >= min_active:
            return k
        k += 1
    return None
