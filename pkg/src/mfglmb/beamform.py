"""Wideband filter-and-sum beamformer with a weighted least-squares FIR design.

The extraction structure looks ahead: ``y(n) = sum_{t,m} w[t, m] x_m(n + t)``.
For a plane of delays ``tau_m`` the response of that structure at frequency
``f`` is ``sum w[t, m] exp(i 2 pi f (t/fs - tau_m))``; the design targets a
pure advance of ``(J_t - 1)/2`` samples in the look direction and silence
outside the +-15 degree mainlobe neighbourhood.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg

from .scene import MicArray


@dataclass(frozen=True)
class DesignParams:
    n_taps: int = 32
    f_lo: float = 20.0
    f_hi: float = 8000.0
    n_freqs: int = 100
    angle_step: float = 5.0
    mainlobe_halfwidth: float = 15.0
    mainlobe_weight: float = 10.0
    sidelobe_weight: float = 1.0
    loading: float = 1e-9
    constrained: bool = True

    @property
    def group_delay(self) -> float:
        return (self.n_taps - 1) / 2


@dataclass
class BeamformerWeights:
    look_doa: float
    taps: np.ndarray          # (J_t, M)
    fs: float

    @property
    def vector(self) -> np.ndarray:
        """Stacked ``(J_t * M,)`` weight vector, tap-major as in ``x(n)``."""
        return self.taps.reshape(-1)


def steering(array: MicArray, n_taps: int, freqs, doas) -> np.ndarray:
    """Stacked filter-and-sum steering vectors, shape ``(F, D, J_t * M)``."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    doas = np.atleast_1d(np.asarray(doas, dtype=float))
    tau = array.delays(doas)                                   # (D, M)
    lag = np.arange(n_taps)[:, None] / array.sample_rate - tau[:, None, :]  # (D, J, M)
    a = np.exp(2j * np.pi * freqs[:, None, None, None] * lag[None])
    return a.reshape(len(freqs), len(doas), -1)


def response(weights: BeamformerWeights, array: MicArray, freqs, doas) -> np.ndarray:
    """Complex response ``(F, D)`` of the designed filter-and-sum beamformer."""
    a = steering(array, weights.taps.shape[0], freqs, doas)
    return a @ weights.vector


@lru_cache(maxsize=16)
def rotation_symmetry(array: MicArray, tol: float = 1e-9):
    """Smallest rotation mapping the array onto itself and the induced mic permutation.

    Returns ``(sector_deg, perm)`` where rotating mic ``m`` by ``sector_deg``
    lands on mic ``perm[m]``; ``(360.0, identity)`` for an asymmetric array.
    """
    xy = array.xy
    M = len(xy)
    for k in range(1, M):
        if M % k:
            continue
        a = 2 * np.pi * k / M
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        d = np.linalg.norm((xy @ R.T)[:, None, :] - xy[None, :, :], axis=-1)
        perm = d.argmin(axis=1)
        if np.all(d[np.arange(M), perm] < tol) and len(set(perm)) == M:
            return 360.0 * k / M, tuple(int(p) for p in perm)
    return 360.0, tuple(range(M))


def _circ_diff(a, b):
    return np.abs((np.asarray(a) - b + 180.0) % 360.0 - 180.0)


def design_wls_weights(array: MicArray, look_doa: float,
                       design: DesignParams = DesignParams(),
                       loading: float | None = None) -> BeamformerWeights:
    """Least-squares fit of the frequency-angle response to the desired one.

    With ``design.constrained`` (default) the look-direction response is
    pinned to the desired advance at every design frequency and the weighted
    sidelobe error plus ``lambda * |w|^2`` is minimised under that equality
    constraint. Otherwise the look direction enters the cost with weight
    ``mainlobe_weight`` like any other grid point.

    On an array with rotational symmetry the problem is solved for the look
    direction reduced into the first sector and the mic columns permuted, so
    rotated designs are exact copies; the normal equations are too poorly
    conditioned at small loading for independent solves to agree beyond
    about 1e-4. ``loading`` overrides ``design.loading``; the absolute
    loading is that factor times the trace of the normal matrix.
    """
    if not 0.0 <= look_doa < 360.0:
        raise ValueError("look_doa must lie in [0, 360)")
    sector, perm = rotation_symmetry(array)
    turns = int(look_doa // sector)
    if turns:
        # solve once per symmetry sector; rotating the look moves each mic's filter to its image
        base = design_wls_weights(array, look_doa - turns * sector, design, loading)
        taps = np.empty_like(base.taps)
        dest = np.arange(array.n_mics)
        for _ in range(turns):
            dest = np.asarray(perm)[dest]
        taps[:, dest] = base.taps
        return BeamformerWeights(float(look_doa), taps, base.fs)
    J = design.n_taps
    fs = array.sample_rate
    freqs = np.linspace(design.f_lo, design.f_hi, design.n_freqs)
    offsets = np.arange(0.0, 360.0, design.angle_step)
    sep = _circ_diff(offsets, 0.0)
    side = sep >= design.mainlobe_halfwidth
    desired_look = np.exp(2j * np.pi * freqs * design.group_delay / fs)
    lam_rel = design.loading if loading is None else loading

    # sidelobe rows: desired response 0
    A = steering(array, J, freqs, np.mod(look_doa + offsets[side], 360.0)).reshape(-1, J * array.n_mics)
    # real arithmetic: [Re A; Im A]^T G [Re A; Im A] == Re(A^H G A)
    normal = design.sidelobe_weight * np.real(A.conj().T @ A)
    C = steering(array, J, freqs, [look_doa])[:, 0, :]         # (F, JM)

    if design.constrained:
        lam = lam_rel * np.trace(normal)
        Q = normal + lam * np.eye(normal.shape[0])
        Cr = np.vstack([C.real, C.imag])
        dr = np.concatenate([desired_look.real, desired_look.imag])
        QiC = linalg.solve(Q, Cr.T, assume_a="pos")
        # the stacked constraints are rank deficient (Im part vanishes at DC-like rows)
        mu = linalg.lstsq(Cr @ QiC, dr)[0]
        w = QiC @ mu
    else:
        g = design.mainlobe_weight
        normal = normal + g * np.real(C.conj().T @ C)
        rhs = g * np.real(C.conj().T @ desired_look)
        lam = lam_rel * np.trace(normal)
        w = linalg.solve(normal + lam * np.eye(len(rhs)), rhs, assume_a="pos")
    return BeamformerWeights(float(look_doa), w.reshape(J, array.n_mics), fs)


def extract_sound(weights: BeamformerWeights, frame, lookahead=None) -> np.ndarray:
    """Apply the filter-and-sum beamformer to one M-channel block.

    ``lookahead`` holds the samples that follow the block (at least
    ``J_t - 1`` per channel); missing samples are treated as zeros.
    """
    frame = np.asarray(frame, dtype=float)
    taps = weights.taps
    J, M = taps.shape
    if frame.ndim != 2 or frame.shape[0] != M:
        raise ValueError(f"expected {M} channels, got shape {frame.shape}")
    n = frame.shape[1]
    if n < J:
        raise ValueError(f"block shorter than {J} taps")
    tail = np.zeros((M, J - 1))
    if lookahead is not None:
        la = np.asarray(lookahead, dtype=float)[:, :J - 1]
        tail[:, :la.shape[1]] = la
    ext = np.concatenate([frame, tail], axis=1)
    out = np.zeros(n)
    for m in range(M):
        out += np.convolve(ext[m], taps[::-1, m], mode="valid")
    return out


class BeamformerBank:
    """Weights designed once per whole-degree look direction and reused.

    Lookups are lock-free; inserts take a lock so concurrent callers never
    design the same direction twice.
    """

    def __init__(self, array: MicArray, design: DesignParams = DesignParams()):
        self.array = array
        self.design = design
        self._cache: dict[int, BeamformerWeights] = {}
        self._lock = threading.Lock()

    @staticmethod
    def quantize(doa: float) -> int:
        return int(np.round(doa)) % 360

    def get(self, doa: float) -> BeamformerWeights:
        key = self.quantize(doa)
        w = self._cache.get(key)
        if w is None:
            with self._lock:
                w = self._cache.get(key)
                if w is None:
                    w = design_wls_weights(self.array, float(key), self.design)
                    self._cache[key] = w
        return w

    def __len__(self):
        return len(self._cache)


def beam_pattern(weights: BeamformerWeights, array: MicArray, freqs=None, doas=None):
    """Rows ``(freq_hz, doa_deg, gain_db)`` of the magnitude response."""
    if freqs is None:
        freqs = np.linspace(100.0, 8000.0, 80)
    if doas is None:
        doas = np.arange(0.0, 360.0, 1.0)
    r = np.abs(response(weights, array, freqs, doas))
    gain = 20 * np.log10(np.maximum(r, 1e-12))
    return [(float(f), float(d), float(gain[i, j]))
            for i, f in enumerate(freqs) for j, d in enumerate(doas)]
