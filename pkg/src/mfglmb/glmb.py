"""Labeled multi-target filter over joint DOA / pitch / sound observations.

Per-label densities are single Gaussians over ``(doa, doa_rate, f0)``. The
multi-target density is a weighted list of hypotheses, each a tuple of
per-label states whose association histories are carried along. Track state
objects are shared between hypotheses that have the same history, so a
hypothesis is identified by the identities of its states.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .assignment import enumerate_assignments, kbest_subsets, murty

log = logging.getLogger(__name__)

H_OBS = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
H_DOA = np.array([[1.0, 0.0, 0.0]])


def wrap_deg(a):
    """Wrap to [0, 360). ``np.mod`` alone returns 360.0 for tiny negative inputs."""
    w = np.mod(a, 360.0)
    return np.where(w >= 360.0, 0.0, w) if np.ndim(w) else (0.0 if w >= 360.0 else w)


def angle_diff(a, b):
    """Signed minimal difference ``a - b`` in degrees, in [-180, 180)."""
    return (np.asarray(a, dtype=float) - b + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class FilterParams:
    p_survival: float = 0.75
    clutter_rate: float = 0.044
    doa_span: float = 360.0
    pitch_span: float = 450.0
    pd_max: float = 0.98
    pd_center: float = 280.0
    pd_std: float = 30.0
    sigma_doa: float = 2.0
    sigma_f0: float = 10.0
    t_delta: float = 0.1
    beta: float = 0.2
    sigma_rate: float = 10.0
    sigma_f0_walk: float = 30.0
    birth_std_doa: float = 5.0
    birth_std_rate: float = 10.0
    birth_std_f0: float = 30.0
    birth_weight: float = 0.1
    h_max: int = 300
    prune_threshold: float = 1e-5
    solver: str = "auto"

    @property
    def clutter_density(self) -> float:
        """Uniform clutter intensity per (degree * Hz)."""
        return self.clutter_rate / (self.doa_span * self.pitch_span)

    @property
    def clutter_density_doa(self) -> float:
        """Clutter intensity per degree, for observations without pitch."""
        return self.clutter_rate / self.doa_span

    def transition_matrix(self) -> np.ndarray:
        a = math.exp(-self.beta * self.t_delta)
        return np.array([[1.0, self.t_delta, 0.0], [0.0, a, 0.0], [0.0, 0.0, 1.0]])

    def process_noise(self) -> np.ndarray:
        q_rate = self.sigma_rate ** 2 * (1.0 - math.exp(-2.0 * self.beta * self.t_delta))
        return np.diag([0.0, q_rate, self.sigma_f0_walk ** 2])

    def birth_cov(self) -> np.ndarray:
        return np.diag([self.birth_std_doa, self.birth_std_rate, self.birth_std_f0]) ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FilterParams":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown filter parameters: {sorted(extra)}")
        p = cls(**d)
        p.validate()
        return p

    def validate(self):
        for name in ("p_survival", "pd_max", "birth_weight"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.clutter_rate < 0 or self.sigma_doa <= 0 or self.sigma_f0 <= 0:
            raise ValueError("clutter_rate must be >= 0 and measurement stds > 0")
        if self.h_max < 1:
            raise ValueError("h_max must be >= 1")
        if self.solver not in ("auto", "murty", "exhaustive"):
            raise ValueError(f"unknown solver {self.solver!r}")

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FilterParams":
        text = Path(path).read_text()
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}:{e.lineno}: {e.msg}") from None
        return cls.from_dict(d)


@dataclass
class FeatureObservation:
    doa: float
    pitch: float | None
    sound: np.ndarray | None = None
    frame_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.doa < 360.0:
            raise ValueError(f"doa {self.doa} outside [0, 360)")
        if self.pitch is not None and not 50.0 <= self.pitch <= 500.0:
            raise ValueError(f"pitch {self.pitch} outside [50, 500] Hz")


@dataclass(eq=False)
class TargetState:
    label: tuple[int, int]
    mean: np.ndarray
    cov: np.ndarray
    sound: np.ndarray | None = None
    history: tuple[int, ...] = ()   # measurement index per update, -1 for a miss

    @property
    def assoc(self) -> int | None:
        return self.history[-1] if self.history else None


@dataclass(eq=False)
class Hypothesis:
    weight: float
    tracks: tuple[TargetState, ...] = ()

    @property
    def labels(self) -> tuple:
        return tuple(t.label for t in self.tracks)

    @property
    def key(self) -> tuple:
        return tuple(id(t) for t in self.tracks)


@dataclass
class GlmbState:
    hypotheses: list[Hypothesis] = field(default_factory=lambda: [Hypothesis(1.0)])
    frame_index: int = -1
    birth_candidates: list[FeatureObservation] = field(default_factory=list)

    def weights(self) -> np.ndarray:
        return np.array([h.weight for h in self.hypotheses])

    def cardinality_distribution(self) -> np.ndarray:
        n = max(len(h.tracks) for h in self.hypotheses)
        dist = np.zeros(n + 1)
        for h in self.hypotheses:
            dist[len(h.tracks)] += h.weight
        return dist


@dataclass(frozen=True)
class TrackEstimate:
    label: tuple[int, int]
    doa: float
    pitch: float
    doa_std: float
    pitch_std: float
    sound: np.ndarray | None
    assoc: int | None


def detection_prob(f0, params: FilterParams = FilterParams()):
    """Pitch-dependent detection probability, peaked at ``pd_center``."""
    f0 = np.asarray(f0, dtype=float)
    with np.errstate(invalid="ignore"):
        z = (f0 - params.pd_center) / params.pd_std
    pd = params.pd_max * np.exp(-0.5 * np.where(np.isfinite(z), z, np.inf) ** 2)
    pd = np.clip(pd, 0.0, params.pd_max)
    return float(pd) if pd.ndim == 0 else pd


def transition(state: TargetState, params: FilterParams = FilterParams()) -> TargetState:
    """Langevin DOA and random-walk pitch prediction; the sound is dropped."""
    F = params.transition_matrix()
    m = F @ state.mean
    m[0] = wrap_deg(m[0])
    P = F @ state.cov @ F.T + params.process_noise()
    return TargetState(state.label, m, 0.5 * (P + P.T), None, state.history)


def _gauss(x, var):
    return math.exp(-0.5 * x * x / var) / math.sqrt(2 * math.pi * var)


def doa_likelihood(obs: FeatureObservation, state: TargetState, params: FilterParams = FilterParams()):
    var = state.cov[0, 0] + params.sigma_doa ** 2
    return _gauss(float(angle_diff(obs.doa, state.mean[0])), var)


def pitch_likelihood(obs: FeatureObservation, state: TargetState, params: FilterParams = FilterParams()):
    if obs.pitch is None:
        return 1.0
    var = state.cov[2, 2] + params.sigma_f0 ** 2
    return _gauss(obs.pitch - state.mean[2], var)


def _innovation(obs, state, params):
    if obs.pitch is None:
        H = H_DOA
        R = np.array([[params.sigma_doa ** 2]])
        nu = np.array([angle_diff(obs.doa, state.mean[0])])
    else:
        H = H_OBS
        R = np.diag([params.sigma_doa ** 2, params.sigma_f0 ** 2])
        nu = np.array([angle_diff(obs.doa, state.mean[0]), obs.pitch - state.mean[2]])
    S = H @ state.cov @ H.T + R
    return H, R, nu, S


def likelihood(obs: FeatureObservation, state: TargetState, params: FilterParams = FilterParams()) -> float:
    """Predictive Gaussian likelihood of ``obs`` under the state density.

    Evaluated jointly over (DOA, pitch) with the innovation covariance; with
    the block-diagonal models used here it equals
    ``doa_likelihood * pitch_likelihood``. Without pitch only the DOA factor
    remains.
    """
    _, _, nu, S = _innovation(obs, state, params)
    if len(nu) == 1:
        return _gauss(nu[0], S[0, 0])
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    q = (S[1, 1] * nu[0] ** 2 - (S[0, 1] + S[1, 0]) * nu[0] * nu[1] + S[0, 0] * nu[1] ** 2) / det
    return math.exp(-0.5 * q) / (2 * math.pi * math.sqrt(det))


def kalman_update(obs: FeatureObservation, state: TargetState, params: FilterParams,
                  index: int) -> TargetState:
    H, R, nu, S = _innovation(obs, state, params)
    PHt = state.cov @ H.T
    K = PHt @ np.linalg.inv(S)
    m = state.mean + K @ nu
    m[0] = wrap_deg(m[0])
    A = np.eye(3) - K @ H
    # Joseph form keeps the covariance symmetric PSD
    P = A @ state.cov @ A.T + K @ R @ K.T
    return TargetState(state.label, m, 0.5 * (P + P.T), obs.sound, state.history + (index,))


def _normalize(hyps: list[Hypothesis], logw: np.ndarray) -> list[Hypothesis]:
    logw = np.asarray(logw, dtype=float)
    top = logw.max()
    w = np.exp(logw - top)
    w /= w.sum()
    for h, wi in zip(hyps, w):
        h.weight = float(wi)
    return hyps


def _merge_truncate(hyps, logw, h_max, prune=0.0):
    """Merge equal hypotheses, keep the ``h_max`` heaviest above ``prune``."""
    merged: dict[tuple, int] = {}
    out, lw = [], []
    for h, l in zip(hyps, logw):
        j = merged.get(h.key)
        if j is None:
            merged[h.key] = len(out)
            out.append(h)
            lw.append(l)
        else:
            lw[j] = np.logaddexp(lw[j], l)
    lw = np.array(lw)
    order = np.argsort(-lw, kind="stable")[:h_max]
    out = [out[i] for i in order]
    lw = lw[order]
    out = _normalize(out, lw)
    if prune > 0:
        keep = [h for h in out if h.weight >= prune] or out[:1]
        if len(keep) < len(out):
            out = _normalize(keep, np.log([h.weight for h in keep]))
    return out


def birth_states(candidates, frame_index: int, params: FilterParams) -> list[TargetState]:
    """One birth component per pitched observation of the previous frame."""
    out = []
    P = params.birth_cov()
    for i, z in enumerate(candidates):
        if z.pitch is None:
            continue
        out.append(TargetState((frame_index, i), np.array([z.doa, 0.0, z.pitch]), P.copy()))
    return out


def predict(state: GlmbState, params: FilterParams = FilterParams()) -> GlmbState:
    """Survival / birth branching of every hypothesis, then truncation."""
    k = state.frame_index + 1
    births = birth_states(state.birth_candidates, k, params) if params.birth_weight > 0 else []
    predicted: dict[int, TargetState] = {}
    hyps, logw = [], []
    for h in state.hypotheses:
        if h.weight <= 0:
            continue
        for t in h.tracks:
            if id(t) not in predicted:
                predicted[id(t)] = transition(t, params)
        probs = [params.p_survival] * len(h.tracks) + [params.birth_weight] * len(births)
        n_keep = max(1, math.ceil(params.h_max * h.weight))
        cands = list(h.tracks) + births
        for lp, inc in kbest_subsets(probs, n_keep):
            tracks = tuple(
                predicted[id(c)] if i < len(h.tracks) else c
                for i, c in enumerate(cands) if inc[i]
            )
            hyps.append(Hypothesis(0.0, tracks))
            logw.append(math.log(h.weight) + lp)
    if not hyps:
        hyps, logw = [Hypothesis(0.0)], [0.0]
    out = _merge_truncate(hyps, logw, params.h_max)
    return GlmbState(out, k, [])


def _cost_rows(tracks, obs, params):
    """Per-track negative log likelihood-ratio rows and miss costs."""
    m = len(obs)
    kappa = np.array([params.clutter_density if z.pitch is not None else params.clutter_density_doa
                      for z in obs])
    kappa = np.maximum(kappa, 1e-300)
    rows, miss = {}, {}
    for t in tracks:
        if id(t) in rows:
            continue
        pd = detection_prob(t.mean[2], params)
        r = np.full(m, np.inf)
        if pd > 0:
            for j, z in enumerate(obs):
                g = likelihood(z, t, params)
                if g > 0:
                    r[j] = -(math.log(pd) + math.log(g) - math.log(kappa[j]))
        rows[id(t)] = r
        miss[id(t)] = -math.log1p(-pd) if pd < 1 else np.inf
    return rows, miss


def _ranked(cost, k, solver):
    n, mm = cost.shape
    m = mm - n
    if solver == "exhaustive" or (solver == "auto" and n <= 3 and m <= 3):
        return enumerate_assignments(cost, k)
    return murty(cost, k)


def update(state: GlmbState, observations, params: FilterParams = FilterParams(),
           frame_len: int = 4800) -> GlmbState:
    """Bayes update of every hypothesis over its ranked association maps.

    Weights use the ratio form ``p_D g / kappa`` per assigned measurement
    and ``1 - p_D`` per missed track; the common clutter factor of the frame
    cancels on normalisation.
    """
    obs = list(observations)
    for z in obs:
        if z.frame_index != state.frame_index:
            raise ValueError(
                f"observation frame {z.frame_index} does not match filter frame {state.frame_index}")
    m = len(obs)
    all_tracks = [t for h in state.hypotheses for t in h.tracks]
    rows, miss = _cost_rows(all_tracks, obs, params)
    zero = np.zeros(frame_len)
    zero.setflags(write=False)
    upd: dict[tuple[int, int], TargetState] = {}

    def updated(t, j):
        key = (id(t), j)
        s = upd.get(key)
        if s is None:
            if j < 0:
                s = TargetState(t.label, t.mean.copy(), t.cov.copy(), zero, t.history + (-1,))
            else:
                s = kalman_update(obs[j], t, params, j)
            upd[key] = s
        return s

    hyps, logw = [], []
    for h in state.hypotheses:
        if h.weight <= 0:
            continue
        n = len(h.tracks)
        lw0 = math.log(h.weight)
        if n == 0:
            hyps.append(Hypothesis(0.0, ()))
            logw.append(lw0)
            continue
        cost = np.full((n, m + n), np.inf)
        for i, t in enumerate(h.tracks):
            cost[i, :m] = rows[id(t)]
            cost[i, m + i] = miss[id(t)]
        k = max(1, math.ceil(params.h_max * h.weight))
        for total, cols in _ranked(cost, k, params.solver):
            tracks = tuple(updated(t, int(c) if c < m else -1) for t, c in zip(h.tracks, cols))
            hyps.append(Hypothesis(0.0, tracks))
            logw.append(lw0 - total)
    if not hyps:
        log.warning("no feasible association at frame %d; resetting to the empty hypothesis",
                    state.frame_index)
        hyps, logw = [Hypothesis(0.0)], [0.0]
    out = _merge_truncate(hyps, logw, params.h_max, params.prune_threshold)
    return GlmbState(out, state.frame_index, obs)


def map_hypothesis(state: GlmbState) -> Hypothesis:
    """Heaviest hypothesis among those with the MAP cardinality."""
    n_star = int(np.argmax(state.cardinality_distribution()))
    cands = [h for h in state.hypotheses if len(h.tracks) == n_star]
    return max(cands, key=lambda h: h.weight)


def extract_estimates(state: GlmbState) -> list[TrackEstimate]:
    h = map_hypothesis(state)
    out = []
    for t in sorted(h.tracks, key=lambda t: t.label):
        out.append(TrackEstimate(
            t.label, float(t.mean[0]), float(t.mean[2]),
            float(np.sqrt(max(t.cov[0, 0], 0.0))), float(np.sqrt(max(t.cov[2, 2], 0.0))),
            t.sound, t.assoc))
    return out


class GlmbFilter:
    """Sequential owner of a :class:`GlmbState`; call :meth:`step` once per frame."""

    def __init__(self, params: FilterParams = FilterParams(), frame_len: int = 4800):
        self.params = params
        self.frame_len = frame_len
        self.state = GlmbState()

    def step(self, observations) -> list[TrackEstimate]:
        self.state = predict(self.state, self.params)
        self.state = update(self.state, observations, self.params, self.frame_len)
        return extract_estimates(self.state)


def assemble_streams(estimates_per_frame, frame_len: int = 4800):
    """Concatenate per-label sound blocks in frame order.

    Parameters
    ----------
    estimates_per_frame : list (one entry per frame) of lists of TrackEstimate

    Returns
    -------
    streams : dict label -> 1-D array of ``n_frames * frame_len`` samples,
        zero wherever the label was not reported or carried no sound.
    table : list of ``(frame, label, doa, pitch)`` rows.
    """
    n = len(estimates_per_frame)
    streams: dict[tuple[int, int], np.ndarray] = {}
    table = []
    for k, ests in enumerate(estimates_per_frame):
        for e in ests:
            buf = streams.get(e.label)
            if buf is None:
                buf = streams[e.label] = np.zeros(n * frame_len)
            if e.sound is not None:
                s = np.asarray(e.sound)[:frame_len]
                buf[k * frame_len:k * frame_len + len(s)] = s
            table.append((k, e.label, e.doa, e.pitch))
    return streams, table
