"""Scoring a tracker run against scenario ground truth."""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .metrics import circular_distance, ospa, si_sdr

OSPA_CUTOFF = 5.0
OSPA_ORDER = 1.0
SETTLE_FRAMES = 3          # 0.3 s at the 0.1 s frame clock
MATCH_DOA_SCALE = 2.0      # degrees, measurement std
MATCH_PITCH_SCALE = 10.0   # Hz, measurement std
MATCH_GATE_DEG = 10.0


def truth_by_frame(truth_rows, n_frames):
    """``{frame: [(source_id, doa, pitch), ...]}`` for active sources only."""
    out = {k: [] for k in range(n_frames)}
    for k, sid, doa, pitch, active in truth_rows:
        if active and k in out:
            out[k].append((int(sid), float(doa), float(pitch)))
    return out


def tracks_by_frame(track_rows, n_frames):
    out = {k: [] for k in range(n_frames)}
    for k, label, doa, pitch in track_rows:
        if k in out:
            out[k].append((label, float(doa), float(pitch)))
    return out


def onset_frames(truth_rows):
    """Frames where a source becomes active after being inactive (or at start)."""
    by_src = defaultdict(dict)
    for k, sid, _, _, active in truth_rows:
        by_src[int(sid)][int(k)] = bool(active)
    onsets = defaultdict(list)
    for sid, fr in by_src.items():
        prev = False
        for k in sorted(fr):
            if fr[k] and not prev:
                onsets[sid].append(k)
            prev = fr[k]
    return dict(onsets)


def ospa_series(truth_rows, track_rows, n_frames, cutoff=OSPA_CUTOFF, order=OSPA_ORDER):
    tb = truth_by_frame(truth_rows, n_frames)
    eb = tracks_by_frame(track_rows, n_frames)
    return [ospa([d for _, d, _ in tb[k]], [d for _, d, _ in eb[k]], cutoff, order)
            for k in range(n_frames)]


def steady_mask(truth_rows, n_frames, settle=SETTLE_FRAMES):
    """True for frames at least ``settle`` frames after every first detection.

    Frames before any source speaks count as steady; a frame is excluded only
    while some source active in it is within ``settle`` frames of its first
    voiced frame.
    """
    first = {sid: ks[0] for sid, ks in onset_frames(truth_rows).items()}
    tb = truth_by_frame(truth_rows, n_frames)
    mask = np.ones(n_frames, dtype=bool)
    for k in range(n_frames):
        for sid, _, _ in tb[k]:
            if k < first[sid] + settle:
                mask[k] = False
    return mask


def label_assignments(truth_rows, track_rows, n_frames):
    """Per label, the set of truth sources it was nearest to, frame by frame.

    Each reported estimate is gated to active sources within
    ``MATCH_GATE_DEG`` and assigned to the one nearest in scaled DOA/pitch.
    """
    tb = truth_by_frame(truth_rows, n_frames)
    out = defaultdict(set)
    for k, label, doa, pitch in track_rows:
        near = [s for s in tb.get(k, []) if circular_distance(s[1], doa) < MATCH_GATE_DEG]
        if not near:
            continue
        sid = min(near, key=lambda s: _scaled(s[1], s[2], doa, pitch))[0]
        out[label].add(sid)
    return dict(out)


def _scaled(d1, p1, d2, p2):
    return math.hypot(float(circular_distance(d1, d2)) / MATCH_DOA_SCALE,
                      (p1 - p2) / MATCH_PITCH_SCALE)


def match_labels(truth_rows, track_rows):
    """Greedy one-to-one label -> source matching on median DOA and pitch."""
    per_label = defaultdict(list)
    for _, label, doa, pitch in track_rows:
        per_label[label].append((doa, pitch))
    per_src = defaultdict(list)
    for _, sid, doa, pitch, active in truth_rows:
        if active:
            per_src[int(sid)].append((doa, pitch))
    lab_med = {l: _circ_median(v) for l, v in per_label.items()}
    src_med = {s: _circ_median(v) for s, v in per_src.items()}
    pairs = sorted(
        (_scaled(sd, sp, ld, lp), str(l), l, s)
        for l, (ld, lp) in lab_med.items() for s, (sd, sp) in src_med.items()
    )
    used_l, used_s, match = set(), set(), {}
    for _, _, l, s in pairs:
        if l in used_l or s in used_s:
            continue
        match[l] = s
        used_l.add(l)
        used_s.add(s)
    return match


def _circ_median(rows):
    a = np.asarray(rows, dtype=float)
    ref = a[0, 0]
    doa = np.mod(ref + np.median((a[:, 0] - ref + 180.0) % 360.0 - 180.0), 360.0)
    return float(doa), float(np.median(a[:, 1]))


def separation_scores(streams, references, mixture, match, max_lag=16):
    """SI-SDR of each matched stream and of the mixture against the same source.

    ``streams`` maps label -> signal, ``references`` is the list of dry
    source signals, ``mixture`` the single-channel baseline. Streams and
    references are truncated to the shorter length.
    """
    out = {}
    for label, sid in match.items():
        ref = references[sid]
        est = streams[label]
        n = min(len(ref), len(est), len(mixture))
        sdr = si_sdr(ref[:n], est[:n], max_lag)
        base = si_sdr(ref[:n], mixture[:n], max_lag)
        out[label] = {"source": int(sid), "si_sdr_db": sdr, "mixture_si_sdr_db": base,
                      "improvement_db": sdr - base}
    return out
