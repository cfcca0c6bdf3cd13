"""File formats: WAV, truth/track CSV, JSON dumps, atomic output staging."""
from __future__ import annotations

import csv
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class ConfigError(Exception):
    """Bad or missing configuration; the CLI exits with status 1."""


class DataError(Exception):
    """Input data inconsistent with the configuration; exit status 2."""


TRUTH_HEADER = ["frame_index", "source_id", "doa_deg", "pitch_hz", "active_flag"]
TRACK_HEADER = ["frame", "time_s", "label", "doa_deg", "doa_std_deg", "pitch_hz",
                "pitch_std_hz", "association"]


def label_str(label) -> str:
    return f"{label[0]}-{label[1]}"


def parse_label(s: str):
    a, b = s.split("-")
    return int(a), int(b)


def write_wav(path, data, fs):
    """Float32 WAV; ``data`` is ``(N,)`` or channel-major ``(M, N)``."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data.T
    wavfile.write(str(path), int(round(fs)), np.ascontiguousarray(data))


def read_wav(path):
    """Returns ``(fs, data)`` with ``data`` float64, channel-major for multichannel files."""
    try:
        fs, data = wavfile.read(str(path))
    except FileNotFoundError as exc:
        raise DataError(f"{path}: no such file") from exc
    except ValueError as exc:
        raise DataError(f"{path}: unreadable WAV ({exc})") from exc
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / np.iinfo(data.dtype).max
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data.T
    return float(fs), data


def write_truth_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for k, sid, doa, pitch, active in rows:
            w.writerow([k, sid, f"{doa:.4f}", f"{pitch:.3f}", int(bool(active))])


def read_truth_csv(path):
    rows = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != TRUTH_HEADER:
            raise DataError(f"{path}:1: unexpected header {header}")
        for i, row in enumerate(r, start=2):
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]), float(row[3]), row[4] == "1"))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{i}: {exc}") from exc
    return rows


def write_tracks_csv(path, frames, frame_s):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACK_HEADER)
        for fr in frames:
            for e in fr.estimates:
                assoc = "miss" if e.assoc is None or e.assoc < 0 else str(e.assoc)
                w.writerow([fr.frame, f"{fr.frame * frame_s:.3f}", label_str(e.label),
                            f"{e.doa:.4f}", f"{e.doa_std:.4f}", f"{e.pitch:.3f}",
                            f"{e.pitch_std:.3f}", assoc])


def read_tracks_csv(path):
    """Track table rows ``(frame, label, doa, pitch)``."""
    rows = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != TRACK_HEADER:
            raise DataError(f"{path}:1: unexpected header {header}")
        for i, row in enumerate(r, start=2):
            try:
                rows.append((int(row[0]), parse_label(row[2]), float(row[3]), float(row[5])))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{i}: {exc}") from exc
    return rows


def write_spectrum_csv(path, spectra):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame", "doa_deg", "value"])
        for s in spectra:
            for g, v in zip(s.grid, s.values):
                w.writerow([s.frame_index, f"{g:.3f}", f"{v:.6e}"])


def write_rows_csv(path, header, rows, fmt=None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row if fmt is None else [fm.format(x) for fm, x in zip(fmt, row)])


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    Path(path).write_text(text + "\n")


def read_json(path, error=ConfigError):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise error(f"{path}: no such file") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise error(f"{path}:{exc.lineno}: {exc.msg}") from exc


@contextmanager
def staged_output(out_dir):
    """Write into a scratch directory; move files into ``out_dir`` only on success."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        yield tmp
        for p in sorted(tmp.rglob("*")):
            if p.is_file():
                dest = out_dir / p.relative_to(tmp)
                dest.parent.mkdir(parents=True, exist_ok=True)
                os.replace(p, dest)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
