"""Command-line driver: simulate, track, evaluate, run-all, beam-pattern.

Exit status is 0 on success, 1 for configuration errors and 2 for data
errors. Every command stages its outputs and moves them into ``--out-dir``
only once all of them have been written.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .beamform import DesignParams, beam_pattern, design_wls_weights
from .evaluation import (OSPA_CUTOFF, OSPA_ORDER, label_assignments, match_labels, onset_frames,
                         ospa_series, separation_scores, steady_mask)
from .glmb import FilterParams, assemble_streams
from .pipeline import FrontEndParams, track
from .scene import Scenario, frame_truth, reference_scenario_path, render_mixture, source_signals

log = logging.getLogger("mfglmb")

MIXTURE = "mixture.wav"
CENTER = "center_mixture.wav"
TRUTH = "truth.csv"
TRACKS = "tracks.csv"
DIAG = "diagnostics.json"
METRICS = "metrics.json"
SPECTRUM = "spectrum.csv"


@dataclass
class RunConfig:
    scenario: Scenario
    filter_params: FilterParams = field(default_factory=FilterParams)
    front_end: FrontEndParams = field(default_factory=FrontEndParams)
    out_dir: Path = Path("out")
    seed: int | None = None

    @classmethod
    def load(cls, path=None, out_dir=None, seed=None) -> "RunConfig":
        """Read a run config or a bare scenario file; ``None`` means the reference scenario.

        A run config is a JSON object with ``scenario`` (path, relative to
        the config file), optional ``filter_params`` (path or inline object),
        ``front_end`` (object), ``out_dir`` and ``seed``.
        """
        path = Path(path) if path is not None else reference_scenario_path()
        d = io.read_json(path)
        base = path.parent
        try:
            if "sources" in d or "duration_s" in d:
                cfg = cls(Scenario.from_dict(d))
            else:
                if "scenario" not in d:
                    raise io.ConfigError(f"{path}: needs 'scenario' or scenario fields")
                sp = base / d["scenario"]
                cfg = cls(Scenario.from_dict(io.read_json(sp)))
                fp = d.get("filter_params")
                if isinstance(fp, str):
                    cfg.filter_params = FilterParams.from_dict(io.read_json(base / fp))
                elif isinstance(fp, dict):
                    cfg.filter_params = FilterParams.from_dict(fp)
                if "front_end" in d:
                    cfg.front_end = FrontEndParams.from_dict(d["front_end"])
                if "out_dir" in d:
                    cfg.out_dir = base / d["out_dir"]
                cfg.seed = d.get("seed")
        except io.ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise io.ConfigError(f"{path}: {exc}") from exc
        if out_dir is not None:
            cfg.out_dir = Path(out_dir)
        if seed is not None:
            cfg.seed = seed
        if cfg.seed is not None:
            cfg.scenario = cfg.scenario.with_seed(cfg.seed)
        return cfg


def cmd_simulate(cfg: RunConfig, args) -> int:
    scn = cfg.scenario
    mix, images = render_mixture(scn, return_images=True)
    dry = source_signals(scn)
    fs = scn.array.sample_rate
    noise0 = mix[0] - sum((im[0] for im in images), np.zeros(scn.n_samples))
    with io.staged_output(cfg.out_dir) as tmp:
        io.write_wav(tmp / MIXTURE, mix, fs)
        io.write_wav(tmp / CENTER, sum(dry, np.zeros(scn.n_samples)) + noise0, fs)
        for i, s in enumerate(dry):
            io.write_wav(tmp / f"source_{i}.wav", s, fs)
        io.write_truth_csv(tmp / TRUTH, frame_truth(scn, cfg.front_end.frame_s))
        io.write_json(tmp / "scenario.json", scn.to_dict())
    log.info("simulated %d sources, %.1f s -> %s", len(scn.sources), scn.duration_s, cfg.out_dir)
    return 0


def _diagnostics(res):
    return {
        "frames": [
            {"frame": f.frame,
             "n_observations": len(f.observations),
             "cardinality": [round(float(p), 12) for p in f.cardinality],
             "top_weights": [round(float(w), 12) for w in f.top_weights]}
            for f in res.frames
        ],
    }


def cmd_track(cfg: RunConfig, args) -> int:
    mix_path = Path(args.mixture) if getattr(args, "mixture", None) else cfg.out_dir / MIXTURE
    fs, mix = io.read_wav(mix_path)
    arr = cfg.scenario.array
    if fs != arr.sample_rate:
        raise io.DataError(f"{mix_path}: sample rate {fs} Hz, array expects {arr.sample_rate} Hz")
    mix = np.atleast_2d(mix)
    if mix.shape[0] != arr.n_mics:
        raise io.DataError(f"{mix_path}: {mix.shape[0]} channels, array has {arr.n_mics}")
    res = track(mix, arr, cfg.front_end, cfg.filter_params, keep_spectra=args.dump_spectrum or args.figures)
    streams, table = assemble_streams(res.estimates, res.frame_len)
    with io.staged_output(cfg.out_dir) as tmp:
        io.write_tracks_csv(tmp / TRACKS, res.frames, cfg.front_end.frame_s)
        io.write_json(tmp / DIAG, _diagnostics(res))
        for label, sig in streams.items():
            io.write_wav(tmp / f"track_{io.label_str(label)}.wav", sig, fs)
        if args.dump_spectrum:
            io.write_spectrum_csv(tmp / SPECTRUM, [f.spectrum for f in res.frames])
        if args.figures:
            from . import plotting
            plotting.plot_spectrum(tmp / "spectrum.png", [f.spectrum for f in res.frames],
                                   cfg.front_end.frame_s)
            truth_path = cfg.out_dir / TRUTH
            truth = io.read_truth_csv(truth_path) if truth_path.exists() else []
            plotting.plot_tracks(tmp / "tracks.png", table, truth, cfg.front_end.frame_s)
    log.info("tracked %d frames, %d labels in %.1f s", len(res.frames), len(streams), res.elapsed_s)
    return 0


def evaluate_dir(out_dir: Path, frame_s: float = 0.1, max_lag: int = 16) -> dict:
    """Metrics for a directory holding simulate and track outputs."""
    truth = io.read_truth_csv(out_dir / TRUTH)
    tracks = io.read_tracks_csv(out_dir / TRACKS)
    n_frames = max(r[0] for r in truth) + 1 if truth else 0
    if any(k >= n_frames or k < 0 for k, *_ in tracks):
        raise io.DataError(f"{out_dir / TRACKS}: frames outside the truth range [0, {n_frames})")
    series = ospa_series(truth, tracks, n_frames)
    mask = steady_mask(truth, n_frames)
    totals = np.array([r.total for r in series])
    match = match_labels(truth, tracks)
    refs, streams = {}, {}
    for label, sid in match.items():
        _, refs[sid] = io.read_wav(out_dir / f"source_{sid}.wav")
        _, streams[label] = io.read_wav(out_dir / f"track_{io.label_str(label)}.wav")
    _, center = io.read_wav(out_dir / CENTER)
    ref_list = [refs.get(i) for i in range(max(refs, default=-1) + 1)]
    sep = separation_scores(streams, ref_list, center, match, max_lag)
    first = {}
    for sid, ks in onset_frames(truth).items():
        labs = [l for l, s in match.items() if s == sid]
        rep = [k for k, l, _, _ in tracks if l in labs]
        first[str(sid)] = {"first_voiced_frame": ks[0], "first_reported_frame": min(rep) if rep else None}
    assign = label_assignments(truth, tracks, n_frames)
    return {
        "ospa": {
            "cutoff_deg": OSPA_CUTOFF,
            "order": OSPA_ORDER,
            "per_frame": [
                {"frame": k, "total": r.total, "localization": r.localization_component,
                 "cardinality": r.cardinality_component, "steady": bool(mask[k])}
                for k, r in enumerate(series)
            ],
            "mean": float(totals.mean()) if len(totals) else 0.0,
            "steady_mean": float(totals[mask].mean()) if mask.any() else 0.0,
            "max": float(totals.max()) if len(totals) else 0.0,
        },
        "labels": {io.label_str(l): sorted(int(s) for s in v) for l, v in sorted(assign.items())},
        "n_labels": len({l for _, l, _, _ in tracks}),
        "separation": {io.label_str(l): v for l, v in sorted(sep.items())},
        "mean_si_sdr_improvement_db": (float(np.mean([v["improvement_db"] for v in sep.values()]))
                                       if sep else math.nan),
        "confirmation": first,
    }


def cmd_evaluate(cfg: RunConfig, args) -> int:
    metrics = evaluate_dir(cfg.out_dir, cfg.front_end.frame_s)
    with io.staged_output(cfg.out_dir) as tmp:
        io.write_json(tmp / METRICS, metrics)
        if args.figures:
            from . import plotting
            from .metrics import OspaResult
            res = [OspaResult(r["total"], r["localization"], r["cardinality"])
                   for r in metrics["ospa"]["per_frame"]]
            plotting.plot_ospa(tmp / "ospa.png", res, cfg.front_end.frame_s, OSPA_CUTOFF)
    o = metrics["ospa"]
    print(f"labels={metrics['n_labels']} ospa_mean={o['mean']:.3f} ospa_steady={o['steady_mean']:.3f} "
          f"si_sdr_gain={metrics['mean_si_sdr_improvement_db']:.2f} dB")
    return 0


def cmd_run_all(cfg: RunConfig, args) -> int:
    for step in (cmd_simulate, cmd_track, cmd_evaluate):
        rc = step(cfg, args)
        if rc:
            return rc
    return 0


def cmd_beam_pattern(cfg: RunConfig, args) -> int:
    arr = cfg.scenario.array
    w = design_wls_weights(arr, args.doa % 360.0, DesignParams())
    rows = beam_pattern(w, arr)
    with io.staged_output(cfg.out_dir) as tmp:
        io.write_rows_csv(tmp / "beam_pattern.csv", ["freq_hz", "doa_deg", "gain_db"], rows,
                          ["{:.2f}", "{:.1f}", "{:.4f}"])
        if args.figures:
            from . import plotting
            plotting.plot_beam_pattern(tmp / "beam_pattern.png", rows, args.doa % 360.0)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "run-all": cmd_run_all,
    "beam-pattern": cmd_beam_pattern,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfglmb", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="run config or scenario JSON (default: reference scenario)")
        s.add_argument("--out-dir", help="output directory")
        s.add_argument("--seed", type=int, help="re-seed noise and source phases")
        s.add_argument("--dump-spectrum", action="store_true", help="write per-frame DOA spectra as CSV")
        s.add_argument("--figures", action="store_true", help="render PNG figures next to the data")
        if name == "track":
            s.add_argument("--mixture", help="multichannel WAV (default: <out-dir>/mixture.wav)")
        if name == "beam-pattern":
            s.add_argument("--doa", type=float, default=0.0, help="look direction in degrees")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, args.out_dir, args.seed)
        return COMMANDS[args.command](cfg, args)
    except io.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (io.DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
