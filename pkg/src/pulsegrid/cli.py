"""Command line entry point: ``pulsegrid {gen,replay,eval,bench,run}``.

Exit status is 0 on success, 1 for usage or configuration problems and 2
for runtime failures such as malformed inputs or an occupied port.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from pathlib import Path

from . import evaluation, ingest
from .config import SOURCES, Settings, load_settings
from .errors import ConfigError, PulseGridError
from .pipeline import DataContainer, Processor, run_replay, run_wallclock

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, source=True):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--method", choices=("fft", "welch"))
    p.add_argument("--seed", type=int)
    if source:
        p.add_argument("--source", choices=SOURCES)
        p.add_argument("--trace", help="trace file for --source trace")
        p.add_argument("--frames-dir", help="frame directory for --source frames")
        p.add_argument("--landmarks", help="landmark file for --source frames")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pulsegrid", description="Camera-based heart and breathing rate.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic trace (and optional reference)")
    g.add_argument("--out", required=True)
    g.add_argument("--ref", help="also write a 1 Hz reference HR file here")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--hr", type=float, default=72.0)
    g.add_argument("--rr", type=float, default=15.0)
    g.add_argument("--fs", type=float, default=30.0)
    g.add_argument("--duration", type=float, default=60.0)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--drift", type=float, default=0.0)
    g.add_argument("--regions", type=int, default=1)

    r = sub.add_parser("replay", help="deterministic logical-time replay")
    _common(r)
    r.add_argument("--out", help="estimates file (t_s,hr_bpm,rr_brpm,stable)")

    e = sub.add_parser("eval", help="MAE, RMSE and PCC against a reference")
    e.add_argument("--estimates", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--stable-only", action="store_true")
    e.add_argument("--out", help="also write key=value lines here")

    b = sub.add_parser("bench", help="per-stage timing table")
    _common(b)
    b.add_argument("--frames", type=int, default=1000)
    b.add_argument("--out")

    w = sub.add_parser("run", help="wall-clock service with REST and MJPEG servers")
    _common(w)
    w.add_argument("--rest-port", type=int)
    w.add_argument("--stream-port", type=int)
    w.add_argument("--duration", type=float, help="stop after this many seconds")
    w.add_argument("--out", help="write the run report here")
    return parser


def _settings(args) -> Settings:
    s = load_settings(args.config)
    return s.updated(
        method=args.method, seed=args.seed,
        source=getattr(args, "source", None), trace=getattr(args, "trace", None),
        frames_dir=getattr(args, "frames_dir", None),
        landmarks=getattr(args, "landmarks", None),
        rest_port=getattr(args, "rest_port", None),
        stream_port=getattr(args, "stream_port", None),
    )


def _check_paths(s: Settings):
    if s.source == "trace":
        if not s.trace:
            raise UsageError("--source trace needs --trace PATH")
        if not Path(s.trace).is_file():
            raise UsageError(f"trace file not found: {s.trace}")
    if s.source == "frames":
        if not (s.frames_dir and s.landmarks):
            raise UsageError("--source frames needs --frames-dir and --landmarks")
        if not Path(s.frames_dir).is_dir() or not Path(s.landmarks).is_file():
            raise UsageError("frame directory or landmark file not found")


def open_source(s: Settings, duration_s=None):
    if s.source == "trace":
        return ingest.read_trace(s.trace)
    if s.source == "frames":
        return ingest.read_frames_with_landmarks(s.frames_dir, s.landmarks,
                                                 1000.0 / s.tick_period_ms)
    cfg = ingest.SyntheticConfig(
        hr_bpm=s.synthetic_hr_bpm, rr_brpm=s.synthetic_rr_brpm,
        fs_hz=1000.0 / s.tick_period_ms,
        duration_s=duration_s or s.synthetic_duration_s,
        noise_std=s.synthetic_noise_std, seed=s.seed,
    )
    return ingest.generate_synthetic(cfg)


def _emit(lines, out=None):
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text, encoding="utf-8")


def cmd_gen(args) -> int:
    cfg = ingest.SyntheticConfig(
        hr_bpm=args.hr, rr_brpm=args.rr, fs_hz=args.fs, duration_s=args.duration,
        noise_std=args.noise, baseline_drift_amp=args.drift, seed=args.seed,
        regions=args.regions,
    )
    n = ingest.write_trace(args.out, ingest.generate_synthetic(cfg))
    if args.ref:
        rows = [f"{t:.1f},{args.hr:.6f}" for t in range(int(args.duration) + 1)]
        Path(args.ref).write_text("\n".join(["# time_s,hr_bpm", *rows]) + "\n",
                                  encoding="ascii")
    print(f"wrote {n} frames to {args.out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    s = _settings(args)
    _check_paths(s)
    proc = Processor(s.pipeline_config())
    report = run_replay(open_source(s), proc)
    if args.out:
        evaluation.write_estimates(args.out, proc.emissions)
    else:
        sys.stdout.write(evaluation.ESTIMATE_HEADER + "\n")
        for e in proc.emissions:
            sys.stdout.write(evaluation.format_estimate_row(e.t_s, e.hr_bpm, e.rr_brpm, e.stable) + "\n")
    for line in report.lines():
        print(line, file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    for p in (args.estimates, args.ref):
        if not Path(p).is_file():
            raise UsageError(f"file not found: {p}")
    rows = evaluation.read_estimates(args.estimates)
    if args.stable_only:
        rows = [r for r in rows if r[3]]
    ref = ingest.read_reference(args.ref)
    aligned = evaluation.align_series([(r[0], r[1]) for r in rows], ref)
    report = evaluation.compute_metrics(aligned.pairs)
    _emit(report.lines() + [f"dropped={aligned.dropped}"], args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.frames < 1:
        raise UsageError("--frames must be positive")
    s = _settings(args)
    _check_paths(s)
    trace = open_source(s, duration_s=args.frames * s.tick_period_ms / 1000.0)
    result = evaluation.run_benchmark(s.pipeline_config(), trace, args.frames)
    _emit([result.table(), ""] + result.lines(), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    from .net import StreamConfig, start_servers

    s = _settings(args)
    _check_paths(s)
    try:
        scfg = StreamConfig(rest_port=s.rest_port, stream_port=s.stream_port,
                            bind_address=s.bind_address, jpeg_quality=s.jpeg_quality)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    container = DataContainer()
    # synthetic service runs default to an hour of signal
    source = open_source(s, duration_s=args.duration or 3600.0)
    proc = Processor(s.pipeline_config(render_frames=True), container)
    stop = threading.Event()
    handle = start_servers(scfg, container)
    print(f"REST on {scfg.bind_address}:{handle.rest_port}{scfg.rest_path}, "
          f"MJPEG on {scfg.bind_address}:{handle.stream_port}", file=sys.stderr)

    previous = {}
    timer = None
    try:
        # handlers can only be installed from the main thread
        if threading.current_thread() is threading.main_thread():
            for sig in (signal.SIGINT, signal.SIGTERM):
                previous[sig] = signal.signal(sig, lambda *_: stop.set())
        if args.duration:
            timer = threading.Timer(args.duration, stop.set)
            timer.daemon = True
            timer.start()
        report = run_wallclock(source, proc, stop)
    finally:
        if timer:
            timer.cancel()
        for sig, handler in previous.items():
            signal.signal(sig, handler)
        container.close()
        handle.shutdown()
    _emit(report.lines(), args.out)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "replay": cmd_replay, "eval": cmd_eval,
            "bench": cmd_bench, "run": cmd_run}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"pulsegrid: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PulseGridError, OSError, ValueError) as exc:
        print(f"pulsegrid: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
