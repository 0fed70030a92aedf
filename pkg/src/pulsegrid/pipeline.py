"""Tick-driven processing loop and the shared state it publishes.

The processing task is the only writer of :class:`DataContainer`; network
tasks read immutable snapshots from it. In wall-clock mode a capture thread
feeds a single-slot :class:`LatestFrameMailbox` and the processing loop
wakes every tick period. Replay mode runs every frame as one logical tick
on the calling thread, which makes runs reproducible.
"""

from __future__ import annotations

import logging
import math
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from . import color, fir, roi, spectral
from .buffer import AcquisitionState, BufferPolicy, BufferState
from .errors import EndOfStream, PulseGridError
from .ingest import FrameRecord, NoFace, RawFrame, RoiMeans

log = logging.getLogger(__name__)

STAGES = ("roi", "color", "buffer", "filter", "spectral")
# human-readable stage names for the benchmark table
STAGE_LABELS = {
    "roi": "Skin segmentation (ROI means)",
    "color": "RGB to BVP (CIE-Lab a*)",
    "buffer": "Buffering and windowing",
    "filter": "Filtering (FIR)",
    "spectral": "Spectral analysis",
}


@dataclass(frozen=True)
class VitalsRecord:
    g_hr: float = 0.0
    g_br: float = 0.0
    g_O2: float = 0.0
    g_seeuser: int = 0
    g_stable: int = 0
    g_hr_graph: float = 0.0
    g_br_graph: float = 0.0

    def fields(self) -> tuple:
        return (self.g_hr, self.g_br, self.g_O2, self.g_seeuser, self.g_stable,
                self.g_hr_graph, self.g_br_graph)


@dataclass(frozen=True)
class TickConfig:
    tick_period_ms: float = 1000.0 / 30.0
    noface_reset_threshold: int = 60

    def __post_init__(self):
        if not self.tick_period_ms > 0:
            raise ValueError("tick period must be positive")


@dataclass(frozen=True)
class ContainerSnapshot:
    vitals: VitalsRecord
    frame_counter: int
    last_update_ms: float
    tick: int


class DataContainer:
    """Latest vitals plus the two latest video frames, guarded by one lock."""

    STREAMS = ("mainstream", "pulsestream")

    def __init__(self):
        self._cond = threading.Condition()
        self._snapshot = ContainerSnapshot(VitalsRecord(), 0, 0.0, 0)
        self._frames = {s: (0, None) for s in self.STREAMS}
        self._closed = False

    def publish(self, vitals: VitalsRecord, frame_counter: int, last_update_ms: float,
                main: Optional[RawFrame] = None, pulse: Optional[RawFrame] = None) -> None:
        with self._cond:
            tick = self._snapshot.tick + 1
            self._snapshot = ContainerSnapshot(vitals, frame_counter, last_update_ms, tick)
            for name, frame in (("mainstream", main), ("pulsestream", pulse)):
                if frame is not None:
                    seq = self._frames[name][0] + 1
                    self._frames[name] = (seq, frame)
            self._cond.notify_all()

    def snapshot(self) -> ContainerSnapshot:
        with self._cond:
            return self._snapshot

    def vitals(self) -> VitalsRecord:
        return self.snapshot().vitals

    def latest_frame(self, stream: str):
        with self._cond:
            return self._frames[stream]

    def wait_for_frame(self, stream: str, after_seq: int, timeout: float):
        """Block until ``stream`` has a frame newer than ``after_seq``.

        Returns ``(seq, frame)``; ``frame`` is None on timeout or close.
        """
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                seq, frame = self._frames[stream]
                if seq > after_seq and frame is not None:
                    return seq, frame
                remaining = deadline - time.monotonic()
                if self._closed or remaining <= 0:
                    return seq, None
                self._cond.wait(remaining)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed


class LatestFrameMailbox:
    """Single-slot mailbox; a new frame overwrites an unconsumed one."""

    def __init__(self):
        self._lock = threading.Lock()
        self._frame: Optional[FrameRecord] = None
        self._closed = False
        self.dropped = 0
        self.delivered = 0

    def put(self, frame: FrameRecord) -> None:
        with self._lock:
            if self._frame is not None:
                self.dropped += 1
            self._frame = frame

    def close(self) -> None:
        with self._lock:
            self._closed = True

    def take(self) -> Optional[FrameRecord]:
        with self._lock:
            frame, self._frame = self._frame, None
            if frame is None and self._closed:
                raise EndOfStream("source exhausted")
            if frame is not None:
                self.delivered += 1
            return frame


def capture_latest(mailbox: LatestFrameMailbox) -> Optional[FrameRecord]:
    """Newest unconsumed frame or None; raises EndOfStream once drained."""
    return mailbox.take()


# ---------------------------------------------------------------------------
# rendering

PLACEHOLDER_GRAY = 96
NEUTRAL_GRAY = 128


def _fit_landmarks(landmarks: np.ndarray, width: int, height: int, margin=0.08) -> np.ndarray:
    lo = landmarks.min(axis=0)
    hi = landmarks.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    scale = min((1 - 2 * margin) * width / span[0], (1 - 2 * margin) * height / span[1])
    offset = np.array([width, height]) / 2.0 - scale * (lo + hi) / 2.0
    return landmarks * scale + offset


def render_pulse_frame(landmarks, regions, bvp_value: float,
                       size: tuple = (160, 120)) -> RawFrame:
    """Face regions tinted by a pulse amplitude in [-1, 1] on a neutral canvas.

    Without landmarks a flat placeholder of ``size`` is returned.
    """
    width, height = size
    if landmarks is None:
        return RawFrame(width, height, bytes([PLACEHOLDER_GRAY]) * (3 * width * height))
    pts = _fit_landmarks(np.asarray(landmarks, dtype=float), width, height)
    img = np.full((height, width, 3), 40, dtype=np.uint8)
    face = roi.polygon_mask(pts[:17], width, height)
    img[face] = (NEUTRAL_GRAY - 30,) * 3
    amp = float(np.clip(bvp_value, -1.0, 1.0)) if math.isfinite(bvp_value) else 0.0
    tint = np.array([NEUTRAL_GRAY + 110 * amp, NEUTRAL_GRAY - 50 * amp, NEUTRAL_GRAY - 50 * amp])
    tint = np.clip(np.rint(tint), 0, 255).astype(np.uint8)
    for region in regions:
        img[roi.polygon_mask(region.polygon(pts), width, height)] = tint
    return RawFrame.from_array(img)


def render_main_frame(record: FrameRecord, landmarks=None, rgb=None,
                      size: tuple = (160, 120)) -> RawFrame:
    """Cropped face for raw frames; a flat swatch of the ROI colour otherwise."""
    if isinstance(record.payload, RawFrame) and landmarks is not None:
        frame = record.payload
        lo = np.floor(landmarks.min(axis=0)).astype(int)
        hi = np.ceil(landmarks.max(axis=0)).astype(int)
        pad = ((hi - lo) * 0.1).astype(int)
        x0, y0 = np.maximum(lo - pad, 0)
        x1 = min(frame.width, hi[0] + pad[0])
        y1 = min(frame.height, hi[1] + pad[1])
        if x1 > x0 and y1 > y0:
            return RawFrame.from_array(frame.as_array()[y0:y1, x0:x1])
        return frame
    if isinstance(record.payload, RawFrame):
        return record.payload
    width, height = size
    fill = tuple(int(round(c)) for c in rgb) if rgb is not None else (PLACEHOLDER_GRAY,) * 3
    return RawFrame(width, height, bytes(fill) * (width * height))


# ---------------------------------------------------------------------------
# processing

@dataclass
class PipelineConfig:
    spectral: spectral.SpectralConfig = field(default_factory=spectral.SpectralConfig)
    buffer: BufferPolicy = field(default_factory=BufferPolicy)
    tick: TickConfig = field(default_factory=TickConfig)
    nominal_fs_hz: float = 30.0
    n_taps: int = fir.N_TAPS
    filter_window: str = "none"
    hr_filter_band: tuple = fir.HR_BAND
    hr_display_band: tuple = fir.HR_DISPLAY_BAND
    rr_cutoff_hz: float = fir.RR_CUTOFF
    # filters are redesigned when the measured rate moves further than this
    fs_redesign_tolerance_hz: float = 0.05
    gap_factor: float = 2.0
    regions: list = field(default_factory=roi.default_regions)
    alpha: float = 0.5
    beta: float = 0.1
    spo2_stub: float = 0.0
    render_frames: bool = False
    canvas_size: tuple = (160, 120)


@dataclass
class Emission:
    t_s: float
    hr_bpm: float
    rr_brpm: Optional[float]
    stable: bool
    flags: frozenset = frozenset()


class StageClock:
    __slots__ = ("total_ns", "max_ns", "calls")

    def __init__(self):
        self.total_ns = 0
        self.max_ns = 0
        self.calls = 0

    def add(self, ns: int):
        self.total_ns += ns
        self.calls += 1
        if ns > self.max_ns:
            self.max_ns = ns


class Processor:
    """Owns every piece of per-stream state and runs one tick at a time."""

    def __init__(self, cfg: Optional[PipelineConfig] = None,
                 container: Optional[DataContainer] = None):
        self.cfg = cfg or PipelineConfig()
        self.container = container
        c = self.cfg
        self.acq = AcquisitionState(c.buffer, c.tick.noface_reset_threshold)
        self.stabilizer = roi.LandmarkStabilizer(c.alpha, c.beta)
        fs = c.nominal_fs_hz
        self.hr_filter = fir.design_bandpass(*c.hr_filter_band, fs, c.n_taps, c.filter_window)
        self.display_filter = fir.design_bandpass(*c.hr_display_band, fs, c.n_taps, c.filter_window)
        self.rr_filter = fir.design_lowpass(c.rr_cutoff_hz, fs, c.n_taps, c.filter_window)
        self.hr_filtered: deque = deque(maxlen=c.buffer.capacity)
        self.rr_filtered: deque = deque(maxlen=c.buffer.capacity)
        self.display_recent: deque = deque(maxlen=90)
        self.clocks = {s: StageClock() for s in STAGES}
        self.emissions: list[Emission] = []
        self.flags: dict = {}
        self.frames_processed = 0
        self.ticks = 0
        self.prev_hr: Optional[float] = None
        self.last_rr: Optional[float] = None
        self.vitals = VitalsRecord(g_O2=c.spo2_stub)
        self.landmarks: Optional[np.ndarray] = None
        self.last_rgb = None
        self._last_face_ts: Optional[float] = None
        self._template = roi.template_landmarks(100.0, 100.0)

    @property
    def buffer(self):
        return self.acq.buffer

    @property
    def resets(self) -> int:
        return self.acq.resets

    def _flag(self, name: str):
        self.flags[name] = self.flags.get(name, 0) + 1

    # -- tick entry point ---------------------------------------------------

    def update_process_frame(self, frame: Optional[FrameRecord]) -> None:
        """Process one tick. ``None`` means no new frame arrived."""
        self.ticks += 1
        record_frame = None
        if frame is None:
            if self.acq.idle():
                self._full_reset()
        elif not frame.has_face:
            self.vitals = _replace(self.vitals, g_seeuser=0, g_stable=0)
            if self.acq.noface():
                self._full_reset()
        else:
            try:
                self._process_face(frame)
                record_frame = frame
            except PulseGridError as exc:
                # stage errors become flags and count as a missed detection
                self._flag(type(exc).__name__)
                if self.acq.noface():
                    self._full_reset()
        if frame is not None:
            self.frames_processed += 1
        self._publish(frame, record_frame)

    def _process_face(self, frame: FrameRecord) -> None:
        t0 = time.perf_counter_ns()
        payload = frame.payload
        if isinstance(payload, RoiMeans):
            rgb = roi.combine_regions(payload)
        else:
            self.landmarks = self.stabilizer.update(frame.landmarks)
            sample = roi.extract_region_means(
                payload, self.landmarks, self.cfg.regions, frame.timestamp_ms, frame.frame_index
            )
            rgb = roi.combine_regions(sample)
        t1 = time.perf_counter_ns()
        self.clocks["roi"].add(t1 - t0)

        a_star = color.rgb_to_lab(*rgb)[1]
        t2 = time.perf_counter_ns()
        self.clocks["color"].add(t2 - t1)

        ts = frame.timestamp_ms
        last = self.buffer.last_timestamp
        if last is not None and ts <= last:
            self._flag("non_monotonic_timestamp")
            return
        gap = last is not None and ts - last > self.cfg.gap_factor * self.cfg.tick.tick_period_ms
        self.acq.face(a_star, ts, gap)
        self.last_rgb = rgb
        t3 = time.perf_counter_ns()
        self.clocks["buffer"].add(t3 - t2)

        x = (a_star,)
        hr = self.hr_filter.process_block(x)[0]
        disp = self.display_filter.process_block(x)[0]
        rr = self.rr_filter.process_block(x)[0]
        self.hr_filtered.append(hr)
        self.rr_filtered.append(rr)
        self.display_recent.append(disp)
        t4 = time.perf_counter_ns()
        self.clocks["filter"].add(t4 - t3)

        self.vitals = _replace(
            self.vitals, g_seeuser=1,
            g_stable=int(self.buffer.state == BufferState.STABLE),
            g_hr_graph=float(disp), g_br_graph=float(rr),
        )
        if self.buffer.should_emit_hr(ts):
            self._emit(ts)
            self.clocks["spectral"].add(time.perf_counter_ns() - t4)

    # -- spectral emission --------------------------------------------------

    def _usable(self, filtered: deque, filt: fir.FirFilter) -> np.ndarray:
        settled = max(0, filt.seen - (filt.n_taps - 1))
        n = min(len(filtered), settled)
        if n == 0:
            return np.empty(0)
        data = np.fromiter(filtered, dtype=float, count=len(filtered))
        return data[-n:]

    def _maybe_redesign(self, fs: float) -> None:
        if abs(fs - self.hr_filter.fs_hz) <= self.cfg.fs_redesign_tolerance_hz:
            return
        try:
            self.hr_filter = fir.redesign_for_fs(self.hr_filter, fs)
            self.display_filter = fir.redesign_for_fs(self.display_filter, fs)
            self.rr_filter = fir.redesign_for_fs(self.rr_filter, fs)
        except PulseGridError:
            self._flag("fs_too_low_for_filters")

    def _emit(self, now_ms: float) -> None:
        buf = self.buffer
        buf.last_hr_emit_ms = now_ms
        recent = [t for _, t in list(buf.samples)[-int(2 * self.cfg.nominal_fs_hz) - 2:]]
        fs, fell_back = spectral.recalc_fs(recent, 1.0, self.cfg.nominal_fs_hz)
        if fell_back:
            self._flag("fs_fallback")
        self._maybe_redesign(fs)
        window = self._usable(self.hr_filtered, self.hr_filter)
        window = window[-len(buf):]
        if window.size < 2:
            self._flag("window_too_short")
            return
        scfg = self.cfg.spectral
        try:
            psd = spectral.estimate_psd(window, fs, scfg)
            est = spectral.pick_hr(psd, scfg.hr_band, self.prev_hr,
                                   scfg.gate_bpm, scfg.candidate_floor)
        except PulseGridError as exc:
            self._flag(type(exc).__name__)
            return
        flags = set(est.quality_flags) | psd.flags
        self.prev_hr = est.hr_bpm
        stable = buf.state == BufferState.STABLE
        if stable:
            rr_window = self._usable(self.rr_filtered, self.rr_filter)[-len(buf):]
            try:
                rr_psd = spectral.estimate_psd(rr_window, fs, scfg)
                rr, rr_flags = spectral.pick_rr(rr_psd, scfg.rr_band)
                flags |= rr_flags
                if rr is not None:
                    self.last_rr = rr
            except PulseGridError as exc:
                flags.add(type(exc).__name__)
        for f in flags:
            self._flag(f)
        self.vitals = _replace(self.vitals, g_hr=est.hr_bpm,
                               g_br=self.last_rr if self.last_rr is not None else 0.0)
        self.emissions.append(Emission(
            now_ms / 1000.0, est.hr_bpm, self.last_rr if stable else None, stable,
            frozenset(flags),
        ))

    def flush(self) -> None:
        """Emit once more at end of stream if newer samples arrived since the last emission."""
        buf = self.buffer
        if buf.state < BufferState.HR_READY or not buf.samples:
            return
        last_ts = buf.last_timestamp
        if buf.last_hr_emit_ms is not None and buf.last_hr_emit_ms >= last_ts:
            return
        self._emit(last_ts)
        self._publish(None, None)

    def _full_reset(self) -> None:
        self.stabilizer.reset()
        for filt in (self.hr_filter, self.display_filter, self.rr_filter):
            filt.reset()
        self.hr_filtered.clear()
        self.rr_filtered.clear()
        self.display_recent.clear()
        self.prev_hr = None
        self.last_rr = None
        self.landmarks = None
        self.vitals = VitalsRecord(g_O2=self.cfg.spo2_stub)

    # -- publication ----------------------------------------------------------

    def _publish(self, frame, record_frame) -> None:
        if self.container is None:
            return
        main = pulse = None
        if self.cfg.render_frames and record_frame is not None:
            main = render_main_frame(record_frame, self.landmarks, self.last_rgb,
                                     self.cfg.canvas_size)
            peak = max((abs(v) for v in self.display_recent), default=0.0)
            amp = self.vitals.g_hr_graph / peak if peak > 0 else 0.0
            lms = self.landmarks if self.landmarks is not None else self._template
            pulse = render_pulse_frame(lms, self.cfg.regions, amp, self.cfg.canvas_size)
        ts = frame.timestamp_ms if frame is not None else self.container.snapshot().last_update_ms
        self.container.publish(self.vitals, self.frames_processed, ts, main, pulse)

    def stage_report(self) -> dict:
        """Per stage: mean ms per processed frame and max ms per call."""
        frames = max(1, self.frames_processed)
        return {
            name: {"mean_ms_per_frame": c.total_ns / frames / 1e6,
                   "max_ms": c.max_ns / 1e6, "calls": c.calls}
            for name, c in self.clocks.items()
        }


def _replace(rec: VitalsRecord, **changes) -> VitalsRecord:
    values = rec.__dict__.copy()
    values.update(changes)
    return VitalsRecord(**values)


# ---------------------------------------------------------------------------
# drivers

@dataclass
class RunReport:
    mode: str
    ticks: int = 0
    frames_processed: int = 0
    drops: int = 0
    resets: int = 0
    emissions: int = 0
    wall_s: float = 0.0
    stages: dict = field(default_factory=dict)
    tick_lateness_ms: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    # raw per-tick wake-up lateness, wall-clock mode only
    lateness_samples: list = field(default_factory=list, repr=False)

    def lines(self) -> list[str]:
        out = [
            f"mode={self.mode}", f"ticks={self.ticks}",
            f"frames_processed={self.frames_processed}", f"drops={self.drops}",
            f"resets={self.resets}", f"emissions={self.emissions}",
            f"wall_s={self.wall_s:.3f}",
        ]
        for name, st in self.stages.items():
            out.append(f"stage.{name}.mean_ms_per_frame={st['mean_ms_per_frame']:.6f}")
            out.append(f"stage.{name}.max_ms={st['max_ms']:.6f}")
        for k, v in sorted(self.tick_lateness_ms.items()):
            out.append(f"tick_lateness.{k}_ms={v:.3f}")
        for k, v in sorted(self.flags.items()):
            out.append(f"flag.{k}={v}")
        return out


def _lateness_stats(values) -> dict:
    if not values:
        return {}
    arr = np.asarray(values)
    return {"p50": float(np.percentile(arr, 50)), "p99": float(np.percentile(arr, 99)),
            "max": float(arr.max()), "mean": float(arr.mean())}


def run_replay(source: Iterable[FrameRecord], processor: Processor) -> RunReport:
    """Every frame is one logical tick; ends with a final flush."""
    t0 = time.perf_counter()
    for frame in source:
        processor.update_process_frame(frame)
    processor.flush()
    return _report("replay", processor, 0, time.perf_counter() - t0)


def _report(mode, processor, drops, wall_s, lateness=None) -> RunReport:
    return RunReport(
        mode=mode, ticks=processor.ticks, frames_processed=processor.frames_processed,
        drops=drops, resets=processor.resets, emissions=len(processor.emissions),
        wall_s=wall_s, stages=processor.stage_report(),
        tick_lateness_ms=_lateness_stats(lateness or []), flags=dict(processor.flags),
        lateness_samples=list(lateness or []),
    )


class CaptureThread(threading.Thread):
    """Plays a source into the mailbox at its own timestamps."""

    def __init__(self, source: Iterable[FrameRecord], mailbox: LatestFrameMailbox,
                 stop: threading.Event, paced: bool = True):
        super().__init__(name="capture", daemon=True)
        self.source = source
        self.mailbox = mailbox
        self.stop = stop
        self.paced = paced
        self.error: Optional[BaseException] = None

    def run(self):
        start = time.monotonic()
        first_ts = None
        try:
            for frame in self.source:
                if self.stop.is_set():
                    break
                if self.paced:
                    if first_ts is None:
                        first_ts = frame.timestamp_ms
                    due = start + (frame.timestamp_ms - first_ts) / 1000.0
                    delay = due - time.monotonic()
                    if delay > 0 and self.stop.wait(delay):
                        break
                self.mailbox.put(frame)
        except BaseException as exc:  # surfaced through the run report
            self.error = exc
            log.error("capture stopped: %s", exc)
        finally:
            self.mailbox.close()


def run_wallclock(source: Iterable[FrameRecord], processor: Processor,
                  stop: Optional[threading.Event] = None,
                  max_ticks: Optional[int] = None,
                  on_tick: Optional[Callable[[int], None]] = None,
                  switch_interval_s: Optional[float] = 0.001) -> RunReport:
    """Drive ticks at the configured period until the source ends or ``stop`` is set.

    ``switch_interval_s`` shortens the interpreter's thread switch interval
    for the duration of the run so a busy server thread cannot hold the
    tick thread off for the default 5 ms; None leaves it alone.
    """
    stop = stop or threading.Event()
    saved_switch = sys.getswitchinterval()
    if switch_interval_s is not None:
        sys.setswitchinterval(switch_interval_s)
    mailbox = LatestFrameMailbox()
    capture = CaptureThread(source, mailbox, stop)
    period = processor.cfg.tick.tick_period_ms / 1000.0
    lateness = []
    t_start = time.perf_counter()
    capture.start()
    next_tick = time.monotonic()
    n = 0
    try:
        while not stop.is_set():
            delay = next_tick - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            lateness.append((time.monotonic() - next_tick) * 1000.0)
            try:
                frame = capture_latest(mailbox)
            except EndOfStream:
                break
            processor.update_process_frame(frame)
            n += 1
            if on_tick is not None:
                on_tick(n)
            if max_ticks is not None and n >= max_ticks:
                break
            next_tick += period
            now = time.monotonic()
            if now - next_tick > period:
                # overran by more than one tick; skip ahead instead of bursting
                next_tick = now
    finally:
        stop.set()
        capture.join(timeout=2.0)
        sys.setswitchinterval(saved_switch)
    processor.flush()
    return _report("wallclock", processor, mailbox.dropped, time.perf_counter() - t_start,
                   lateness)


def run(source, processor: Processor, mode: str = "replay", **kwargs) -> RunReport:
    if mode == "replay":
        return run_replay(source, processor)
    if mode == "wallclock":
        return run_wallclock(source, processor, **kwargs)
    raise ValueError(f"unknown mode {mode!r}")
