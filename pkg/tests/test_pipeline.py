import threading
import time

import numpy as np
import pytest

from pulsegrid import pipeline, roi
from pulsegrid.buffer import BufferState
from pulsegrid.errors import EndOfStream
from pulsegrid.ingest import FrameRecord, NoFace, RawFrame, RoiMeans, SyntheticConfig, \
    generate_synthetic, synthetic_rgb
from pulsegrid.pipeline import (DataContainer, LatestFrameMailbox, PipelineConfig, Processor,
                                VitalsRecord, capture_latest, render_pulse_frame, run_replay)

PERIOD = 1000.0 / 30.0


def synth(**kw):
    return list(generate_synthetic(SyntheticConfig(**kw)))


def noface(i):
    return FrameRecord(i, i * PERIOD, NoFace())


def test_first_hr_after_90_samples():
    proc = Processor()
    for rec in synth(duration_s=4):
        proc.update_process_frame(rec)
        if rec.frame_index == 88:
            assert not proc.emissions
    assert proc.emissions[0].t_s == pytest.approx(89 * PERIOD / 1000)
    assert proc.vitals.g_hr > 0


def test_360_frame_replay_recovers_72():
    c = DataContainer()
    proc = Processor(container=c)
    run_replay(synth(hr_bpm=72, duration_s=12), proc)
    v = c.vitals()
    assert abs(v.g_hr - 72) <= 1.5 and v.g_stable == 1 and v.g_seeuser == 1


def test_60_noface_ticks_reset():
    proc = Processor()
    recs = synth(duration_s=10)
    for r in recs:
        proc.update_process_frame(r)
    base = len(recs)
    for k in range(59):
        proc.update_process_frame(noface(base + k))
    assert len(proc.buffer) == 300 and proc.vitals.g_seeuser == 0
    proc.update_process_frame(noface(base + 59))
    assert proc.buffer.state == BufferState.WARMING and len(proc.buffer) == 0
    assert proc.resets == 1 and proc.vitals.g_seeuser == 0 and proc.vitals.g_hr == 0
    assert not np.any(proc.hr_filter.register) and proc.hr_filter.seen == 0


def test_valid_frame_after_59_misses():
    proc = Processor()
    for r in synth(duration_s=1):
        proc.update_process_frame(r)
    for k in range(59):
        proc.update_process_frame(noface(30 + k))
    proc.update_process_frame(FrameRecord(89, 89 * PERIOD, RoiMeans(((128, 128, 128),))))
    assert proc.acq.misses == 0 and proc.resets == 0 and len(proc.buffer) == 31


def test_60_idle_ticks_reset():
    proc = Processor()
    for r in synth(duration_s=1):
        proc.update_process_frame(r)
    for _ in range(60):
        proc.update_process_frame(None)
    assert proc.resets == 1 and len(proc.buffer) == 0


def test_capture_gap_revokes_stability():
    proc = Processor()
    recs = synth(duration_s=10)
    for r in recs:
        proc.update_process_frame(r)
    assert proc.buffer.state == BufferState.STABLE
    proc.update_process_frame(FrameRecord(400, recs[-1].timestamp_ms + 3 * PERIOD,
                                          RoiMeans(((128, 128, 128),))))
    assert proc.buffer.state == BufferState.HR_READY and len(proc.buffer) == 301


def test_stage_error_becomes_flag():
    proc = Processor()
    frame = RawFrame(10, 10, bytes(300))
    far = roi.template_landmarks(10, 10, 500, 500)
    proc.update_process_frame(FrameRecord(0, 0.0, frame, landmarks=far))
    assert proc.flags == {"NoSignalError": 1} and proc.acq.misses == 1


def test_breathing_rate_end_to_end():
    proc = Processor()
    run_replay(synth(rr_brpm=18, duration_s=30), proc)
    rr = [e.rr_brpm for e in proc.emissions if e.stable]
    assert rr and all(abs(v - 18) <= 1 for v in rr)
    assert all(e.rr_brpm is None for e in proc.emissions if not e.stable)


def test_raw_frame_path_recovers_hr():
    ts, rgb = synthetic_rgb(SyntheticConfig(duration_s=12))
    lm = roi.template_landmarks(60, 60, 10, 10)
    frames = []
    for i, t in enumerate(ts):
        img = np.empty((80, 80, 3), dtype=np.uint8)
        img[:] = np.rint(rgb[i, 0])
        frames.append(FrameRecord(i, float(t), RawFrame.from_array(img), landmarks=lm))
    proc = Processor()
    run_replay(frames, proc)
    assert abs(proc.emissions[-1].hr_bpm - 72) <= 1.5


def test_short_trace_emits_nothing():
    proc = Processor()
    run_replay(synth(duration_s=2.9), proc)
    assert proc.emissions == []


def test_flush_emits_final_estimate():
    proc = Processor()
    recs = synth(duration_s=5.5)
    for r in recs:
        proc.update_process_frame(r)
    n = len(proc.emissions)
    proc.flush()
    assert len(proc.emissions) == n + 1
    assert proc.emissions[-1].t_s == pytest.approx(recs[-1].timestamp_ms / 1000)
    proc.flush()
    assert len(proc.emissions) == n + 1


def test_report_has_every_stage():
    report = run_replay(synth(duration_s=5), Processor())
    assert set(report.stages) == set(pipeline.STAGES)
    assert report.frames_processed == 150 and report.drops == 0
    assert all(s["mean_ms_per_frame"] > 0 for s in report.stages.values())


def snapshots(method):
    c = DataContainer()
    cfg = PipelineConfig()
    cfg.spectral = type(cfg.spectral)(method=method)
    proc = Processor(cfg, c)
    seen = []
    orig = c.publish

    def spy(*a, **k):
        orig(*a, **k)
        seen.append(c.snapshot())

    c.publish = spy
    run_replay(synth(duration_s=15, noise_std=0.5, seed=3), proc)
    return seen


@pytest.mark.parametrize("method", ["fft", "welch"])
def test_replay_deterministic(method):
    assert snapshots(method) == snapshots(method)


def test_mailbox_latest_wins():
    box = LatestFrameMailbox()
    for i in range(3):
        box.put(noface(i))
    assert capture_latest(box).frame_index == 2 and box.dropped == 2
    assert capture_latest(box) is None
    box.close()
    with pytest.raises(EndOfStream):
        capture_latest(box)


def test_mailbox_drains_before_end_of_stream():
    box = LatestFrameMailbox()
    box.put(noface(0))
    box.close()
    assert capture_latest(box).frame_index == 0
    with pytest.raises(EndOfStream):
        capture_latest(box)


def test_container_snapshot_never_torn():
    c = DataContainer()
    stop = threading.Event()
    bad = []

    def writer():
        k = 0
        while not stop.is_set():
            k += 1
            c.publish(VitalsRecord(k, k, k, k % 2, k % 2, k, k), k, float(k))

    def reader():
        while not stop.is_set():
            s = c.snapshot()
            f = s.vitals.fields()
            if s.frame_counter and not (f[0] == f[1] == f[2] == f[5] == f[6] == s.frame_counter):
                bad.append(s)

    threads = [threading.Thread(target=writer)] + [threading.Thread(target=reader) for _ in range(3)]
    for t in threads:
        t.start()
    time.sleep(0.3)
    stop.set()
    for t in threads:
        t.join()
    assert not bad


def test_wait_for_frame_times_out_and_wakes():
    c = DataContainer()
    assert c.wait_for_frame("mainstream", 0, 0.05) == (0, None)
    frame = RawFrame(1, 1, b"abc")
    threading.Timer(0.05, lambda: c.publish(VitalsRecord(), 1, 0.0, main=frame)).start()
    seq, got = c.wait_for_frame("mainstream", 0, 2.0)
    assert seq == 1 and got is frame


def test_pulse_frame_neutral_at_zero():
    lm = roi.template_landmarks(100, 100)
    frame = render_pulse_frame(lm, roi.default_regions(), 0.0, (160, 120))
    img = frame.as_array()
    pts = pipeline._fit_landmarks(lm, 160, 120)
    mask = roi.polygon_mask(roi.default_regions()[0].polygon(pts), 160, 120)
    assert mask.any() and np.all(img[mask] == 128)


def test_pulse_frame_deterministic_and_varies():
    lm = roi.template_landmarks(100, 100)
    a = render_pulse_frame(lm, roi.default_regions(), 0.7)
    assert a == render_pulse_frame(lm, roi.default_regions(), 0.7)
    assert a != render_pulse_frame(lm, roi.default_regions(), -0.7)


def test_pulse_frame_placeholder():
    frame = render_pulse_frame(None, roi.default_regions(), 0.3, (32, 24))
    assert (frame.width, frame.height) == (32, 24) and len(set(frame.data)) == 1


def test_rendered_frames_published():
    c = DataContainer()
    run_replay(synth(duration_s=1), Processor(PipelineConfig(render_frames=True), c))
    for stream in c.STREAMS:
        seq, frame = c.latest_frame(stream)
        assert seq == 30 and isinstance(frame, RawFrame)


def test_tick_period_validated():
    with pytest.raises(ValueError):
        pipeline.TickConfig(0)


def test_wallclock_cadence():
    stop = threading.Event()
    threading.Timer(5.0, stop.set).start()
    report = pipeline.run_wallclock(synth(duration_s=20), Processor(), stop)
    assert abs(report.ticks - 150) <= 2
    assert report.frames_processed <= report.ticks
