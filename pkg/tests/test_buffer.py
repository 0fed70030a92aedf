import pytest
from hypothesis import given, strategies as st

from oracles import RefMachine
from pulsegrid.buffer import AcquisitionState, BufferPolicy, BufferState, SignalBuffer
from pulsegrid.errors import NotReadyError


def filled(n, start=0):
    b = SignalBuffer()
    for i in range(n):
        b.push(float(i), float(start + i))
    return b


def test_first_hr_threshold():
    b = filled(89)
    assert b.state == BufferState.WARMING
    b.push(0.0, 89.0)
    assert b.state == BufferState.HR_READY


def test_stable_threshold():
    assert filled(239).state == BufferState.HR_READY
    assert filled(240).state == BufferState.STABLE


def test_capacity_evicts_oldest():
    b = filled(361)
    assert len(b) == 360 and b.samples[0] == (1.0, 1.0)


def test_interruption_demotes_and_keeps_samples():
    b = filled(300).mark_interruption()
    assert b.state == BufferState.HR_READY and len(b) == 300
    assert filled(10).mark_interruption().state == BufferState.WARMING


def test_restabilises_after_240_more():
    b = filled(300).mark_interruption()
    for i in range(239):
        b.push(0.0, 1000.0 + i)
    assert b.state == BufferState.HR_READY
    b.push(0.0, 5000.0)
    assert b.state == BufferState.STABLE


def test_emission_interval():
    b = filled(90)
    assert b.should_emit_hr(100.0)
    b.last_hr_emit_ms = 100.0
    assert not b.should_emit_hr(600.0)
    assert b.should_emit_hr(1100.0)
    assert not filled(50).should_emit_hr(1e9)


def test_analysis_window():
    assert len(filled(120).analysis_window()) == 120
    assert len(filled(400).analysis_window()) == 360
    with pytest.raises(NotReadyError):
        filled(10).analysis_window()


def test_rejects_non_increasing_timestamp():
    with pytest.raises(ValueError):
        filled(5).push(0.0, 4.0)


def test_policy_validation():
    with pytest.raises(ValueError):
        BufferPolicy(first_hr_threshold=300)


def test_reset_after_60_misses():
    acq = AcquisitionState()
    for i in range(300):
        acq.face(0.0, float(i))
    assert not any(acq.noface() for _ in range(59))
    assert acq.noface()
    assert acq.state == BufferState.WARMING and len(acq.buffer) == 0 and acq.resets == 1


def test_face_after_59_misses_clears_counter():
    acq = AcquisitionState()
    acq.face(0.0, 0.0)
    for _ in range(59):
        acq.noface()
    acq.face(0.0, 1.0)
    assert acq.misses == 0 and acq.resets == 0 and len(acq.buffer) == 2


def test_copy_is_independent():
    acq = AcquisitionState()
    acq.face(1.0, 0.0)
    c = acq.copy()
    c.face(2.0, 1.0)
    assert len(acq.buffer) == 1 and len(c.buffer) == 2


ops = st.lists(st.sampled_from(["push", "gap", "noface", "idle"]), max_size=600)


@given(ops)
def test_random_sequences_match_reference(seq):
    acq, ref = AcquisitionState(), RefMachine()
    for t, op in enumerate(seq):
        if op in ("push", "gap"):
            acq.face(0.0, float(t), gap=op == "gap")
            got_reset = want_reset = False
            ref.push(gap=op == "gap")
        else:
            got_reset = getattr(acq, op)()
            want_reset = getattr(ref, op)()
        assert got_reset == want_reset
        assert int(acq.state) == ref.state()
        assert len(acq.buffer) == ref.n
        assert acq.buffer.consecutive_uninterrupted == ref.run
        assert acq.misses == ref.misses
