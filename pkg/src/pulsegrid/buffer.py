"""Rolling a* window and the warm-up / stability state machine."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .errors import NotReadyError


class BufferState(enum.IntEnum):
    WARMING = 0
    HR_READY = 1
    STABLE = 2


@dataclass(frozen=True)
class BufferPolicy:
    capacity: int = 360
    first_hr_threshold: int = 90
    stable_threshold: int = 240
    hr_update_interval_ms: float = 1000.0

    def __post_init__(self):
        if not 0 < self.first_hr_threshold <= self.stable_threshold <= self.capacity:
            raise ValueError("need 0 < first_hr_threshold <= stable_threshold <= capacity")


def derive_state(length: int, consecutive: int, policy: BufferPolicy) -> BufferState:
    if consecutive >= policy.stable_threshold:
        return BufferState.STABLE
    if length >= policy.first_hr_threshold:
        return BufferState.HR_READY
    return BufferState.WARMING


@dataclass
class StabilityTracker:
    """Counts behind the state machine, kept apart from the sample storage."""

    policy: BufferPolicy
    length: int = 0
    consecutive: int = 0
    state: BufferState = BufferState.WARMING

    def on_push(self):
        if self.length < self.policy.capacity:
            self.length += 1
        self.consecutive += 1
        self.state = derive_state(self.length, self.consecutive, self.policy)

    def on_interruption(self):
        self.consecutive = 0
        self.state = derive_state(self.length, 0, self.policy)

    def on_clear(self):
        self.length = 0
        self.consecutive = 0
        self.state = BufferState.WARMING

    def copy(self) -> "StabilityTracker":
        return StabilityTracker(self.policy, self.length, self.consecutive, self.state)


class SignalBuffer:
    """Rolling window of ``(a_star, timestamp_ms)`` samples."""

    def __init__(self, policy: Optional[BufferPolicy] = None):
        self.policy = policy or BufferPolicy()
        self.samples: deque = deque(maxlen=self.policy.capacity)
        self.tracker = StabilityTracker(self.policy)
        self.last_hr_emit_ms: Optional[float] = None

    def __len__(self):
        return len(self.samples)

    @property
    def state(self) -> BufferState:
        return self.tracker.state

    @property
    def consecutive_uninterrupted(self) -> int:
        return self.tracker.consecutive

    @property
    def last_timestamp(self) -> Optional[float]:
        return self.samples[-1][1] if self.samples else None

    def push(self, a_star: float, timestamp_ms: float) -> "SignalBuffer":
        if self.samples and timestamp_ms <= self.samples[-1][1]:
            raise ValueError(
                f"timestamp {timestamp_ms} is not after {self.samples[-1][1]}"
            )
        self.samples.append((a_star, timestamp_ms))
        self.tracker.on_push()
        return self

    def mark_interruption(self) -> "SignalBuffer":
        """Revoke stability but keep the buffered samples."""
        self.tracker.on_interruption()
        return self

    def reset(self) -> "SignalBuffer":
        self.samples.clear()
        self.tracker.on_clear()
        self.last_hr_emit_ms = None
        return self

    def should_emit_hr(self, now_ms: float) -> bool:
        if self.state < BufferState.HR_READY:
            return False
        if self.last_hr_emit_ms is None:
            return True
        return now_ms - self.last_hr_emit_ms >= self.policy.hr_update_interval_ms

    def analysis_window(self) -> list:
        if self.state < BufferState.HR_READY:
            raise NotReadyError(
                f"{len(self.samples)} samples buffered, need {self.policy.first_hr_threshold}"
            )
        return list(self.samples)

    def timestamps(self) -> list:
        return [t for _, t in self.samples]


class AcquisitionState:
    """Buffer plus the consecutive-miss counter that triggers a full reset.

    ``face`` handles a face-bearing sample (``gap`` marks a capture gap just
    before it), ``noface`` a frame without a face and ``idle`` a tick with no
    new frame. ``noface`` and ``idle`` return True when they caused a reset.
    """

    def __init__(self, policy: Optional[BufferPolicy] = None, reset_threshold: int = 60):
        if reset_threshold < 1:
            raise ValueError("reset_threshold must be >= 1")
        self.buffer = SignalBuffer(policy)
        self.reset_threshold = reset_threshold
        self.misses = 0
        self.resets = 0

    @property
    def state(self) -> BufferState:
        return self.buffer.state

    def face(self, a_star: float, timestamp_ms: float, gap: bool = False) -> None:
        if gap:
            self.buffer.mark_interruption()
        self.buffer.push(a_star, timestamp_ms)
        self.misses = 0

    def noface(self) -> bool:
        self.buffer.mark_interruption()
        return self._miss()

    def idle(self) -> bool:
        return self._miss()

    def _miss(self) -> bool:
        self.misses += 1
        if self.misses >= self.reset_threshold:
            self.buffer.reset()
            self.misses = 0
            self.resets += 1
            return True
        return False

    def copy(self) -> "AcquisitionState":
        other = AcquisitionState.__new__(AcquisitionState)
        buf = SignalBuffer.__new__(SignalBuffer)
        buf.policy = self.buffer.policy
        buf.samples = self.buffer.samples.copy()
        buf.tracker = self.buffer.tracker.copy()
        buf.last_hr_emit_ms = self.buffer.last_hr_emit_ms
        other.buffer = buf
        other.reset_threshold = self.reset_threshold
        other.misses = self.misses
        other.resets = self.resets
        return other
