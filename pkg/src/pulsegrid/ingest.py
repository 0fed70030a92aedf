"""Frame-data sources.

Every source is a plain iterator of :class:`FrameRecord`. Payloads are one of
:class:`RoiMeans` (pre-extracted per-region mean RGB), :class:`RawFrame`
(an RGB24 image, paired with 68 landmarks on the record) or :class:`NoFace`.

Trace file layout::

    # pulsegrid-trace v1; regions=<k>
    frame_index,timestamp_ms,R1,G1,B1[,R2,G2,B2,...]
    frame_index,timestamp_ms,noface
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, FrameDecodeError, TraceFormatError, TraceParseError

N_LANDMARKS = 68
TRACE_MAGIC = "pulsegrid-trace v1"

_HEADER_RE = re.compile(r"^#\s*pulsegrid-trace v1\s*;\s*regions\s*=\s*(\d+)\s*$")


@dataclass(frozen=True)
class RoiMeans:
    regions: tuple  # tuple of (R, G, B) float triples

    def __post_init__(self):
        regions = tuple(tuple(float(c) for c in rgb) for rgb in self.regions)
        if not regions:
            raise ValueError("RoiMeans needs at least one region")
        for rgb in regions:
            if len(rgb) != 3:
                raise ValueError(f"region mean must be an RGB triple, got {rgb!r}")
            if not all(0.0 <= c <= 255.0 for c in rgb):
                raise ValueError(f"region mean outside [0, 255]: {rgb!r}")
        object.__setattr__(self, "regions", regions)


@dataclass(frozen=True)
class RawFrame:
    width: int
    height: int
    data: bytes = field(repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("frame dimensions must be positive")
        if len(self.data) != 3 * self.width * self.height:
            raise ValueError(
                f"RGB24 buffer has {len(self.data)} bytes, expected "
                f"{3 * self.width * self.height} for {self.width}x{self.height}"
            )

    def as_array(self) -> np.ndarray:
        """Read-only (height, width, 3) uint8 view of the pixel data."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "RawFrame":
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError("expected an (H, W, 3) array")
        return cls(pixels.shape[1], pixels.shape[0], pixels.tobytes())


@dataclass(frozen=True)
class NoFace:
    pass


Payload = Union[RoiMeans, RawFrame, NoFace]


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    timestamp_ms: float
    payload: Payload
    landmarks: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def has_face(self) -> bool:
        return not isinstance(self.payload, NoFace)


def validate_landmarks(points) -> np.ndarray:
    """Return ``points`` as a finite float (68, 2) array or raise ValueError."""
    arr = np.asarray(points, dtype=float)
    if arr.shape != (N_LANDMARKS, 2):
        raise ValueError(f"expected {N_LANDMARKS} (x, y) landmarks, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("landmark coordinates must be finite")
    return arr


# ---------------------------------------------------------------------------
# synthetic source

@dataclass(frozen=True)
class SyntheticConfig:
    hr_bpm: float = 72.0
    rr_brpm: float = 15.0
    fs_hz: float = 30.0
    duration_s: float = 12.0
    noise_std: float = 0.0
    baseline_drift_amp: float = 0.0
    seed: int = 0
    pulse_amp: float = 1.0
    resp_amp: float = 0.5
    regions: int = 1

    def validate(self) -> None:
        if not 45.0 <= self.hr_bpm <= 240.0:
            raise ConfigError(f"hr_bpm={self.hr_bpm} outside [45, 240]")
        if not 6.0 <= self.rr_brpm <= 42.0:
            raise ConfigError(f"rr_brpm={self.rr_brpm} outside [6, 42]")
        if not self.fs_hz > 0:
            raise ConfigError("fs_hz must be positive")
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be positive")
        if self.noise_std < 0 or self.baseline_drift_amp < 0:
            raise ConfigError("noise_std and baseline_drift_amp must be non-negative")
        if self.pulse_amp < 0 or self.resp_amp < 0:
            raise ConfigError("pulse_amp and resp_amp must be non-negative")
        if self.regions < 1:
            raise ConfigError("regions must be >= 1")
        if not self.hr_bpm / 60.0 < self.fs_hz / 2.0:
            raise ConfigError(
                f"hr {self.hr_bpm} bpm is above Nyquist for fs={self.fs_hz} Hz"
            )


# Per-channel weights of the cardiac and respiratory components. Green moves
# against red so the a* (green-red) axis carries the pulse.
PULSE_WEIGHTS = np.array([0.5, -1.0, 0.1])
MID_GRAY = 128.0
DRIFT_HZ = 0.02


def synthetic_rgb(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(timestamps_ms, rgb)`` for a synthetic pulse recording.

    ``rgb`` has shape (n_frames, regions, 3).
    """
    cfg.validate()
    n = int(round(cfg.fs_hz * cfg.duration_s))
    t = np.arange(n) / cfg.fs_hz
    cardiac = cfg.pulse_amp * np.sin(2 * np.pi * cfg.hr_bpm / 60.0 * t)
    resp = cfg.resp_amp * np.sin(2 * np.pi * cfg.rr_brpm / 60.0 * t)
    drift = cfg.baseline_drift_amp * np.sin(2 * np.pi * DRIFT_HZ * t)

    chroma = (cardiac + resp)[:, None] * PULSE_WEIGHTS[None, :]
    base = MID_GRAY + chroma + drift[:, None]
    rgb = np.repeat(base[:, None, :], cfg.regions, axis=1)
    if cfg.noise_std > 0:
        rng = np.random.default_rng(cfg.seed)
        rgb = rgb + rng.normal(0.0, cfg.noise_std, size=rgb.shape)
    np.clip(rgb, 0.0, 255.0, out=rgb)
    return t * 1000.0, rgb


def noise_std_for_snr(snr_db: float, pulse_amp: float = 1.0) -> float:
    """Per-channel noise std giving ``snr_db`` against the cardiac tone.

    The reference is the strongest channel (green, unit weight), whose
    cardiac power is ``pulse_amp**2 / 2``.
    """
    signal_power = (pulse_amp * float(np.max(np.abs(PULSE_WEIGHTS)))) ** 2 / 2.0
    return float(np.sqrt(signal_power / 10.0 ** (snr_db / 10.0)))


def generate_synthetic(cfg: SyntheticConfig) -> Iterator[FrameRecord]:
    """Yield ``round(fs * duration)`` frames of RoiMeans carrying a pulse."""
    ts, rgb = synthetic_rgb(cfg)
    return _synthetic_iter(ts, rgb)


def _synthetic_iter(ts, rgb):
    for i in range(len(ts)):
        regions = tuple(tuple(float(c) for c in region) for region in rgb[i])
        yield FrameRecord(i, float(ts[i]), RoiMeans(regions))


# ---------------------------------------------------------------------------
# trace files

def _parse_float(path, line_no, text, what):
    try:
        value = float(text)
    except ValueError:
        raise TraceParseError(path, line_no, f"{what} {text!r} is not a number") from None
    if not math.isfinite(value):
        raise TraceParseError(path, line_no, f"{what} must be finite")
    return value


def _parse_index(path, line_no, text):
    try:
        idx = int(text)
    except ValueError:
        raise TraceParseError(path, line_no, f"frame index {text!r} is not an integer") from None
    if idx < 0:
        raise TraceParseError(path, line_no, "frame index must be non-negative")
    return idx


def read_trace(path) -> Iterator[FrameRecord]:
    """Yield one FrameRecord per data line of a trace file."""
    path = Path(path)
    n_regions = None
    last_ts = None
    with path.open("r", encoding="ascii") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _HEADER_RE.match(line)
                if m:
                    n_regions = int(m.group(1))
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 3:
                raise TraceParseError(path, line_no, "expected at least 3 fields")
            idx = _parse_index(path, line_no, parts[0])
            ts = _parse_float(path, line_no, parts[1], "timestamp")
            if ts < 0:
                raise TraceParseError(path, line_no, "timestamp must be non-negative")
            if parts[2].lower() == "noface":
                if len(parts) != 3:
                    raise TraceParseError(path, line_no, "noface line takes no color fields")
                payload = NoFace()
            else:
                values = parts[2:]
                if len(values) % 3:
                    raise TraceParseError(path, line_no, "color fields must come in RGB triples")
                if n_regions is not None and len(values) != 3 * n_regions:
                    raise TraceParseError(
                        path, line_no, f"expected {n_regions} regions, got {len(values) // 3}"
                    )
                nums = [_parse_float(path, line_no, v, "color") for v in values]
                if not all(0.0 <= v <= 255.0 for v in nums):
                    raise TraceParseError(path, line_no, "color value outside [0, 255]")
                payload = RoiMeans(tuple(tuple(nums[k:k + 3]) for k in range(0, len(nums), 3)))
            if last_ts is not None and ts <= last_ts:
                raise TraceFormatError(
                    f"{path}:{line_no}: timestamp {ts} does not increase (previous {last_ts})"
                )
            last_ts = ts
            yield FrameRecord(idx, ts, payload)


def write_trace(path, records: Iterable[FrameRecord]) -> int:
    """Write RoiMeans/NoFace records in trace format; returns the line count.

    Floats are written with ``repr`` so a read-back is exact.
    """
    records = list(records)
    n_regions = next(
        (len(r.payload.regions) for r in records if isinstance(r.payload, RoiMeans)), 1
    )
    with Path(path).open("w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# {TRACE_MAGIC}; regions={n_regions}\n")
        for rec in records:
            head = f"{rec.frame_index},{float(rec.timestamp_ms)!r}"
            if isinstance(rec.payload, RoiMeans):
                body = ",".join(repr(float(c)) for rgb in rec.payload.regions for c in rgb)
            elif isinstance(rec.payload, NoFace):
                body = "noface"
            else:
                raise TypeError("raw frames cannot be written to a trace file")
            fh.write(f"{head},{body}\n")
    return len(records)


# ---------------------------------------------------------------------------
# raw frames + landmarks

_FRAME_INDEX_RE = re.compile(r"(\d+)$")


def read_landmarks(path) -> dict[int, np.ndarray]:
    """Parse ``frame_index,x1,y1,...,x68,y68`` rows into a dict of (68, 2) arrays."""
    path = Path(path)
    rows = {}
    with path.open("r", encoding="ascii") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            idx = _parse_index(path, line_no, parts[0].strip())
            coords = parts[1:]
            if len(coords) != 2 * N_LANDMARKS:
                raise TraceParseError(
                    path, line_no,
                    f"expected {N_LANDMARKS} landmarks, got {len(coords) / 2:g}",
                )
            vals = [_parse_float(path, line_no, c, "coordinate") for c in coords]
            rows[idx] = np.asarray(vals, dtype=float).reshape(N_LANDMARKS, 2)
    return rows


def write_landmarks(path, rows: dict) -> None:
    with Path(path).open("w", encoding="ascii", newline="\n") as fh:
        for idx in sorted(rows):
            pts = validate_landmarks(rows[idx])
            fh.write(f"{idx}," + ",".join(repr(float(v)) for v in pts.ravel()) + "\n")


def decode_frame(path) -> RawFrame:
    """Decode a binary PPM (P6) or a ``.rgb`` raw RGB24 file.

    Raw files need a sidecar ``<name>.dims`` holding ``width height``.
    """
    path = Path(path)
    if path.suffix.lower() == ".rgb":
        dims_path = path.with_suffix(".dims")
        try:
            width, height = (int(v) for v in dims_path.read_text().split())
        except (OSError, ValueError) as exc:
            raise FrameDecodeError(f"{path}: missing or bad sidecar {dims_path.name}") from exc
        data = path.read_bytes()
        if len(data) != 3 * width * height:
            raise FrameDecodeError(
                f"{path}: {len(data)} bytes does not match {width}x{height} RGB24"
            )
        return RawFrame(width, height, data)
    try:
        with Image.open(path) as img:
            if img.format != "PPM" or img.mode != "RGB":
                raise FrameDecodeError(f"{path}: not a binary RGB PPM (P6) image")
            return RawFrame(img.width, img.height, img.tobytes())
    except (UnidentifiedImageError, OSError) as exc:
        raise FrameDecodeError(f"{path}: cannot decode frame") from exc


def write_ppm(path, frame: RawFrame) -> None:
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + frame.data)


def _frame_index(path: Path):
    m = _FRAME_INDEX_RE.search(path.stem)
    return int(m.group(1)) if m else None


def read_frames_with_landmarks(frames_dir, landmarks_path, fs_hz: float = 30.0) -> Iterator[FrameRecord]:
    """Pair ``*.ppm``/``*.rgb`` frames with their landmark rows.

    The frame index is the trailing integer of the file stem; timestamps are
    ``index / fs_hz``. Frames without a landmark row come out as NoFace.
    """
    frames_dir = Path(frames_dir)
    landmarks = read_landmarks(landmarks_path)
    files = []
    for p in frames_dir.iterdir():
        if p.suffix.lower() in (".ppm", ".rgb"):
            idx = _frame_index(p)
            if idx is None:
                raise FrameDecodeError(f"{p}: file name carries no frame index")
            files.append((idx, p))
    files.sort()
    return _frames_iter(files, landmarks, fs_hz)


def _frames_iter(files, landmarks, fs_hz):
    size = None
    for idx, p in files:
        ts = idx * 1000.0 / fs_hz
        frame = decode_frame(p)
        if size is None:
            size = (frame.width, frame.height)
        elif size != (frame.width, frame.height):
            raise FrameDecodeError(
                f"{p}: dimension mismatch {frame.width}x{frame.height}, stream is {size[0]}x{size[1]}"
            )
        pts = landmarks.get(idx)
        if pts is None:
            yield FrameRecord(idx, ts, NoFace())
        else:
            yield FrameRecord(idx, ts, frame, landmarks=pts)


# ---------------------------------------------------------------------------
# reference HR series

@dataclass(frozen=True)
class ReferenceSeries:
    times_s: np.ndarray
    hr_bpm: np.ndarray

    def __len__(self):
        return len(self.times_s)

    @classmethod
    def from_pairs(cls, pairs) -> "ReferenceSeries":
        arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
        series = cls(arr[:, 0].copy(), arr[:, 1].copy())
        series.validate()
        return series

    def validate(self) -> None:
        if np.any(np.diff(self.times_s) < 0):
            raise TraceFormatError("reference times must be non-decreasing")
        if np.any((self.hr_bpm <= 0) | (self.hr_bpm >= 300)):
            raise TraceFormatError("reference HR must lie in (0, 300) bpm")


def read_reference(path) -> ReferenceSeries:
    path = Path(path)
    pairs = []
    with path.open("r", encoding="ascii") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise TraceParseError(path, line_no, "expected time_s,hr_bpm")
            t = _parse_float(path, line_no, parts[0], "time")
            hr = _parse_float(path, line_no, parts[1], "hr")
            if not 0 < hr < 300:
                raise TraceFormatError(f"{path}:{line_no}: hr {hr} outside (0, 300)")
            pairs.append((t, hr))
    return ReferenceSeries.from_pairs(pairs)
