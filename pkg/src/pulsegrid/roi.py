"""Landmark stabilisation and per-region mean colour extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NoSignalError
from .ingest import N_LANDMARKS, RawFrame, validate_landmarks

REGION_NAMES = ("left_cheek", "right_cheek", "forehead")

LEFT_CHEEK = (1, 2, 3, 4, 48, 31, 39)
RIGHT_CHEEK = (15, 14, 13, 12, 54, 35, 42)
EYEBROWS = tuple(range(17, 27))
EYES = tuple(range(36, 48))
FOREHEAD_EXTENSION = 0.6


@dataclass(frozen=True)
class RegionSpec:
    """A facial patch built from landmark indices.

    With ``extend_up == 0`` the indices are the polygon vertices in order.
    Otherwise the region is a quadrilateral sitting on top of the polyline
    through ``landmark_indices`` and reaching ``extend_up`` times the distance
    between the centroids of ``landmark_indices`` and ``anchor_indices``.
    """

    name: str
    landmark_indices: tuple
    extend_up: float = 0.0
    anchor_indices: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.landmark_indices)
        anchors = tuple(int(i) for i in self.anchor_indices)
        object.__setattr__(self, "landmark_indices", idx)
        object.__setattr__(self, "anchor_indices", anchors)
        if len(idx) < 3 and self.extend_up == 0:
            raise ValueError(f"region {self.name!r} needs at least 3 landmark indices")
        if len(idx) < 2:
            raise ValueError(f"region {self.name!r} needs at least 2 landmark indices")
        for i in idx + anchors:
            if not 0 <= i < N_LANDMARKS:
                raise ValueError(f"region {self.name!r}: landmark index {i} outside [0, 67]")
        if self.extend_up < 0:
            raise ValueError("extend_up must be non-negative")
        if self.extend_up > 0 and not anchors:
            raise ValueError(f"region {self.name!r}: extension needs anchor indices")

    def polygon(self, landmarks: np.ndarray) -> np.ndarray:
        pts = landmarks[list(self.landmark_indices)]
        if self.extend_up == 0:
            return pts
        anchor = landmarks[list(self.anchor_indices)].mean(axis=0)
        centre = pts.mean(axis=0)
        up = centre - anchor
        dist = float(np.hypot(*up))
        if dist == 0.0:
            return np.repeat(pts[:1], 4, axis=0)
        up /= dist
        first, last = pts[0], pts[-1]
        # lift the base so every polyline point sits below it
        lift = max(0.0, float(np.max((pts - first) @ up)))
        base0 = first + lift * up
        base1 = last + lift * up
        top = self.extend_up * dist * up
        return np.array([base0, base1, base1 + top, base0 + top])


def default_regions() -> list[RegionSpec]:
    return [
        RegionSpec("left_cheek", LEFT_CHEEK),
        RegionSpec("right_cheek", RIGHT_CHEEK),
        RegionSpec("forehead", EYEBROWS, extend_up=FOREHEAD_EXTENSION, anchor_indices=EYES),
    ]


# ---------------------------------------------------------------------------
# alpha-beta landmark smoothing

@dataclass
class AlphaBetaState:
    alpha: float = 0.5
    beta: float = 0.1
    position: Optional[np.ndarray] = None
    velocity: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha={self.alpha} outside (0, 1]")
        if not 0.0 <= self.beta <= 2.0:
            raise ValueError(f"beta={self.beta} outside [0, 2]")

    @property
    def initialized(self) -> bool:
        return self.position is not None


def alpha_beta_step(state: AlphaBetaState, observed, dt_frames: float = 1.0):
    """Advance the tracker by one observation; returns ``(new_state, smoothed)``.

    The first observation initialises position with zero velocity.
    """
    if not dt_frames > 0:
        raise ValueError("dt_frames must be positive")
    obs = validate_landmarks(observed)
    if not state.initialized:
        new = AlphaBetaState(state.alpha, state.beta, obs.copy(), np.zeros_like(obs))
        return new, obs.copy()
    predicted = state.position + state.velocity * dt_frames
    residual = obs - predicted
    position = predicted + state.alpha * residual
    velocity = state.velocity + (state.beta / dt_frames) * residual
    return AlphaBetaState(state.alpha, state.beta, position, velocity), position.copy()


class LandmarkStabilizer:
    """Stateful wrapper used by the processing loop."""

    def __init__(self, alpha=0.5, beta=0.1):
        self.state = AlphaBetaState(alpha, beta)

    def update(self, observed, dt_frames=1.0) -> np.ndarray:
        self.state, smoothed = alpha_beta_step(self.state, observed, dt_frames)
        return smoothed

    def reset(self):
        self.state = AlphaBetaState(self.state.alpha, self.state.beta)


# ---------------------------------------------------------------------------
# rasterisation

def polygon_spans(vertices, width: int, height: int):
    """Yield ``(row, col_start, col_stop)`` spans covered by a polygon.

    A pixel is covered when its centre lies inside the polygon under the
    even-odd rule; a centre exactly on a left edge is inside, on a right
    edge outside. Spans are clipped to the frame.
    """
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return
    xs = v[:, 0].tolist()
    ys = v[:, 1].tolist()
    n = len(xs)
    edges = [(xs[i], ys[i], xs[(i + 1) % n], ys[(i + 1) % n]) for i in range(n)]
    edges = [e for e in edges if e[1] != e[3]]
    if not edges:
        return
    row0 = max(0, math.floor(min(ys) - 0.5))
    row1 = min(height, math.ceil(max(ys) + 0.5))
    for row in range(row0, row1):
        yc = row + 0.5
        nodes = []
        for x0, y0, x1, y1 in edges:
            if (y0 <= yc) != (y1 <= yc):
                nodes.append(x0 + (yc - y0) * (x1 - x0) / (y1 - y0))
        if len(nodes) < 2:
            continue
        nodes.sort()
        for k in range(0, len(nodes) - 1, 2):
            c0 = max(0, math.ceil(nodes[k] - 0.5))
            c1 = min(width, math.ceil(nodes[k + 1] - 0.5))
            if c1 > c0:
                yield row, c0, c1


def polygon_mask(vertices, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for row, c0, c1 in polygon_spans(vertices, width, height):
        mask[row, c0:c1] = True
    return mask


@dataclass
class RoiSample:
    means: list  # (R, G, B) per region
    degenerate: list = field(default_factory=list)
    pixel_counts: list = field(default_factory=list)
    timestamp_ms: float = 0.0
    frame_index: int = 0


def extract_region_means(frame: RawFrame, landmarks, regions: Sequence[RegionSpec],
                         timestamp_ms: float = 0.0, frame_index: int = 0) -> RoiSample:
    """Mean RGB over each region polygon.

    A region covering no pixel falls back to the mean colour at its vertices
    (clamped into the frame) and is flagged degenerate.
    """
    if not regions:
        raise ValueError("no regions configured")
    pts = validate_landmarks(landmarks)
    img = frame.as_array()
    h, w = frame.height, frame.width
    sample = RoiSample([], [], [], timestamp_ms, frame_index)
    for region in regions:
        poly = region.polygon(pts)
        total = np.zeros(3)
        count = 0
        for row, c0, c1 in polygon_spans(poly, w, h):
            total += img[row, c0:c1].sum(axis=0)
            count += c1 - c0
        if count:
            sample.means.append(tuple((total / count).tolist()))
            sample.degenerate.append(False)
        else:
            cols = np.clip(np.floor(poly[:, 0]), 0, w - 1).astype(int)
            rows = np.clip(np.floor(poly[:, 1]), 0, h - 1).astype(int)
            sample.means.append(tuple(img[rows, cols].mean(axis=0).tolist()))
            sample.degenerate.append(True)
        sample.pixel_counts.append(count)
    return sample


def combine_regions(sample) -> tuple[float, float, float]:
    """Unweighted mean of the non-degenerate region means.

    Accepts a :class:`RoiSample` or an :class:`~pulsegrid.ingest.RoiMeans`
    (whose regions are never degenerate).
    """
    means = sample.means if isinstance(sample, RoiSample) else sample.regions
    flags = sample.degenerate if isinstance(sample, RoiSample) else ()
    if len(means) == 1 and not (flags and flags[0]):
        r, g, b = means[0]
        return float(r), float(g), float(b)
    r = g = b = 0.0
    n = 0
    for i, rgb in enumerate(means):
        if flags and flags[i]:
            continue
        r += rgb[0]
        g += rgb[1]
        b += rgb[2]
        n += 1
    if n == 0:
        raise NoSignalError("every region is degenerate")
    return r / n, g / n, b / n


# ---------------------------------------------------------------------------
# canonical face layout, used for rendering and synthetic frames

def template_landmarks(width: float = 1.0, height: float = 1.0,
                       x0: float = 0.0, y0: float = 0.0) -> np.ndarray:
    """A frontal 68-point face filling the box ``(x0, y0, width, height)``."""
    pts = np.zeros((N_LANDMARKS, 2))
    for k in range(17):
        theta = math.pi - k * math.pi / 16
        pts[k] = (0.5 + 0.45 * math.cos(theta), 0.35 + 0.6 * math.sin(theta))
    for k in range(5):
        arch = 0.04 * math.sin(math.pi * k / 4)
        pts[17 + k] = (0.15 + 0.27 * k / 4, 0.25 - arch)
        pts[22 + k] = (0.58 + 0.27 * k / 4, 0.25 - 0.04 * math.sin(math.pi * (4 - k) / 4))
    for k in range(4):
        pts[27 + k] = (0.5, 0.33 + 0.22 * k / 3)
    for k in range(5):
        pts[31 + k] = (0.42 + 0.04 * k, 0.6 + 0.02 * math.sin(math.pi * k / 4))
    eye = [(-0.06, 0.0), (-0.02, -0.02), (0.02, -0.02), (0.06, 0.0), (0.02, 0.02), (-0.02, 0.02)]
    for k, (dx, dy) in enumerate(eye):
        pts[36 + k] = (0.30 + dx, 0.36 + dy)
        pts[42 + k] = (0.70 + dx, 0.36 + dy)
    for k in range(12):
        theta = math.pi + 2 * math.pi * k / 12
        pts[48 + k] = (0.5 + 0.16 * math.cos(theta), 0.76 + 0.06 * math.sin(theta))
    for k in range(8):
        theta = math.pi + 2 * math.pi * k / 8
        pts[60 + k] = (0.5 + 0.13 * math.cos(theta), 0.76 + 0.03 * math.sin(theta))
    pts[:, 0] = x0 + pts[:, 0] * width
    pts[:, 1] = y0 + pts[:, 1] * height
    return pts
