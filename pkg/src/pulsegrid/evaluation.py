"""Accuracy metrics against reference HR, and the per-stage timing benchmark."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import AlignmentError, TraceParseError
from .ingest import ReferenceSeries, SyntheticConfig, generate_synthetic

ESTIMATE_HEADER = "t_s,hr_bpm,rr_brpm,stable"


@dataclass
class Alignment:
    pairs: list
    dropped: int


def align_series(estimates, reference: ReferenceSeries) -> Alignment:
    """Pair each ``(t_s, hr)`` estimate with the reference interpolated at ``t_s``.

    Estimates outside the reference span are dropped and counted.
    """
    est = list(estimates)
    if not est or len(reference) == 0:
        raise AlignmentError("both series must be non-empty")
    t_ref = reference.times_s
    lo, hi = float(t_ref[0]), float(t_ref[-1])
    pairs = []
    dropped = 0
    for t, hr in est:
        if lo <= t <= hi:
            pairs.append((float(hr), float(np.interp(t, t_ref, reference.hr_bpm))))
        else:
            dropped += 1
    if not pairs:
        raise AlignmentError(
            f"no estimate time falls inside the reference span [{lo}, {hi}] s"
        )
    return Alignment(pairs, dropped)


@dataclass
class MetricReport:
    mae_bpm: float
    rmse_bpm: float
    pcc: Optional[float]
    n_points: int
    flags: set = field(default_factory=set)
    per_trace: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        pcc = "undefined" if self.pcc is None else f"{self.pcc:.6f}"
        out = [f"n_points={self.n_points}", f"mae_bpm={self.mae_bpm:.6f}",
               f"rmse_bpm={self.rmse_bpm:.6f}", f"pcc={pcc}"]
        out += [f"flag={f}" for f in sorted(self.flags)]
        for name, rep in sorted(self.per_trace.items()):
            out += [f"{name}.{line}" for line in rep.lines()]
        return out


def _pcc(est: np.ndarray, ref: np.ndarray) -> Optional[float]:
    if est.size < 2:
        return None
    de = est - est.mean()
    dr = ref - ref.mean()
    se = math.sqrt(float(de @ de))
    sr = math.sqrt(float(dr @ dr))
    if se == 0.0 or sr == 0.0:
        return None
    return max(-1.0, min(1.0, float(de @ dr) / (se * sr)))


def compute_metrics(pairs) -> MetricReport:
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    if arr.shape[0] == 0:
        raise ValueError("no pairs to evaluate")
    est, ref = arr[:, 0], arr[:, 1]
    err = est - ref
    mae = float(np.mean(np.abs(err)))
    rmse = math.sqrt(float(np.mean(err * err)))
    # guards the last-ulp case where identical |err| rounds rmse below mae
    rmse = max(rmse, mae)
    pcc = _pcc(est, ref)
    flags = set()
    if pcc is None:
        flags.add("pcc_undefined")
    return MetricReport(mae, rmse, pcc, int(arr.shape[0]), flags)


def aggregate(reports: dict) -> MetricReport:
    """Pool per-trace pairs into one report keeping the breakdown."""
    pooled = [p for pairs, _ in reports.values() for p in pairs]
    total = compute_metrics(pooled)
    total.per_trace = {name: rep for name, (_, rep) in reports.items()}
    return total


# ---------------------------------------------------------------------------
# estimate files

def format_estimate_row(t_s: float, hr: float, rr: Optional[float], stable: bool) -> str:
    rr_txt = "" if rr is None else f"{rr:.6f}"
    return f"{t_s:.3f},{hr:.6f},{rr_txt},{int(stable)}"


def write_estimates(path, emissions) -> int:
    lines = [ESTIMATE_HEADER]
    lines += [format_estimate_row(e.t_s, e.hr_bpm, e.rr_brpm, e.stable) for e in emissions]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    return len(lines) - 1


def read_estimates(path) -> list[tuple]:
    """Rows of ``(t_s, hr, rr or None, stable)``."""
    path = Path(path)
    rows = []
    with path.open("r", encoding="ascii") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#") or line == ESTIMATE_HEADER:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise TraceParseError(path, line_no, "expected t_s,hr_bpm,rr_brpm,stable")
            try:
                rows.append((float(parts[0]), float(parts[1]),
                             float(parts[2]) if parts[2] else None, parts[3] == "1"))
            except ValueError as exc:
                raise TraceParseError(path, line_no, str(exc)) from None
    return rows


# ---------------------------------------------------------------------------
# benchmark

@dataclass
class BenchmarkResult:
    frames: int
    stages: dict  # name -> mean ms per frame
    total_ms_per_frame: float
    wall_s: float

    @property
    def fps(self) -> float:
        return 1000.0 / self.total_ms_per_frame if self.total_ms_per_frame > 0 else math.inf

    @property
    def wall_fps(self) -> float:
        return self.frames / self.wall_s if self.wall_s > 0 else math.inf

    def table(self) -> str:
        from .pipeline import STAGE_LABELS
        width = max(len(v) for v in STAGE_LABELS.values()) + 2
        rows = [f"{'Stage':<{width}}{'ms/frame':>12}{'fps':>12}"]
        for name, ms in self.stages.items():
            fps = 1000.0 / ms if ms > 0 else math.inf
            rows.append(f"{STAGE_LABELS[name]:<{width}}{ms:>12.4f}{fps:>12.0f}")
        rows.append(f"{'Signal chain total':<{width}}{self.total_ms_per_frame:>12.4f}{self.fps:>12.0f}")
        rows.append(f"{'Wall clock (incl. overhead)':<{width}}"
                    f"{1000.0 / self.wall_fps:>12.4f}{self.wall_fps:>12.0f}")
        return "\n".join(rows)

    def lines(self) -> list[str]:
        out = [f"frames={self.frames}"]
        out += [f"stage.{k}.mean_ms_per_frame={v:.6f}" for k, v in self.stages.items()]
        out += [f"total_ms_per_frame={self.total_ms_per_frame:.6f}",
                f"chain_fps={self.fps:.1f}", f"wall_fps={self.wall_fps:.1f}"]
        return out


def run_benchmark(cfg=None, trace=None, frames: int = 1000) -> BenchmarkResult:
    """Replay ``trace`` (default: a noiseless synthetic trace) and time every stage."""
    from .pipeline import PipelineConfig, Processor, run_replay

    if trace is None:
        fs = 30.0
        trace = list(generate_synthetic(SyntheticConfig(fs_hz=fs, duration_s=frames / fs)))
    trace = list(trace)[:frames] if frames else list(trace)
    proc = Processor(cfg or PipelineConfig())
    report = run_replay(trace, proc)
    stages = {k: v["mean_ms_per_frame"] for k, v in report.stages.items()}
    return BenchmarkResult(len(trace), stages, sum(stages.values()), report.wall_s)
