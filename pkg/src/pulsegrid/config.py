"""``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Unknown keys are an error so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import roi, spectral
from .errors import ConfigError
from .pipeline import PipelineConfig, TickConfig

SOURCES = ("synthetic", "trace", "frames")


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _port(text):
    value = int(text)
    if not 0 <= value <= 65535:
        raise ValueError("port out of range")
    return value


def _band(text):
    lo, hi = (float(p) for p in text.split("-"))
    return (lo, hi)


def _names(text):
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    unknown = set(names) - set(roi.REGION_NAMES)
    if not names or unknown:
        raise ValueError(f"regions must be a comma list from {', '.join(roi.REGION_NAMES)}")
    return names


PARSERS = {
    "source": _choice(SOURCES),
    "trace": str,
    "frames_dir": str,
    "landmarks": str,
    "reference": str,
    "tick_period_ms": float,
    "noface_reset_threshold": int,
    "method": _choice(spectral.METHODS),
    "filter_window": _choice(("none", "lanczos", "hamming")),
    "hr_band": _band,
    "regions": _names,
    "rest_port": _port,
    "stream_port": _port,
    "bind_address": str,
    "jpeg_quality": int,
    "spo2_stub": float,
    "seed": int,
    "synthetic_hr_bpm": float,
    "synthetic_rr_brpm": float,
    "synthetic_duration_s": float,
    "synthetic_noise_std": float,
}


@dataclass
class Settings:
    source: str = "synthetic"
    trace: Optional[str] = None
    frames_dir: Optional[str] = None
    landmarks: Optional[str] = None
    reference: Optional[str] = None
    tick_period_ms: float = 1000.0 / 30.0
    noface_reset_threshold: int = 60
    method: str = "fft"
    filter_window: str = "none"
    hr_band: tuple = (0.75, 2.5)
    regions: tuple = roi.REGION_NAMES
    rest_port: int = 8080
    stream_port: int = 8081
    bind_address: str = "127.0.0.1"
    jpeg_quality: int = 80
    spo2_stub: float = 0.0
    seed: int = 0
    synthetic_hr_bpm: float = 72.0
    synthetic_rr_brpm: float = 15.0
    synthetic_duration_s: float = 60.0
    synthetic_noise_std: float = 0.0

    def updated(self, **overrides) -> "Settings":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def pipeline_config(self, render_frames: bool = False) -> PipelineConfig:
        try:
            scfg = spectral.SpectralConfig(method=self.method, hr_band=tuple(self.hr_band))
            tick = TickConfig(self.tick_period_ms, self.noface_reset_threshold)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        regions = [r for r in roi.default_regions() if r.name in self.regions]
        return PipelineConfig(
            spectral=scfg, tick=tick, nominal_fs_hz=1000.0 / self.tick_period_ms,
            filter_window=self.filter_window, regions=regions,
            spo2_stub=self.spo2_stub, render_frames=render_frames,
        )


def parse_config(text: str, origin: str = "<config>") -> dict:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{origin}:{line_no}: expected key = value")
        if key not in PARSERS:
            raise ConfigError(f"{origin}:{line_no}: unknown key {key!r}")
        try:
            values[key] = PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{origin}:{line_no}: bad value for {key}: {exc}") from None
    return values


def load_settings(path=None) -> Settings:
    if path is None:
        return Settings()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return Settings(**parse_config(text, str(p)))
