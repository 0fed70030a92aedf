"""Camera-based heart and breathing rate estimation with network outputs."""

from .buffer import AcquisitionState, BufferPolicy, BufferState, SignalBuffer
from .color import rgb_to_lab
from .evaluation import align_series, compute_metrics, run_benchmark
from .fir import design_bandpass, design_lowpass
from .ingest import FrameRecord, NoFace, RawFrame, RoiMeans, SyntheticConfig, generate_synthetic
from .pipeline import DataContainer, PipelineConfig, Processor, VitalsRecord, run
from .spectral import SpectralConfig, estimate_psd, pick_hr, pick_rr

__version__ = "0.1.0"
