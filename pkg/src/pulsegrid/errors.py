"""Exception hierarchy shared across the package."""


class PulseGridError(Exception):
    """Base class for all errors raised by pulsegrid."""


class ConfigError(PulseGridError, ValueError):
    pass


class TraceParseError(PulseGridError, ValueError):
    """A trace, landmark or reference file line could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class TraceFormatError(PulseGridError, ValueError):
    """Structurally valid lines that violate a stream invariant."""


class FrameDecodeError(PulseGridError, ValueError):
    pass


class ColorRangeError(PulseGridError, ValueError):
    pass


class NoSignalError(PulseGridError):
    """Every region of a frame was degenerate."""


class NotReadyError(PulseGridError):
    """The signal buffer has not collected enough samples yet."""


class FilterDesignError(PulseGridError, ValueError):
    pass


class SpectralError(PulseGridError, ValueError):
    pass


class AlignmentError(PulseGridError, ValueError):
    pass


class EndOfStream(PulseGridError):
    """The frame source is exhausted."""


class ServerStartupError(PulseGridError, OSError):
    pass
