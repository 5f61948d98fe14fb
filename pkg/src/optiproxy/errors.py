"""Exception types shared across the package."""


class OptiProxyError(Exception):
    """Base class for all package-specific errors."""


class InvalidArchitecture(OptiProxyError):
    """Architecture is inconsistent with its search space."""


class InvalidConfig(OptiProxyError):
    """A configuration value is out of its legal range."""


class InvalidMode(OptiProxyError):
    """Operation requested on a space with the wrong topology mode."""


class InvalidLayout(OptiProxyError):
    """A grouped-topology layout is malformed (e.g. an empty group)."""


class InvalidInput(OptiProxyError):
    """Numeric input has the wrong shape or length."""


class EnumerationRefused(OptiProxyError):
    """The space is too large to enumerate exhaustively."""


class SamplingExhausted(OptiProxyError):
    """Could not draw a valid architecture within the retry budget."""


class SpaceExhausted(OptiProxyError):
    """No unseen architectures are left to draw."""


class NumericalFailure(OptiProxyError):
    """A non-finite value appeared during model evaluation or training."""


class UnknownArchitecture(OptiProxyError):
    """Benchmark lookup for a key that is not in the table."""


class MissingFidelity(OptiProxyError):
    """Requested fidelity is not recorded for this benchmark entry."""


class UnknownDevice(OptiProxyError):
    """Requested latency device is not recorded for this benchmark entry."""


class InvalidBenchmark(OptiProxyError):
    """A benchmark file violates the tabular schema or key contract."""


class OracleFailure(OptiProxyError):
    """An oracle query failed mid-run; carries the partial history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
