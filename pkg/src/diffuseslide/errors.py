"""Exception types shared across the engine.

Plain ``ValueError`` is used for bad arguments; the classes here cover
failure modes that callers may want to handle separately (wire protocol,
remote backends, numerics).
"""


class DiffuseSlideError(Exception):
    """Base class for engine-specific failures."""


class NumericalFailure(DiffuseSlideError):
    """A linear solve or factorization failed unexpectedly."""


class WindowTooLongError(DiffuseSlideError):
    """A denoiser was asked for more frames than its capability."""


class FormatError(DiffuseSlideError):
    """A tensor file is malformed (bad magic, version, dtype, or length)."""


class TransportError(DiffuseSlideError):
    """A remote connection could not be established or timed out."""


class ProtocolError(DiffuseSlideError):
    """A wire message violated the framing or message grammar."""


class RemoteDenoiserError(DiffuseSlideError):
    """The remote denoiser reported a failure for a request."""
