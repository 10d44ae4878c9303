"""Exception hierarchy shared by every ldcodec module."""


class LDCodecError(Exception):
    """Base class for all errors raised by ldcodec."""


class ConfigurationError(LDCodecError, ValueError):
    """A spec, config or tensor shape is inconsistent."""


class DegenerateLengthError(ConfigurationError):
    """An operation would produce zero or negative frames."""


class WeightValidationError(ConfigurationError):
    """Model weights are missing, unexpected or mis-shaped.

    ``path`` names the offending layer tensor.
    """

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class FittingError(LDCodecError):
    """Codebook fitting cannot proceed (e.g. too few samples)."""


class FormatError(LDCodecError):
    """Base class for serialization failures."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class DuplicateNameError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class BitstreamEncodingError(FormatError):
    """A code index does not fit its codebook."""


class BitstreamParseError(FormatError):
    """A bitstream header or payload is malformed."""


class ConfigParseError(ConfigurationError):
    """A config file has a bad, missing or unknown field."""


class AudioFormatError(LDCodecError):
    """Unsupported WAV input (not 16-bit PCM mono at 16 kHz)."""
