"""Exception hierarchy shared by every module of the codec."""


class CodecError(Exception):
    """Base class for all errors raised by refpcc."""


class ParameterError(CodecError, ValueError):
    """An argument is outside the operation's domain."""


class CorruptionError(CodecError):
    """A container or stream is internally inconsistent."""


class MismatchError(CodecError):
    """A container was paired with the wrong reference cloud or map."""


class NotFoundError(CodecError, KeyError):
    """A referenced cloud id is not present in the dataset."""

    def __str__(self):
        return Exception.__str__(self)


class FormatError(CodecError):
    """A file could not be parsed."""
