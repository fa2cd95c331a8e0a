"""Exception hierarchy shared by every stage of the pipeline."""


class MibciError(Exception):
    """Base class for all errors raised by this package."""


# -- file formats -----------------------------------------------------------

class TruncatedFile(MibciError):
    pass


class MalformedHeader(MibciError):
    pass


class UnsupportedLayout(MibciError):
    pass


class MalformedTal(MibciError):
    pass


class NonMonotoneOnsets(MibciError):
    pass


class BadMagic(MibciError):
    pass


class VersionMismatch(MibciError):
    pass


class ChecksumMismatch(MibciError):
    pass


class ParseError(MibciError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# -- dataset fetch ----------------------------------------------------------

class NotInManifest(MibciError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DigestMismatch(MibciError):
    pass


class TransportError(MibciError):
    pass


# -- numerics ---------------------------------------------------------------

class InvalidSpec(MibciError, ValueError):
    pass


class TooShort(MibciError, ValueError):
    pass


class EpochTooShort(TooShort):
    pass


class UnknownChannel(MibciError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ShapeMismatch(MibciError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ClassTooSmall(MibciError, ValueError):
    pass


class LabelOutOfRange(MibciError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonFiniteLoss(MibciError, FloatingPointError):
    def __init__(self, epoch, batch, lr):
        super().__init__(f"non-finite loss at epoch={epoch} batch={batch} lr={lr}")
        self.epoch = epoch
        self.batch = batch
        self.lr = lr


class EmptyEval(MibciError, ValueError):
    pass


# -- orchestration ----------------------------------------------------------

class ConfigError(MibciError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class MissingArtifact(MibciError):
    def __init__(self, path, stage=None):
        hint = f" (run `{stage}` first)" if stage else ""
        super().__init__(f"missing {path}{hint}")
        self.path = path
        self.stage = stage
