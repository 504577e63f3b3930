"""Exception hierarchy shared by all somno modules."""


class SomnoError(Exception):
    """Base class for every error raised by this package."""


# edf
class EdfError(SomnoError):
    pass


class TruncatedHeader(EdfError):
    pass


class MalformedField(EdfError):
    pass


class DegenerateScale(EdfError):
    pass


class ChannelNotFound(EdfError):
    pass


class TruncatedRecord(EdfError):
    pass


class MalformedTal(EdfError):
    pass


# pipeline
class PipelineError(SomnoError):
    pass


class UnknownLabel(PipelineError):
    pass


class UpsamplingRequested(PipelineError):
    pass


class ZeroVariance(SomnoError):
    """Signal has zero standard deviation (flat or disconnected channel)."""


class TooFewSubjects(PipelineError):
    pass


class AllWakeNight(UserWarning):
    """Night has no sleep epoch; trimming left it unchanged."""


class AnnotationSignalMismatch(UserWarning):
    """Hypnogram extends past the end of the signal; extra epochs dropped."""


class BadEpochFile(PipelineError):
    pass


# features
class AllZeroScores(SomnoError):
    pass


# calibrate
class InsufficientData(SomnoError):
    pass


# net
class ShapeMismatch(SomnoError):
    pass


class DivergenceDetected(SomnoError):
    pass


class BadMagic(SomnoError):
    pass


class ShapeMismatchWithConfig(SomnoError):
    pass


class TruncatedFile(SomnoError):
    pass


# metrics
class LengthMismatch(SomnoError):
    pass


class LabelOutOfRange(SomnoError):
    pass


class EmptyMatrix(SomnoError):
    pass


# stream
class ProtocolError(SomnoError):
    pass


class UnknownFrameType(ProtocolError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class DataBeforeHello(ProtocolError):
    pass


class NonFiniteSample(UserWarning):
    """A streamed epoch held NaN or Inf samples and was dropped."""


class BindFailure(SomnoError):
    """The server could not bind its listening socket."""
