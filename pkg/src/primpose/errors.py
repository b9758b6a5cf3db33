"""Exception hierarchy shared by all stages of the estimator."""


class PrimposeError(Exception):
    """Base class for every error raised by this package."""


class DegenerateConfiguration(PrimposeError):
    """Point correspondences do not determine a similarity transform."""


class InsufficientSamples(PrimposeError):
    pass


class NonFiniteLoss(PrimposeError):
    pass


class CountMismatch(PrimposeError):
    pass


class TooFewInstances(PrimposeError):
    pass


class DimensionMismatch(PrimposeError):
    pass


class AngleNotInSpec(PrimposeError):
    pass


class MalformedDistribution(PrimposeError):
    pass


class TooFewLabels(PrimposeError):
    """Fewer distinct semantic labels than the descriptor needs; frame is unestimable."""


class DegenerateVector(PrimposeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class LabelSetTooSmall(PrimposeError):
    pass


class MissingLabel(PrimposeError):
    pass


class LengthMismatch(PrimposeError):
    pass


class ParamsOutOfRange(PrimposeError):
    pass


class EmptyView(PrimposeError):
    """The simulated camera observes no points."""


class EmptyList(PrimposeError):
    pass
