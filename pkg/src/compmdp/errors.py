"""Exception types shared across the package."""


class CompMdpError(Exception):
    """Base class for all errors raised by this package."""


class DuplicateName(CompMdpError):
    pass


class UnknownState(CompMdpError):
    pass


class UnknownAction(CompMdpError):
    pass


class NonStochasticRow(CompMdpError):
    pass


class NegativeProbability(CompMdpError):
    pass


class NoConvergence(CompMdpError):
    pass


class InvalidPolicy(CompMdpError):
    pass


class DomainMismatch(CompMdpError):
    pass


class NotASubprocess(CompMdpError):
    pass


class EmptySubset(CompMdpError):
    pass


class InconsistentGlue(CompMdpError):
    pass


class NotACocone(CompMdpError):
    pass


class IndexOutOfRange(CompMdpError):
    pass


class BrokenRightLeg(CompMdpError):
    pass


class StageGap(CompMdpError):
    pass


class PreconditionFailed(CompMdpError):
    """A theorem hypothesis required by an operation does not hold.

    The failed hypothesis name is stored in ``hypothesis``.
    """

    def __init__(self, hypothesis, message=""):
        self.hypothesis = hypothesis
        super().__init__(message or hypothesis)


class MissingSourcePolicy(CompMdpError):
    pass


class BadGeometry(CompMdpError):
    pass
