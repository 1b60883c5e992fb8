"""Exception types shared across the library."""


class CdsmoothError(Exception):
    """Base class for all library errors."""


class DegenerateCovariance(CdsmoothError):
    """A covariance matrix could not be factorized even after jittering."""


class DegenerateInnovation(CdsmoothError):
    """The innovation covariance of a measurement update is not positive definite."""


class NumericalFault(CdsmoothError):
    """A model callable or propagation step produced a non-finite value.

    Attributes
    ----------
    point : array or int or None
        The offending evaluation point (or step index), when known.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class Diverged(CdsmoothError):
    """The posterior-linearization iteration grew for two consecutive steps.

    Attributes
    ----------
    states : list
        Partial iteration results up to and including the diverging one.
    """

    def __init__(self, message, states=None):
        super().__init__(message)
        self.states = states if states is not None else []
