"""Exception types shared across the package."""


class ElfsError(Exception):
    """Base class for all errors raised by this package."""


# -- graph construction and surgery --------------------------------------

class NonPositiveWeight(ElfsError):
    pass


class SelfLoop(ElfsError):
    pass


class SinkIsWholeGraph(ElfsError):
    pass


class Disconnected(ElfsError):
    pass


# -- linear algebra -------------------------------------------------------

class SingularSystem(ElfsError):
    """A solve that must succeed on valid input failed; internal error."""


class SingularBlock(ElfsError):
    pass


class EmptyKeepSet(ElfsError):
    pass


# -- simulation -----------------------------------------------------------

class StepLimitExceeded(ElfsError):
    pass


# -- cross-checks ---------------------------------------------------------

class OracleMismatch(ElfsError):
    """Two independent routes to the same quantity disagree."""


class IdentityViolation(ElfsError):
    """A closed-form identity failed beyond tolerance."""


# -- tree analysis --------------------------------------------------------

class NotACutVertex(ElfsError):
    pass


class NotATree(ElfsError):
    pass


class EndpointInSink(ElfsError):
    pass


# -- quantum walk simulation ----------------------------------------------

class DimensionOverflow(ElfsError):
    pass


class PrecisionOverflow(ElfsError):
    pass


class InvalidBound(ElfsError):
    pass


# -- CLI ------------------------------------------------------------------

class BadSpec(ElfsError):
    pass
