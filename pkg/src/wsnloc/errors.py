"""Exception types raised by the pipeline."""


class WsnlocError(Exception):
    """Base class for all pipeline errors."""


class GeometryError(WsnlocError, ValueError):
    pass


class UndeployableScenario(WsnlocError):
    pass


class NotOneHopLink(WsnlocError, ValueError):
    pass


class DisconnectedGraph(WsnlocError, ValueError):
    pass


class DegenerateProfile(WsnlocError, ValueError):
    """All occurrence counts are equal, so there is nothing to cluster."""


class NoReferenceTriple(WsnlocError):
    pass


class InconsistentTrilateration(WsnlocError, ValueError):
    pass


class NoIntersection(WsnlocError, ValueError):
    pass


class UncalibratableSubnet(WsnlocError):
    pass
