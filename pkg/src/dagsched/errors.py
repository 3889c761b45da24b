"""Exception hierarchy shared by every module of the package."""


class SchedulingError(Exception):
    """Base class for all errors raised by dagsched."""


# dag construction
class CycleDetected(SchedulingError):
    pass


class DanglingEdge(SchedulingError):
    pass


class DuplicateNodeId(SchedulingError):
    pass


class InvalidJob(SchedulingError):
    pass


# cluster / timelines
class UnknownExecutor(SchedulingError):
    pass


class OverlapRejected(SchedulingError):
    pass


# allocation
class ParentUnplaced(SchedulingError):
    pass


class NotAParent(SchedulingError):
    pass


# simulation and policies
class PolicyReturnedNonFrontierNode(SchedulingError):
    pass


class EmptyFrontier(SchedulingError):
    pass


class ContinuousModeUnsupported(SchedulingError):
    pass


class ScheduleViolation(SchedulingError):
    """A produced schedule breaks overlap, precedence or arrival rules."""


# neural
class DimMismatch(SchedulingError):
    pass


class TapeMismatch(SchedulingError):
    pass


class NonFiniteGradient(SchedulingError):
    pass


# workloads and metrics
class InvalidSpec(SchedulingError):
    pass


class ParseError(SchedulingError):
    pass


class IncompleteSchedule(SchedulingError):
    pass


class EmptySamples(SchedulingError):
    pass
