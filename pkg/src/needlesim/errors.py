"""Exception types shared across the simulator modules."""


class SimError(Exception):
    """Base class for all needlesim errors."""


# volume I/O
class MissingFile(SimError):
    pass


class BadHeader(SimError):
    pass


class SizeMismatch(SimError):
    pass


class OutOfBounds(SimError):
    pass


class EmptyMask(SimError):
    pass


# tissue model
class DegenerateClass(SimError):
    pass


class UnknownLabel(SimError):
    pass


# force engine
class BadDesignSlope(SimError):
    pass


class ZeroStiffness(SimError):
    pass


class NonPositiveStep(SimError):
    pass


# planner
class EmptyTarget(SimError):
    pass


# phantom
class BadGeometry(SimError):
    pass


# evaluation
class LengthMismatch(SimError):
    pass


class ZeroReference(SimError):
    pass


class EmptyInput(SimError):
    pass


# trainer service
class BadState(SimError):
    pass


class UnknownVolume(SimError):
    pass
