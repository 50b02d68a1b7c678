"""Exception hierarchy shared by every simulator module."""


class CaseSimError(Exception):
    """Base class for all simulator errors."""


# kernel
class SchedulingInPast(CaseSimError):
    pass


class UnknownHandle(CaseSimError):
    pass


class HorizonBehindClock(CaseSimError):
    pass


class DispatchError(CaseSimError):
    """An event action raised while being dispatched."""

    def __init__(self, event, cause: BaseException):
        self.event = event
        self.cause = cause
        super().__init__(
            f"t={event.time:.3f} {event.kind.value} target={event.target}: "
            f"{type(cause).__name__}: {cause}"
        )


# case record
class EmptyEnrollment(CaseSimError):
    pass


class UnknownCase(CaseSimError):
    pass


class UnknownContribution(CaseSimError):
    pass


class AccessDenied(CaseSimError):
    pass


class NotCaseManager(CaseSimError):
    pass


class NotCoreTeamMember(CaseSimError):
    """Write rights may only be granted to core-team members."""


class NotPending(CaseSimError):
    pass


class NotFlagged(CaseSimError):
    pass


class NotAuthor(CaseSimError):
    pass


class NotApproved(CaseSimError):
    pass


class IllegalTransition(CaseSimError):
    pass


# collaboration
class NoCaseManagerInPool(CaseSimError):
    pass


class EmptyPool(CaseSimError):
    pass


class TerminalStage(CaseSimError):
    pass


class NotAssessed(CaseSimError):
    pass


class InvalidTransitionTable(CaseSimError):
    pass


# resources
class UnitsExceedCapacity(CaseSimError):
    pass


class AlreadyReleased(CaseSimError):
    pass


class GrantNotActive(CaseSimError):
    pass


class RunNotFinished(CaseSimError):
    pass


# config / scenario
class ConfigError(CaseSimError):
    """Base for config problems; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str = ""):
        self.key = key
        super().__init__(f"{key}: {message}" if message else key)


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


class MissingUnit(ConfigError):
    pass


class UnknownParameter(CaseSimError):
    pass


class SimulationAbort(CaseSimError):
    pass
