"""Exception hierarchy shared by every module of the package."""


class AdvocateError(Exception):
    pass


class UnknownParent(AdvocateError):
    pass


class DuplicateBlock(AdvocateError):
    pass


class UnknownBlock(AdvocateError):
    pass


class CyclicInput(AdvocateError):
    pass


class UnknownCheckpoint(AdvocateError):
    pass


class StaleBlock(AdvocateError):
    pass


class MissingReferringBlock(AdvocateError):
    pass


class CheckpointConflict(AdvocateError):
    pass


class InvalidBlock(AdvocateError):
    pass


class NegativeComponent(AdvocateError, ValueError):
    pass


class DomainError(AdvocateError, ValueError):
    pass


class EmptyWindow(AdvocateError):
    pass


class MismatchedConfigs(AdvocateError):
    pass


class ConfigError(AdvocateError, ValueError):
    pass


class SafetyViolation(AdvocateError):
    """A stable ledger prefix changed or two honest parties disagree on it."""
