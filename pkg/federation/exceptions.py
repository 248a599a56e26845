"""Error taxonomy shared by every federation module."""


class FederationError(ValueError):
    """Base class for all federation errors"""


class EmptyInput(FederationError):
    pass


class InvalidTensor(FederationError):
    pass


class SchemaMismatch(FederationError):
    pass


class LengthMismatch(FederationError):
    pass


class MissingPrevParams(FederationError):
    pass


class EmptyRoster(FederationError):
    pass


class DuplicateId(FederationError):
    pass


class BadFraction(FederationError):
    pass


class BadConfig(FederationError):
    pass


class BadSpec(FederationError):
    pass


class EmptyShard(FederationError):
    pass


class CorruptCheckpoint(FederationError):
    pass


class ConfigMismatch(FederationError):
    pass


class EmptyRecords(FederationError):
    pass


class IncomparableConfigs(FederationError):
    pass


class ConfigError(FederationError):
    """Experiment config failed validation; carries every field message"""

    def __init__(self, errors):
        self.errors = errors
        lines = [f"{field}: {message}" for field, messages in errors.items() for message in messages]
        super().__init__("Invalid experiment config:\n  " + "\n  ".join(lines))
