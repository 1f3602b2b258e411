class FedMintError(Exception):
    """Base class of every error raised by the core package."""


class DomainValidationError(FedMintError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super(DomainValidationError, self).__init__(message)


class RangeError(FedMintError, ValueError):
    pass


class NoParticipantsError(FedMintError):
    pass


class BudgetExhaustedError(FedMintError):
    """Inquiry refused, the requesting server has no bootstrapping calls left."""


class NoTrainingDataError(FedMintError):
    """No interaction record is available to train the bootstrap tree."""


class DatasetError(FedMintError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        super(DatasetError, self).__init__(message if row is None else 'row {}: {}'.format(row, message))


class MalformedPreferencesError(FedMintError, ValueError):
    pass


class OracleBoundError(FedMintError):
    """Instance too large for exhaustive enumeration."""


class AuditError(FedMintError):
    pass


class ConfigError(FedMintError, ValueError):
    def __init__(self, errors):
        # errors: list of "section.key: message" strings
        self.errors = list(errors)
        super(ConfigError, self).__init__('; '.join(self.errors))


class TrainerError(FedMintError):
    pass


class SimulationError(FedMintError):
    def __init__(self, message, round_index=None, arm=None):
        self.round_index = round_index
        self.arm = arm
        super(SimulationError, self).__init__('round {} arm {}: {}'.format(round_index, arm, message))
