"""Error categories raised across the package."""


class FactorizerError(Exception):
    """Base class for all package errors"""


class DimensionError(FactorizerError, ValueError):
    """Operand shapes are incompatible"""


class ConfigurationError(FactorizerError, ValueError):
    """A configuration value or a divisibility requirement is violated"""


class DomainError(FactorizerError, ValueError):
    """An input lies outside the domain of an operation"""


class UsageError(FactorizerError):
    """An API was called in a way it does not support"""


class StructuralError(FactorizerError):
    """Metadata attached to a reshaped tensor does not match its data"""


class GenerationError(FactorizerError):
    """Synthetic data could not be generated with the requested parameters"""


class TrainingDivergedError(FactorizerError):
    """The training loss became non-finite"""


class FormatError(FactorizerError):
    """A file does not follow the expected binary layout"""
