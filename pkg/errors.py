"""
Exception hierarchy for phi-kit.
Library code raises these; only the CLI turns them into exit codes.
"""


class PhiKitError(Exception):
    """Base class for every error raised by phi-kit."""


class ConfigError(PhiKitError, ValueError):
    """Invalid configuration, dimension mismatch or unknown name."""


class StepTooLargeError(PhiKitError, RuntimeError):
    """The implicit relation of a step could not be solved at this timestep."""


class BlowUpError(PhiKitError, RuntimeError):
    """A state became non-finite or exceeded the blow-up threshold."""


class EvaluationError(PhiKitError, ArithmeticError):
    """A field or map was evaluated outside its validity region."""


EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_SOLVER = 2
EXIT_BLOW_UP = 3
EXIT_CONFIG = 4


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, StepTooLargeError):
        return EXIT_SOLVER
    if isinstance(exc, (BlowUpError, EvaluationError)):
        return EXIT_BLOW_UP
    return EXIT_UNEXPECTED
