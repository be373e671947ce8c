"""Exception hierarchy shared by every module.

CLI exit codes map onto the two roots: ``ConfigError`` -> 2, ``DataError`` -> 3.
"""


class PolySSLError(Exception):
    pass


class ConfigError(PolySSLError, ValueError):
    pass


class DataError(PolySSLError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class ValidationError(DataError):
    pass


class InconsistencyError(DataError):
    """Lexicon and inventory disagree about a character's pronunciations."""


class LabelError(DataError):
    pass


class TargetError(DataError):
    pass


class GenerationError(DataError):
    pass


class GateError(PolySSLError, ValueError):
    """Text too short to be augmented."""
