# core/errors.py → Error Hierarchy
# Role: One exception family for the toolkit; the CLI maps each class to an exit code.

class MaldiGenError(Exception):
    exit_code = 1


class ConfigError(MaldiGenError, ValueError):
    exit_code = 2


class InvalidInputError(MaldiGenError, ValueError):
    exit_code = 3


class ShapeError(InvalidInputError):
    pass


class CorpusParseError(InvalidInputError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericalError(MaldiGenError, RuntimeError):
    exit_code = 4
