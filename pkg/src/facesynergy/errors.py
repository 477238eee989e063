"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's preconditions."""


class DegenerateInputError(ValueError):
    """Input is rank deficient or has zero variance where variance is needed."""


class UndefinedRatioError(ZeroDivisionError):
    """A ratio statistic has a zero denominator (e.g. VAF of an all-zero matrix)."""


class DegenerateAgreementError(ValueError):
    """Chance agreement equals one, so Cohen's kappa is undefined."""


class ParseError(ValueError):
    """Malformed input file.

    ``line`` is the 1-based line number in the file (the header is line 1);
    ``row`` is the 1-based data row, i.e. ``line - 1`` for lines past the header.
    """

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        self.row = line - 1 if line is not None and line > 1 else None
        where = f"{path}:" if path is not None else ""
        if line is not None:
            where += f"line {line}"
            where += f" (row {self.row}): " if self.row is not None else ": "
        elif where:
            where += " "
        super().__init__(where + message)


class MissingColumnError(ParseError):
    """A required column is absent from a CSV header."""
