"""Exception types shared across the toolkit.

Validation problems (bad parameters, broken invariants) and file-format
problems (bad magic, truncation, unparseable records) are kept distinct so
the CLI can map them to different exit codes.
"""


class ValidationError(ValueError):
    """A precondition or invariant on inputs does not hold."""


class ParseError(ValueError):
    """A line-oriented input file could not be parsed.

    Carries the 1-based line number of the offending line.
    """

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class FormatError(ValueError):
    """A binary file failed header or length validation.

    Carries the byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
