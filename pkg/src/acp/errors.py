"""Exception types shared across the package.

Every error carries a ``module`` and ``kind`` so the command line tool can
emit machine-parsable ``error:<module>:<kind>:`` prefixes.
"""

from __future__ import annotations


class AcpError(Exception):
    """Base class for all package errors."""

    module = "acp"
    kind = "error"

    def prefixed(self) -> str:
        return f"error:{self.module}:{self.kind}: {self}"


class CorpusFormatError(AcpError):
    """A corpus file could not be parsed; the message names the bad field."""

    module = "corpus"
    kind = "format"


class CorpusValidationError(AcpError):
    """A parsed corpus violates an invariant; the message names the image."""

    module = "corpus"
    kind = "validation"


class ContractError(AcpError):
    """An operation was called with arguments outside its contract."""

    kind = "contract"

    def __init__(self, message: str, module: str = "acp"):
        super().__init__(message)
        self.module = module


class TrainingDivergedError(AcpError):
    """Training produced a non-finite loss; the message names the step."""

    module = "trainer"
    kind = "diverged"
