"""Exception hierarchy shared by the library and the command line front-end.

Each exception carries an ``exit_code`` used by :mod:`flatscan.cli`:
2 usage, 3 data, 4 numerical, 5 verification.
"""

from __future__ import annotations


class FlatscanError(Exception):
    exit_code = 4
    code = "ERROR"

    def __init__(self, message: str, *, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


class UsageError(FlatscanError):
    exit_code = 2
    code = "USAGE"


class DataError(FlatscanError):
    exit_code = 3
    code = "DATA"


class ParseError(DataError):
    code = "PARSE"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MassMismatch(FlatscanError):
    exit_code = 3
    code = "MASS_MISMATCH"


class LPFailure(FlatscanError):
    code = "LP_FAILURE"


class QuadratureCapExceeded(FlatscanError):
    code = "QUADRATURE_CAP"


class AxiomViolation(FlatscanError):
    exit_code = 5
    code = "AXIOM_VIOLATION"


class ParameterInfeasible(FlatscanError):
    exit_code = 2
    code = "PARAMETER_INFEASIBLE"


class RootReached(FlatscanError):
    exit_code = 2
    code = "ROOT_REACHED"


class DegenerateBase(FlatscanError):
    exit_code = 3
    code = "DEGENERATE_BASE"


class VerificationFailure(FlatscanError):
    exit_code = 5
    code = "VERIFICATION"
