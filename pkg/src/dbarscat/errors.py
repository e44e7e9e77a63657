"""Exception hierarchy shared by every module.

Each class carries the exit code the command-line front end maps it to,
so the CLI never has to guess which family an error belongs to.
"""


class DbarError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(DbarError, ValueError):
    """Invalid user input: bad shapes, domains, preconditions."""

    exit_code = 2


class GridMismatchError(InputError):
    """Two fields live on different grids."""


class DomainError(InputError):
    """A value lies outside the mathematical domain of an operation."""


class FieldFormatError(InputError):
    """Base class for DFLD1 decoding problems."""


class MalformedHeaderError(FieldFormatError):
    """The JSON header line is missing, unparsable or violates invariants."""


class TruncatedPayloadError(FieldFormatError):
    """The payload is shorter than the header promises."""


class DtypeMismatchError(FieldFormatError):
    """The header dtype disagrees with the payload or with the caller."""


class SolverError(DbarError, RuntimeError):
    """An iterative or dense solve failed.

    Attributes
    ----------
    residual_history : list of float
        Relative residuals recorded by the Krylov iteration, if any.
    """

    exit_code = 3

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class QuadratureError(SolverError):
    """Estimated quadrature error exceeds the requested bound."""


class SingularRenormalizationError(SolverError):
    """1 + ell(k) tau(k) vanishes, so mu-tilde is undefined."""


class DegenerateConstantError(SolverError):
    """The psi0 solve stays singular after rescale retries."""


class NotPositiveError(SolverError):
    """psi0 changes sign: the potential is likely supercritical."""


class DegenerateFitError(SolverError):
    """Normal equations of a fit are singular."""


class BlowUpError(SolverError):
    """The PDE integrator detected runaway growth."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ValidationError(DbarError):
    """A coverage or validation check failed."""

    exit_code = 4


class CoverageError(ValidationError):
    """Scattering data do not cover the region a lattice needs."""
