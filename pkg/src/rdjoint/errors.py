"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` so the CLI can map it
to an exit status and a JSON payload without parsing messages.
"""


class RDError(Exception):
    """Base class for all library errors."""

    code = "rd_error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class SchemaError(RDError):
    """Input table does not match the requested column layout."""

    code = "schema_error"


class ParseError(RDError):
    """A cell could not be parsed as a finite number."""

    code = "parse_error"


class DomainError(RDError, ValueError):
    """An argument lies outside its admissible domain."""

    code = "domain_error"


class EstimationError(RDError):
    """A local polynomial fit or first stage could not be computed."""

    code = "estimation_error"


class InferenceError(RDError):
    """A covariance or region is degenerate and cannot support inference."""

    code = "inference_error"


class RDWarning(UserWarning):
    """Non-fatal diagnostic with a stable ``code``."""

    def __init__(self, message, code="warning"):
        super().__init__(message)
        self.code = code
