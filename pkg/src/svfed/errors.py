"""Exception hierarchy shared by all svfed modules."""


class SvfedError(Exception):
    """Base class for every error raised by svfed."""


class InvalidInputError(SvfedError, ValueError):
    """Malformed arguments, e.g. a feature-dimension mismatch."""


class ConfigurationError(SvfedError, ValueError):
    """Parameters that cannot work together (infeasible C, n < k, ...)."""


class ConvergenceError(SvfedError, RuntimeError):
    """The SMO solver hit its iteration cap.

    ``beta`` holds the last (and best, SMO being monotone) iterate and
    ``violation`` its maximal KKT violation.
    """

    def __init__(self, message, beta, violation, iterations):
        super().__init__(message)
        self.beta = beta
        self.violation = violation
        self.iterations = iterations


class SamplerStarvationError(SvfedError, RuntimeError):
    """No synthetic draw landed inside the sphere within the attempt budget."""


class DatasetParseError(SvfedError, ValueError):
    """CSV ingestion failure; ``row``/``column`` are 1-based when known."""

    def __init__(self, message, path=None, row=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        super().__init__(f"{': '.join([', '.join(loc), message]) if loc else message}")
        self.path = path
        self.row = row
        self.column = column


class ClientError(SvfedError):
    """Wraps a failure raised while simulating one client."""

    def __init__(self, client, cause):
        super().__init__(f"client {client}: {cause}")
        self.client = client
        self.cause = cause


class IncompleteContrastError(SvfedError, ValueError):
    def __init__(self, missing):
        cells = "; ".join(str(m) for m in missing)
        super().__init__(f"missing contrast arms for cells: {cells}")
        self.missing = list(missing)


class UndefinedAucError(SvfedError, ValueError):
    """AUC needs at least one normal and one anomalous point."""


class ExperimentError(SvfedError):
    """A failure inside one experiment run, annotated with where it happened."""

    def __init__(self, context, cause):
        super().__init__(f"{context}: {cause}")
        self.context = context
        self.cause = cause
