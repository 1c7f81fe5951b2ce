"""Exception and warning types raised across the package."""


class DetectorError(ValueError):
    """Base class for all data and usage errors."""


# trace ingestion
class EmptyTrace(DetectorError):
    pass


class MalformedToken(DetectorError):
    def __init__(self, source_id, token_index, byte_offset, token):
        self.source_id = source_id
        self.token_index = token_index
        self.byte_offset = byte_offset
        self.token = token
        super().__init__(
            f"{source_id}: malformed token {token!r} "
            f"(token #{token_index + 1}, byte offset {byte_offset})"
        )


class MissingDirectory(DetectorError):
    pass


class DegenerateSplit(DetectorError):
    pass


class InvalidParams(DetectorError):
    pass


# features
class UnknownCluster(DetectorError):
    pass


class RowCountMismatch(DetectorError):
    pass


# ocsvm
class DimensionMismatch(DetectorError):
    pass


class Infeasible(DetectorError):
    pass


class TooFewRows(DetectorError):
    pass


# metrics
class LengthMismatch(DetectorError):
    pass


class EmptyClass(DetectorError):
    pass


class SingleClass(DetectorError):
    pass


# selection
class IncompleteGrid(DetectorError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    """The solver hit its iteration cap; the model holds the last iterate."""


class NoNegativeDeltaWarning(UserWarning):
    """No negative DR-FAR change rate exists; K_max falls back to the probe range."""
