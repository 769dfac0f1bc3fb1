"""Exception types raised across the package."""


class VseMatchError(Exception):
    """Base class for all errors raised by vsematch."""


class ZeroVector(VseMatchError, ValueError):
    def __init__(self, row: int):
        super().__init__(f"row {row} has (near) zero L2 norm and cannot be normalized")
        self.row = row


class DimensionMismatch(VseMatchError, ValueError):
    pass


class InsufficientCandidates(VseMatchError, ValueError):
    pass


class NotRawSimilarity(VseMatchError, ValueError):
    pass


class NotBijective(VseMatchError, ValueError):
    pass


class TooFewQueries(VseMatchError, ValueError):
    pass


class MissingGroundTruth(VseMatchError, ValueError):
    def __init__(self, query: int):
        super().__init__(f"query {query} has no ground-truth items")
        self.query = query


class InvalidSpec(VseMatchError, ValueError):
    pass


class DivergedLoss(VseMatchError, FloatingPointError):
    pass
