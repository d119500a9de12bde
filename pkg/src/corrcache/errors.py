"""Exception types raised across the package."""


class CorrCacheError(Exception):
    """Base class for all package errors."""


class SpecError(CorrCacheError, ValueError):
    """A workload specification violates one of its invariants."""


class NonStochasticMatrix(SpecError):
    pass


class NotIrreducible(SpecError):
    pass


class BadSojournParameters(SpecError):
    pass


class BadPopularityParameters(SpecError):
    pass


class PopularityLengthMismatch(SpecError):
    pass


class ZeroMarginalPopularity(SpecError):
    pass


class SingularSolve(CorrCacheError, ArithmeticError):
    pass


class CycleCapExceeded(CorrCacheError, RuntimeError):
    pass


class PolicyError(CorrCacheError, ValueError):
    pass


class MissingContext(PolicyError):
    pass


class SetTooLarge(PolicyError):
    pass


class PlacementError(CorrCacheError, ValueError):
    pass


class BudgetExceedsUniverse(PlacementError):
    pass


class CostOutOfRange(PlacementError):
    pass


class InstanceTooLarge(PlacementError):
    pass


class EstimatorError(CorrCacheError, ValueError):
    pass


class StreamTooShort(EstimatorError):
    pass


class TooFewCycles(EstimatorError):
    pass


class ConfigParse(CorrCacheError):
    exit_code = 2


class ConfigInvalid(CorrCacheError):
    exit_code = 3


class IoFailure(CorrCacheError):
    exit_code = 4
