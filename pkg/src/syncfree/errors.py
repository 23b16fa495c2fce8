"""Exception types raised across the package."""


class SyncfreeError(Exception):
    """Base class for all package errors."""


class InvalidGraph(SyncfreeError, ValueError):
    pass


class BoundViolation(SyncfreeError, ValueError):
    """A local bound does not exceed the weighted in-degree of its agent."""

    def __init__(self, agent, bound, in_degree):
        self.agent = agent
        self.bound = bound
        self.in_degree = in_degree
        super().__init__(
            f"agent {agent}: local bound {bound!r} does not exceed in-degree {in_degree!r}"
        )


class EigensolverFailure(SyncfreeError, RuntimeError):
    pass


class NoSpanningTree(SyncfreeError, ValueError):
    pass


class DimensionMismatch(SyncfreeError, ValueError):
    pass


class VariantMismatch(SyncfreeError, ValueError):
    pass


class DegeneratePencil(SyncfreeError, ValueError):
    """The system pencil has deficient normal rank, so every s is a 'zero'."""


class NotScalarChannel(SyncfreeError, ValueError):
    pass


class PoleAt(SyncfreeError, ValueError):
    def __init__(self, s):
        self.s = s
        super().__init__(f"transfer matrix has a pole at s = {s!r}")


class NotNeutrallyStable(SyncfreeError, ValueError):
    pass


class IllConditionedBasis(SyncfreeError, ValueError):
    def __init__(self, cond):
        self.cond = cond
        super().__init__(f"diagonalizing basis has condition number {cond:.3e}")


class NotDetectable(SyncfreeError, ValueError):
    pass


class RiccatiFailure(SyncfreeError, RuntimeError):
    pass


class NotHurwitz(SyncfreeError, ValueError):
    pass


class DeltaUnderflow(SyncfreeError, RuntimeError):
    pass


class ConditionsNotMet(SyncfreeError, ValueError):
    def __init__(self, condition, detail=""):
        self.condition = condition
        msg = f"synthesis precondition failed: {condition}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class GridSearchFailure(SyncfreeError, RuntimeError):
    pass


class FalsificationInconclusive(SyncfreeError, RuntimeError):
    """Characteristic polynomial depends on lambda but no violation was found."""


class StepSizeTooLarge(SyncfreeError, ValueError):
    pass


class StepGuardViolation(SyncfreeError, ValueError):
    pass
