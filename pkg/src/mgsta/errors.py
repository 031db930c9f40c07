"""Exception hierarchy shared by every module of the package."""


class MgstaError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(MgstaError, ValueError):
    pass


class EmptyVertexList(MgstaError, ValueError):
    pass


class NotInSimplex(MgstaError, ValueError):
    pass


class InvalidScalar(MgstaError, ValueError):
    pass


class InvalidParams(MgstaError, ValueError):
    pass


class MissingVariable(MgstaError, KeyError):
    pass


class LayoutMismatch(MgstaError, ValueError):
    pass


class BackendFailure(MgstaError, RuntimeError):
    pass


class Infeasible(MgstaError):
    """The inner convex program has no solution at the given (alpha, rho)."""

    def __init__(self, alpha, rho, detail=""):
        self.alpha = alpha
        self.rho = rho
        msg = f"infeasible at alpha={alpha:g}, rho={rho:g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class AllInfeasible(MgstaError):
    pass


class SingularMatrix(MgstaError, ArithmeticError):
    pass


class SingularBK2(SingularMatrix):
    def __init__(self, vertex):
        self.vertex = vertex
        super().__init__(f"B_i K2 is singular at vertex {vertex}")


class SingularZd(SingularMatrix):
    pass


class NonstrictMargins(MgstaError, ValueError):
    pass


class NonFinite(MgstaError, FloatingPointError):
    pass


class StepTooLarge(MgstaError, FloatingPointError):
    pass


class NonzeroInitialDisturbance(MgstaError, ValueError):
    pass
