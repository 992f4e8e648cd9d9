"""Exception hierarchy.

Two families matter to callers (and to the CLI exit codes):
``NumericalError`` for things that went wrong during a computation, and
``PreconditionError`` for inputs outside an operation's domain.
"""


class GmcLabError(Exception):
    code = "gmclab.error"


class NumericalError(GmcLabError):
    code = "numeric"


class PreconditionError(GmcLabError, ValueError):
    code = "precondition"


class QuadratureError(NumericalError):
    """Step refinement did not stabilize; carries the last two iterates."""

    code = "field.quadrature"

    def __init__(self, msg, previous=None, last=None):
        super().__init__(f"{msg} (last iterates: {previous!r}, {last!r})")
        self.previous = previous
        self.last = last


class NotPSDError(NumericalError):
    code = "field.not_psd"

    def __init__(self, min_eigenvalue, jitter):
        super().__init__(
            f"covariance matrix not positive semidefinite after jitter "
            f"{jitter:g}; smallest eigenvalue {min_eigenvalue:.3e}")
        self.min_eigenvalue = min_eigenvalue
        self.jitter = jitter


class ResolutionError(PreconditionError):
    code = "field.resolution"


class DominationError(PreconditionError):
    code = "field.domination"


class SubcriticalityError(PreconditionError):
    code = "gmc.subcritical"


class RegimeError(PreconditionError):
    code = "gmc.regime"


class MomentExistenceError(PreconditionError):
    code = "multifractal.moment"


class FitError(NumericalError):
    code = "multifractal.fit"


class SeibergError(PreconditionError):
    code = "lqft.seiberg"


class ChartError(PreconditionError):
    code = "lqft.chart"


class FormulaDomainError(PreconditionError):
    code = "ising.domain"


class PlacementError(PreconditionError):
    code = "ising.placement"
