"""Exception hierarchy.

Configuration mistakes raise ``BadParams`` (or a subclass) so the CLI can
map them to exit code 2; failures of the numerics themselves raise
``NumericalError`` subclasses, mapped to exit code 3.
"""


class GeokernelError(Exception):
    """Base class for all package errors."""


class BadParams(GeokernelError):
    """Invalid parameters or configuration."""


class BadAlpha(BadParams):
    """Stability index outside (0, 1)."""


class NumericalError(GeokernelError):
    """A numerical procedure failed to reach its stated tolerance."""


class OutOfChart(NumericalError):
    """A chart was evaluated outside its declared domain."""


class ChartSwitchFailed(NumericalError):
    """No chart of the atlas covers a point reached by the flow."""


class NoConvergence(NumericalError):
    """An iteration (shooting, refinement) failed to converge."""


class QuadratureBudgetExceeded(NumericalError):
    """A quadrature request would exceed the configured node budget."""


class TailNotControlled(NumericalError):
    """A flow average was requested without a usable sup bound."""


class InsufficientResolution(NumericalError):
    """A neighborhood scan missed conjugate pairs expected by continuity."""


class ComponentsTooClose(NumericalError):
    """Two atlas components are closer than twice the partition margin."""


class SingularPairPresent(NumericalError):
    """A partition was requested from an atlas containing singular pairs."""


class DegenerateKernel(NumericalError):
    """A kernel vector was propagated onto a (numerically) zero vector."""


class NotConjugate(BadParams):
    """A record presented as conjugate does not satisfy the kernel test."""


class ReferencePointDegenerate(NumericalError):
    """The eigenfunction is too small at the requested reference point."""
