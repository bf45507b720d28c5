"""Exception hierarchy shared by all modules."""


class MixedTrafficError(Exception):
    """Base class for errors raised by this package."""


class DomainError(MixedTrafficError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ParameterError(MixedTrafficError, ValueError):
    """Model parameters violate their sign/ordering constraints."""


class DegenerateLinearizationError(DomainError):
    """Linearization at a boundary equilibrium where V'(s*) = 0."""


class InfeasibleEquilibriumError(MixedTrafficError):
    """The CAV equilibrium spacing from the ring constraint is not positive."""


class ReachabilityError(InfeasibleEquilibriumError):
    """Requested equilibrium velocity is at or above the maximum reachable one."""


class TopologyError(MixedTrafficError, ValueError):
    """Invalid communication topology."""


class NumericalFailureError(MixedTrafficError):
    """A numerical routine failed to converge or produced unusable output.

    ``diagnostics`` carries whatever the failing routine could report
    (condition numbers, last iterate residuals, ...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class StructuredInfeasibleError(MixedTrafficError):
    """The sparsity-invariant relaxation has no feasible point."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class UnboundedNormError(MixedTrafficError):
    """The H2 norm is infinite (unstable or marginal mode excited)."""


class SpectrumError(MixedTrafficError, ValueError):
    """A matrix does not have the spectrum an operation requires."""


class ConfigError(MixedTrafficError, ValueError):
    """Invalid experiment configuration document."""
