"""Exception and warning types shared across the package.

Two families matter for the CLI exit codes: ValidationError (bad model,
config or geometry; exit 2) and SolverError (factorization/eigensolver
trouble; exit 3).
"""


class LandauLabError(Exception):
    pass


class ValidationError(LandauLabError):
    pass


class SolverError(LandauLabError):
    pass


class ConfigError(ValidationError):
    pass


class ExpressionError(ConfigError):
    """Malformed field expression."""


class NonDegeneracyViolation(ValidationError):
    """Smallest frame eigenvalue drops below the declared bound b0."""


class MetricNotSPD(ValidationError):
    """Metric matrix fails positive-definiteness at some node."""


class DegenerateField(ValidationError):
    """Two-form is (numerically) degenerate at a point."""


class EmptyRegion(ValidationError):
    pass


class UnsupportedGeometry(ValidationError):
    """Assembly is restricted to d=2 with the identity metric."""


class ResolutionGateError(ValidationError):
    """Fewer than 8 grid nodes per magnetic length; assembly refuses."""


class FluxNotQuantized(ValidationError):
    """p * total flux is not an integer multiple of 2*pi on the torus."""

    def __init__(self, p, flux, nearest_admissible):
        self.p = p
        self.flux = flux
        self.nearest_admissible = nearest_admissible
        super().__init__(
            f"p*flux/(2*pi) = {p * flux / (2 * 3.141592653589793):.12g} is not an "
            f"integer (p={p}, flux={flux:.12g}); nearest admissible p is "
            f"{nearest_admissible}"
        )


class GaugeConsistencyError(ValidationError):
    """Plaquette phase sums disagree with p * flux beyond tolerance."""


class ShiftTooClose(SolverError):
    """Factorization shift sits (numerically) on an eigenvalue."""


class FactorizationFailure(SolverError):
    pass


class ConvergenceFailure(SolverError):
    def __init__(self, message, iterations=None, residuals=None):
        self.iterations = iterations
        self.residuals = residuals
        super().__init__(message)


class DegenerateFit(SolverError):
    """Power-law fit got a nonpositive sample; caller substitutes a floor."""


class BoundaryOnLevelSetWarning(UserWarning):
    """An interval endpoint sits on a Landau level over a positive-measure set."""


class ResolutionMarginWarning(UserWarning):
    """K-set closer to the Dirichlet boundary than the recommended margin."""


class FluxAdjustedWarning(UserWarning):
    """Requested p replaced by the nearest flux-quantized value."""
