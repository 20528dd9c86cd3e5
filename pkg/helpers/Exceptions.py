class StableFlowError(Exception):
    """Exception class from which every exception in this library will derive.
    It enables other projects using this library to catch all errors coming
    from the library with a single "except" statement
    """

    pass


class BadUserInput(StableFlowError):
    """Wrong command switch used or otherwise wrong user input"""

    pass


class ConfigError(StableFlowError):
    """Error reading config files or environment"""

    pass


class ScenarioError(StableFlowError):
    """Unknown scenario or a scenario file that cannot be parsed"""

    def __init__(self, msg: str, line: int = 0, column: int = 0) -> None:
        self.line = line
        self.column = column
        location = f" (line {line}, column {column})" if line else ""
        if column and not line:
            location = f" (column {column})"
        super().__init__(f"{msg}{location}")


class DegenerateMetricError(StableFlowError):
    """The metric is not symmetric positive definite at an evaluated point"""

    pass


class DiscretizationError(StableFlowError):
    """A discretized identity failed its tolerance (residuals are in the message)"""

    pass


class OutsideTubeError(StableFlowError):
    """A point could not be resolved inside the tubular neighbourhood"""

    pass


class RankError(StableFlowError):
    """A plane was given by linearly dependent vectors"""

    pass


class ExpansionMismatchError(StableFlowError):
    """A Fermi-coordinate expansion residual does not decay at the expected order"""

    pass


class ReparametrizeFirstError(StableFlowError):
    """Node spacing of a discrete curve is too uneven to differentiate"""

    pass


class GraphicalRegimeError(StableFlowError):
    """A tangent plane is too far from horizontal (*Omega <= 1/2)"""

    pass


class PreconditionError(StableFlowError):
    """An operation was called on input that violates its precondition"""

    pass


class IterationLimitError(StableFlowError):
    """An iterative solver did not converge within its iteration budget"""

    pass


class SolverError(StableFlowError):
    """A linear system could not be solved"""

    pass


class GridMismatchError(StableFlowError):
    """Sampled data does not match the grid it is used on"""

    pass


class NotCoassociativeError(StableFlowError):
    """The 3-form does not vanish on the given 4-plane"""

    pass


class InvalidCurvatureError(StableFlowError):
    """A curvature tensor violates its algebraic symmetries"""

    pass


class ConstraintViolationError(StableFlowError):
    """A generated sample does not satisfy its linear constraints"""

    pass


class DecayFitError(StableFlowError):
    """An exponential decay fit has no usable window"""

    pass


class FlowTermination(StableFlowError):
    """A flow run had to stop before reaching its horizon"""

    reason = "terminated"


class BlowupError(FlowTermination):
    """The second fundamental form exceeded the blowup threshold"""

    reason = "blowup"


class LeftTubeError(FlowTermination):
    """A node of the evolving curve left the tubular neighbourhood"""

    reason = "left-tube"


class LeftGraphicalError(FlowTermination):
    """The evolving curve stopped being a graph over the reference"""

    reason = "left-graphical"


class InternalError(StableFlowError):
    """An internal error that should not happen (fail save error)"""

    pass
