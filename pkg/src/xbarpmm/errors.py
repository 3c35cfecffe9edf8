class ParameterError(ValueError):
    """Base class for rejected ring, crossbar or fabric parameters."""


class UnsupportedParametersError(ParameterError):
    pass


class InvalidModulusError(UnsupportedParametersError):
    pass


class OperandRangeError(ValueError):
    """An input lies outside the admissible range of an operation."""


class DimensionError(ValueError):
    pass


class PlanError(ValueError):
    pass


class CostConfigError(ValueError):
    pass
