"""Exception types shared across the package."""


class PelletDynError(Exception):
    """Base class for all pelletdyn errors."""


class ConvergenceError(PelletDynError):
    """An iterative solver failed to reach its tolerance."""


class StepSizeUnderflow(ConvergenceError):
    """Adaptive step control shrank the step below its minimum."""


class GridConstructionError(PelletDynError):
    """Collocation grid construction failed (root finding did not converge)."""


class ConfigError(PelletDynError):
    """Invalid run configuration (CLI exit code 2)."""
