"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inputs are inconsistent with each other (e.g. baseline mass outside the domain)."""


class AssumptionViolated(ValueError):
    """A hypothesis required by a construction does not hold for the given inputs."""

    def __init__(self, message: str, assumption: str = "Assumption 1"):
        super().__init__(f"{assumption} violated: {message}")
        self.assumption = assumption


class DegenerateBehaviour(ValueError):
    """A local behaviour is not finite on its closed neighbourhood."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


class DegenerateLabelsWarning(UserWarning):
    """All ground-truth labels share one class, so one ROC rate is undefined."""
