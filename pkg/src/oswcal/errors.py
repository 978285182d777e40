class ValidationError(ValueError):
    """Rejected user input; ``component`` names the part of the tool that refused it."""

    component = "input"

    def __init__(self, message: str, component: str | None = None):
        super().__init__(message)
        if component is not None:
            self.component = component


class ConfigError(ValidationError):
    component = "config"


class ObservedDataError(ValidationError):
    component = "observed"


class RestartError(ValidationError):
    component = "restart"
