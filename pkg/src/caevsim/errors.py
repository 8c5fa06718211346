class ConfigError(ValueError):
    """Invalid scenario, parameter block, or input file.

    ``problems`` holds ``(path, message)`` pairs when several fields failed
    validation at once.
    """

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class SimulationError(RuntimeError):
    """The closed loop diverged (non-finite state)."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row
