"""Exception types; the CLI maps each to its exit code."""


class GeovisError(Exception):
    exit_code = 1


class ConfigError(GeovisError, ValueError):
    exit_code = 2


class DataError(GeovisError, ValueError):
    exit_code = 3


class CheckFailure(GeovisError):
    exit_code = 4


class TrainingDiverged(CheckFailure):
    def __init__(self, step: int, param_norms: dict[str, float]):
        self.step = step
        self.param_norms = param_norms
        dump = ", ".join(f"{k}={v:.4g}" for k, v in param_norms.items())
        super().__init__(f"non-finite loss at step {step}; parameter norms: {dump}")
