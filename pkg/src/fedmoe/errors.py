"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""


class DataError(ValueError):
    """Dataset or partition request that cannot be satisfied."""


class NonFiniteError(ArithmeticError):
    """A loss or gradient became NaN/inf during training."""


class TrainingAborted(RuntimeError):
    """A round was aborted; message names the client and round."""
