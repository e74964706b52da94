"""Exception types raised across the package."""


class FedFNNError(Exception):
    """Base class for every error raised by fedfnn."""


class NoActiveRulesError(FedFNNError, ValueError):
    def __init__(self, msg="no active rules"):
        super().__init__(msg)


class DivergenceError(FedFNNError, RuntimeError):
    def __init__(self, msg="divergence"):
        super().__init__(msg)


class EmptyRuleBankError(FedFNNError, ValueError):
    def __init__(self, msg="empty rule bank"):
        super().__init__(msg)


class DataError(FedFNNError, ValueError):
    """Malformed input data (CSV parse failures, bad labels, empty sets)."""


class ConfigError(FedFNNError, ValueError):
    pass
