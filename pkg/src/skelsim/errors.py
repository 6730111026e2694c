"""Exception hierarchy."""


class SkelsimError(Exception):
    pass


class NumericalIntegrationError(SkelsimError):
    def __init__(self, msg, residual=None):
        super().__init__(msg if residual is None else f"{msg} (residual estimate {residual:.3g})")
        self.residual = residual


class DegenerateSiteError(SkelsimError):
    pass


class UnboundedRootError(SkelsimError):
    pass


class NumericBlowupError(SkelsimError):
    pass


class InvalidHError(SkelsimError):
    pass


class UnsupportedError(SkelsimError):
    pass


class NonConvergenceError(SkelsimError):
    def __init__(self, msg, residual=None):
        super().__init__(msg if residual is None else f"{msg} (last residual {residual:.3g})")
        self.residual = residual


class OutOfRangeError(SkelsimError):
    pass


class ConfigError(SkelsimError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line
