"""Exception hierarchy shared by the package."""


class QRPruneError(Exception):
    pass


class ShapeError(QRPruneError, ValueError):
    """Tensor or matrix dimensions are inconsistent."""


class ChannelIndexError(QRPruneError, IndexError):
    pass


class NumericError(QRPruneError, ArithmeticError):
    """Non-finite values reached a factorization."""


class ValidationError(QRPruneError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid graph")


class ModelLoadError(QRPruneError):
    pass


class MissingBlobError(ModelLoadError):
    pass


class ChecksumError(ModelLoadError):
    pass


class ShapeInconsistencyError(ModelLoadError):
    def __init__(self, message, violations=()):
        self.violations = list(violations)
        super().__init__(message)


class UnknownLayerError(ModelLoadError):
    pass


class RewriteError(QRPruneError):
    pass


class SamplingExhaustedError(QRPruneError):
    def __init__(self, requested, available):
        self.requested = requested
        self.available = available
        super().__init__(
            f"requested {requested} samples but only {available} distinct sites are available"
        )


class WrongVariantError(QRPruneError):
    pass
