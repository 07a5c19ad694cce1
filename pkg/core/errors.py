class FedExchangeError(Exception):
    """Base class for every error raised by the simulator."""

    def __init__(self, message="", round_index=None):
        super().__init__(message)
        self.message = message
        self.round_index = round_index

    def __str__(self):
        if self.round_index is not None:
            return f"round {self.round_index}: {self.message}"
        return self.message


class ZeroNormVector(FedExchangeError):
    def __init__(self, message="decoder has zero magnitude", index=None):
        if index is not None:
            message = f"{message} (decoder index {index})"
        super().__init__(message)
        self.index = index


class DimensionMismatch(FedExchangeError):
    pass


class EmptyInput(FedExchangeError):
    pass


class ManifestMismatch(FedExchangeError):
    pass


class OverlappingClusters(FedExchangeError):
    pass


class TooFewDecoders(FedExchangeError):
    pass


class InvalidAssignment(FedExchangeError):
    pass


class ConfigInvalid(FedExchangeError):
    pass


class InvalidSpec(FedExchangeError):
    pass


class NonFiniteValues(FedExchangeError):
    pass


class NonFiniteLoss(NonFiniteValues):
    pass


class MismatchedSeeds(FedExchangeError):
    pass


class ConfigMismatch(FedExchangeError):
    pass


class ResultsIoError(FedExchangeError):
    pass
