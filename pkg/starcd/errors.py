class StarError(Exception):
    def __init__(self, message):
        super().__init__(message)


class FormatError(StarError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = "line {}: {}".format(line_number, message)
        super().__init__(message)
        self.line_number = line_number


class GraphFormatError(FormatError):
    pass


class GraphError(StarError):
    pass


class ModelCompatibilityError(StarError):
    pass


class StaleStateError(StarError):
    pass


class PartitionError(StarError):
    pass


class EnsembleError(StarError):
    pass


class ConsensusError(StarError):
    pass


class ConvergenceError(StarError):
    pass


class BenchmarkError(StarError):
    pass


class CorrelationError(StarError):
    pass


class ConfigError(StarError):
    pass
