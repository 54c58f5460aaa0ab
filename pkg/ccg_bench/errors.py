"""Exception hierarchy shared by every module of the harness"""


class BenchError(Exception):
    """Base class for all harness errors"""


class InvalidArgumentError(BenchError, ValueError):
    """A precondition of a pure kernel was violated"""


# ==================== DATA ====================
class DatasetLoadError(BenchError):
    """Dataset directory could not be turned into a TimeSeriesDataset"""


class MissingFileError(DatasetLoadError, FileNotFoundError):
    pass


class ChannelMismatchError(DatasetLoadError):
    pass


class LabelLengthError(DatasetLoadError):
    pass


class EmptySplitError(DatasetLoadError):
    pass


class MsdsError(BenchError):
    """Raw MSDS tables violate the preprocessing protocol"""


class EmptyJoinError(MsdsError):
    pass


class MissingMetricError(MsdsError):
    pass


class LabelAlignmentError(MsdsError):
    pass


# ==================== METRICS / SCORING ====================
class UndefinedMetricError(BenchError):
    """Metric is undefined for the given labels (e.g. a single class)"""


class CoverageGapError(BenchError):
    """Window scores do not cover every timestep of the test split"""


# ==================== MODEL / TRAINING ====================
class ViewConfigError(BenchError):
    """A disabled view was invoked or a cue was supplied for one"""


class NonFiniteLossError(BenchError):
    """Training produced a non-finite loss"""

    def __init__(self, step: int, part: str, value: float):
        self.step = step
        self.part = part
        self.value = value
        super().__init__(f"Non-finite loss at step {step}: part '{part}' = {value}")


# ==================== ORCHESTRATION ====================
class ConfigurationError(BenchError):
    """Bench/model configuration cannot be resolved"""
