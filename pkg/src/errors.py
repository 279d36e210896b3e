"""
Exception hierarchy shared by every module in src/.

Violations and tool timeouts are reported as data; everything here is a
condition the caller is expected to handle or surface to the user.
"""


class MirageError(Exception):
    """Root of all errors raised by this toolkit."""


class LexError(MirageError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class HeaderParseError(MirageError):
    pass


class AnonymizationError(MirageError):
    pass


class ToolchainConfigError(MirageError):
    pass


class ToolNotFoundError(ToolchainConfigError):
    def __init__(self, tool: str):
        super().__init__(f"tool binary not found: {tool}")
        self.tool = tool


class CandidateIOError(MirageError):
    pass


class MetricError(MirageError, ValueError):
    pass


class DomainError(MetricError):
    pass


class DivergenceError(MirageError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


class PairBuildError(MirageError):
    pass


class CorpusError(MirageError):
    pass


class JudgingError(MirageError):
    pass


class ReportError(MirageError):
    pass
