"""Shared exception types.

Every domain failure raises one of these so the CLI can map it to a
single-line diagnostic and exit code 1. OS-level problems (missing files,
unwritable directories) are left to the builtin OSError family.
"""


class ToolkitError(Exception):
    """Base class for all domain errors raised by this package."""


class SchemaError(ToolkitError):
    """A corpus or cache record violates the wire schema."""

    def __init__(self, message, record=None, field=None):
        self.record = record
        self.field = field
        loc = []
        if record is not None:
            loc.append(f"record {record}")
        if field is not None:
            loc.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)


class UnknownDomain(ToolkitError):
    """A question carries a domain label outside the closed category set."""


class JudgeUnavailable(ToolkitError):
    """The judge endpoint kept failing after all retries."""


class UnparseableVerdict(ToolkitError):
    """The judge reply lacked a recognizable grade even after a reprompt."""


class LabelShapeMismatch(ToolkitError):
    """A label sequence does not align with the steps it annotates."""


class InconsistentStatus(ToolkitError):
    """A declared origin status contradicts the origin first-error position."""


class EmptyStep(ToolkitError):
    """A reasoning step is empty where content is required."""


class NonFiniteInput(ToolkitError):
    """A logit value is NaN or infinite."""


class EmptyChain(ToolkitError):
    """A loss chain needs at least one entry."""


class BackendUnavailable(ToolkitError):
    """A scoring backend could not produce rewards."""


class RewardShapeMismatch(ToolkitError):
    """A backend returned a reward count different from the step count."""


class RewardRangeError(ToolkitError):
    """A reward fell outside [0, 1]; rewards are never clamped silently."""


class CacheCorrupt(ToolkitError):
    """A score-cache line failed to parse or validate."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"{message} (line {line_number})"
        super().__init__(message)


class EmptyRewards(ToolkitError):
    """Aggregation over an empty reward sequence."""


class EmptyCandidates(ToolkitError):
    """A vote over an empty candidate sequence."""


class NegativeScore(ToolkitError):
    """Weighted voting requires non-negative candidate scores."""


class IncompleteScores(ToolkitError):
    """Evaluation requires rewards for every scoped (question, CoT) pair."""

    def __init__(self, qid, cot_index):
        self.qid = qid
        self.cot_index = cot_index
        super().__init__(f"missing rewards for qid={qid!r} cot_index={cot_index}")


class NTooLarge(ToolkitError):
    """A requested subsample size exceeds the available CoTs."""


class MissingScope(ToolkitError):
    """A configuration lacks a curve for a scope the baseline covers."""


class MissingN(ToolkitError):
    """A curve does not include the requested sample count."""


class EmptyInput(ToolkitError):
    """Nothing to render."""
