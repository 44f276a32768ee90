class TrainerError(Exception):
    """Base class for trainer failures."""


class DataEmpty(TrainerError):
    """The sample file holds no usable training samples."""


class AnchorNotFound(TrainerError):
    """A loss anchor is not a suffix-aligned token span after tokenization."""
