"""Parameter-efficient fine-tuning of a two-token step classifier from
training-sample JSONL files."""

__version__ = "0.1.0"
