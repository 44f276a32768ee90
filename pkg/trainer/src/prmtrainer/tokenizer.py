"""Byte-level tokenizer for self-contained runs and tests.

Token ids 0..255 are raw UTF-8 bytes; id 256 is padding. Any single-byte
string (such as "+" or "-") is automatically a single token, which makes
it a valid positive/negative classifier token.
"""

from __future__ import annotations


class ByteTokenizer:
    vocab_size = 257
    pad_token_id = 256

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids) -> str:
        data = bytes(i for i in ids if i != self.pad_token_id)
        return data.decode("utf-8", errors="replace")

    def token_id(self, token: str) -> int:
        data = token.encode("utf-8")
        if len(data) != 1:
            raise ValueError(f"{token!r} is not a single-token string for this tokenizer")
        return data[0]
