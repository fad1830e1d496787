"""Text tokenization: character-level default, ARPABET phones optional.

Both modes share one vocabulary interface so models never care which is in
use.  A reserved breath token ``<B>`` marks breath-group boundaries and
survives tokenization in either mode.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

BREATH_TOKEN = "<B>"
PAD_TOKEN = "<pad>"
WORD_SEP = " "

_CHAR_SYMBOLS = list("abcdefghijklmnopqrstuvwxyz0123456789 '.,!?-")

# CMU phone inventory; vowels additionally carry stress digits 0/1/2.
_ARPABET_BASE = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER",
    "EY", "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW",
    "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z",
    "ZH",
]
_ARPABET_VOWELS = {
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY",
    "OW", "OY", "UH", "UW",
}


def _arpabet_symbols() -> list[str]:
    symbols = []
    for phone in _ARPABET_BASE:
        symbols.append(phone)
        if phone in _ARPABET_VOWELS:
            symbols.extend(phone + d for d in "012")
    symbols.append(WORD_SEP)
    return symbols


class VocabularyError(ValueError):
    """Raised when input contains a symbol outside the vocabulary."""


@dataclass
class Tokenizer:
    """Maps text to symbol sequences and symbol sequences to integer ids.

    ``mode`` is either ``"char"`` (each character is a token) or
    ``"arpabet"`` (whitespace-separated phone tokens).  ``<B>`` is always
    a single token.
    """

    mode: str = "char"
    symbols: tuple[str, ...] = field(init=False)
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode == "char":
            base = _CHAR_SYMBOLS
        elif self.mode == "arpabet":
            base = _arpabet_symbols()
        else:
            raise ValueError(f"unknown tokenizer mode {self.mode!r}")
        self.symbols = tuple([PAD_TOKEN, BREATH_TOKEN] + base)
        self._index = {s: i for i, s in enumerate(self.symbols)}

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return 0

    def tokenize(self, text: str) -> list[str]:
        """Split raw text into vocabulary symbols.

        Raises VocabularyError naming the first offending symbol.
        """
        tokens: list[str] = []
        parts = re.split(re.escape(BREATH_TOKEN), text)
        for i, part in enumerate(parts):
            if i > 0:
                tokens.append(BREATH_TOKEN)
            part = part.strip() if self.mode == "arpabet" else part
            if not part:
                continue
            if self.mode == "char":
                tokens.extend(part.lower())
            else:
                for word in part.split():
                    if tokens and tokens[-1] not in (BREATH_TOKEN,):
                        tokens.append(WORD_SEP)
                    tokens.append(word.upper())
        for tok in tokens:
            if tok not in self._index:
                raise VocabularyError(f"unknown token {tok!r} for mode {self.mode!r}")
        return tokens

    def encode(self, tokens: list[str] | str) -> list[int]:
        """Token list (or raw text) to integer ids."""
        if isinstance(tokens, str):
            tokens = self.tokenize(tokens)
        ids = []
        for tok in tokens:
            if tok not in self._index:
                raise VocabularyError(f"unknown token {tok!r} for mode {self.mode!r}")
            ids.append(self._index[tok])
        return ids

    def decode(self, ids: list[int]) -> list[str]:
        return [self.symbols[i] for i in ids]
