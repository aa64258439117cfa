"""Tokenizer with character offsets, vocabulary, and span conversion.

Tokens are whitespace-delimited chunks with leading and trailing
punctuation detached one character at a time.  Inner punctuation
("5-fluorouracil", "i.v.") stays attached.  Surfaces keep their original
case; only vocabulary lookups are case-folded.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import FormatError, IndexOutOfRange, NoTokenOverlap

PAD, UNK, BOS, SEP = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<sep>")
VOCAB_HEADER = "vocab-v1"

_CHUNK = re.compile(r"\S+")


@dataclass(frozen=True)
class Token:
    surface: str
    char_begin: int
    char_end: int


@dataclass(frozen=True)
class TokenizedText:
    tokens: tuple[Token, ...]
    source: str

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @property
    def surfaces(self):
        return [t.surface for t in self.tokens]


def _is_punct(ch):
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> TokenizedText:
    tokens = []
    for m in _CHUNK.finditer(text):
        b, e = m.start(), m.end()
        head = []
        while b < e and _is_punct(text[b]):
            head.append(Token(text[b], b, b + 1))
            b += 1
        tail = []
        while e > b and _is_punct(text[e - 1]):
            tail.append(Token(text[e - 1], e - 1, e))
            e -= 1
        tokens.extend(head)
        if b < e:
            tokens.append(Token(text[b:e], b, e))
        tokens.extend(reversed(tail))
    return TokenizedText(tuple(tokens), text)


def char_span_to_token_span(tt: TokenizedText, span) -> tuple[int, int]:
    """Smallest inclusive token range covering every token overlapping ``span``."""
    begin, end = span
    hits = [i for i, t in enumerate(tt.tokens) if t.char_begin < end and t.char_end > begin]
    if not hits:
        raise NoTokenOverlap(f"char span {tuple(span)} overlaps no token")
    return hits[0], hits[-1]


def token_span_to_char_span(tt: TokenizedText, tok_span) -> tuple[int, int]:
    begin, end = tok_span
    if not 0 <= begin <= end < len(tt.tokens):
        raise IndexOutOfRange(f"token span {tuple(tok_span)} outside 0..{len(tt.tokens) - 1}")
    return tt.tokens[begin].char_begin, tt.tokens[end].char_end


class Vocabulary:
    """Immutable token -> id map with four reserved ids."""

    def __init__(self, tokens: Iterable[str], min_count: int = 1):
        self.min_count = min_count
        self._itos = list(RESERVED)
        for tok in tokens:
            if tok not in RESERVED:
                self._itos.append(tok)
        self._stoi = {t: i for i, t in enumerate(self._itos)}
        if len(self._stoi) != len(self._itos):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self):
        return len(self._itos)

    def __contains__(self, token):
        return token.lower() in self._stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def id(self, token: str) -> int:
        return self._stoi.get(token.lower(), UNK)

    def ids(self, tt: TokenizedText) -> list[int]:
        return [self.id(t.surface) for t in tt.tokens]

    def token(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def tokens(self):
        return tuple(self._itos)

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def dumps(self) -> str:
        lines = [VOCAB_HEADER] + [f"{t}\t{i}" for i, t in enumerate(self._itos)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, min_count: int = 1) -> "Vocabulary":
        lines = text.splitlines()
        if not lines or lines[0] != VOCAB_HEADER:
            raise FormatError(f"vocabulary header must be {VOCAB_HEADER!r}")
        entries = []
        for n, line in enumerate(lines[1:], start=2):
            tok, sep, idx = line.rpartition("\t")
            if not sep or not idx.isdigit() or int(idx) != n - 2:
                raise FormatError(f"line {n}: expected 'token<TAB>{n - 2}'")
            entries.append(tok)
        if tuple(entries[:4]) != RESERVED:
            raise FormatError("reserved ids 0-3 are not intact")
        return cls(entries[4:], min_count=min_count)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def build_vocab(texts: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Vocabulary over lowercased tokens seen at least ``min_count`` times.

    ``texts`` may hold strings or objects with a ``text`` attribute.  Ids are
    assigned by descending frequency, ties alphabetical, so the result does
    not depend on input order.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for item in texts:
        text = item if isinstance(item, str) else item.text
        counts.update(t.surface.lower() for t in tokenize(text).tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_count=min_count)
