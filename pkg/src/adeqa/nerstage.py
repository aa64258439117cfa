"""Stage 1: drug mention recognition.

Any object with a ``recognize(sentence) -> list[DrugMention]`` method can
serve as the recognizer; :class:`LexiconRecognizer` is the default, a
gazetteer built from training annotations.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

from .errors import EmptyLexicon, FormatError
from .textproc import tokenize

LEXICON_HEADER = "lexicon-v1"


@dataclass(frozen=True)
class DrugMention:
    surface: str
    char_span: tuple[int, int]
    source: str = "lexicon"


class Recognizer(Protocol):
    def recognize(self, sentence: str) -> list[DrugMention]: ...


class DrugLexicon:
    def __init__(self, entries: Iterable[str], source: str = "train"):
        cleaned = sorted({e.strip().lower() for e in entries if e.strip()})
        if not cleaned:
            raise EmptyLexicon("lexicon has no entries")
        self.entries = frozenset(cleaned)
        self.source = source
        self._by_tokens: dict[tuple[str, ...], str] = {}
        for entry in cleaned:
            key = tuple(t.surface for t in tokenize(entry).tokens)
            self._by_tokens.setdefault(key, entry)
        self.max_tokens = max(len(k) for k in self._by_tokens)

    def __contains__(self, item):
        return item.strip().lower() in self.entries

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, DrugLexicon) and self.entries == other.entries

    def lookup(self, token_surfaces: tuple[str, ...]):
        return self._by_tokens.get(token_surfaces)

    def dumps(self) -> str:
        return "\n".join([LEXICON_HEADER, *sorted(self.entries)]) + "\n"

    @classmethod
    def loads(cls, text: str, source: str = "file") -> "DrugLexicon":
        lines = text.splitlines()
        if not lines or lines[0] != LEXICON_HEADER:
            raise FormatError(f"lexicon header must be {LEXICON_HEADER!r}")
        return cls(lines[1:], source=source)

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DrugLexicon":
        return cls.loads(Path(path).read_text(encoding="utf-8"), source=str(path))


def build_lexicon(train_sentences) -> DrugLexicon:
    """Gazetteer of lowercased gold drug surfaces from training positives."""
    drugs = [p.drug_surface for s in train_sentences for p in s.pairs]
    if not drugs:
        raise EmptyLexicon("no positive training sentences to build a lexicon from")
    return DrugLexicon(drugs, source="train")


def recognize_drugs(sentence: str, lexicon: DrugLexicon) -> list[DrugMention]:
    """Whole-token, case-insensitive, longest-match-first lexicon lookup."""
    toks = tokenize(sentence).tokens
    lowered = [t.surface.lower() for t in toks]
    mentions = []
    i = 0
    while i < len(toks):
        for n in range(min(lexicon.max_tokens, len(toks) - i), 0, -1):
            entry = lexicon.lookup(tuple(lowered[i:i + n]))
            if entry is None:
                continue
            b, e = toks[i].char_begin, toks[i + n - 1].char_end
            if sentence[b:e].lower() != entry:
                continue
            mentions.append(DrugMention(sentence[b:e], (b, e)))
            i += n
            break
        else:
            i += 1
    return mentions


class LexiconRecognizer:
    def __init__(self, lexicon: DrugLexicon):
        self.lexicon = lexicon

    def recognize(self, sentence: str) -> list[DrugMention]:
        return recognize_drugs(sentence, self.lexicon)
