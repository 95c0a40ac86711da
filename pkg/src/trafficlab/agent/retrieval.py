"""Okapi BM25 over a directory of plain-text notes.

Each file is split into blank-line separated passages; passages are the
retrieval unit and keep corpus order (files sorted by name, then position).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Passage:
    source: str
    text: str
    score: float = 0.0


class CorpusIndex:
    """BM25 index with ``k1 = 1.2`` and ``b = 0.75``.

    The idf is ``ln((N - n + 0.5) / (n + 0.5) + 1)``, which stays positive
    for terms present in most documents, so all scores are non-negative.
    """

    def __init__(self, passages=(), k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.passages = []
        self._tf = []
        self._len = []
        self._df = Counter()
        for p in passages:
            self.add(p if isinstance(p, Passage) else Passage("", str(p)))

    def add(self, passage: Passage) -> None:
        tokens = tokenize(passage.text)
        tf = Counter(tokens)
        self.passages.append(passage)
        self._tf.append(tf)
        self._len.append(len(tokens))
        self._df.update(tf.keys())

    @classmethod
    def from_directory(cls, path, pattern: str = "*.txt") -> "CorpusIndex":
        index = cls()
        root = Path(path)
        if not root.is_dir():
            raise FileNotFoundError(f"corpus directory not found: {root}")
        for f in sorted(root.glob(pattern)):
            text = f.read_text(encoding="utf-8")
            for chunk in re.split(r"\n\s*\n", text):
                chunk = chunk.strip()
                if chunk:
                    index.add(Passage(f.name, chunk))
        return index

    def __len__(self):
        return len(self.passages)

    def idf(self, term: str) -> float:
        n_docs = len(self.passages)
        n = self._df.get(term, 0)
        return math.log((n_docs - n + 0.5) / (n + 0.5) + 1.0)

    def scores(self, query: str) -> list[float]:
        if not self.passages:
            return []
        terms = list(dict.fromkeys(tokenize(query)))
        avgdl = sum(self._len) / len(self._len) or 1.0
        out = []
        for tf, dl in zip(self._tf, self._len):
            s = 0.0
            norm = self.k1 * (1.0 - self.b + self.b * dl / avgdl)
            for t in terms:
                f = tf.get(t, 0)
                if f:
                    s += self.idf(t) * f * (self.k1 + 1.0) / (f + norm)
            out.append(s)
        return out

    def search(self, query: str, k: int = 5) -> list[Passage]:
        """Top ``k`` passages; ties keep corpus order. Zero-score passages are kept."""
        sc = self.scores(query)
        order = sorted(range(len(sc)), key=lambda i: (-sc[i], i))[: max(k, 0)]
        return [Passage(self.passages[i].source, self.passages[i].text, sc[i]) for i in order]


def retrieve_passages(index: CorpusIndex, query: str, k: int = 5) -> list[Passage]:
    return index.search(query, k)


class NullSearchProvider:
    """Online search placeholder; always returns nothing."""

    def search(self, query: str, k: int = 5) -> list[Passage]:
        return []
