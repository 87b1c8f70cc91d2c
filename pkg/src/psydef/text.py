"""Tokenization shared by features, stubs and metrics."""

from __future__ import annotations

import hashlib
import re

# letters/digits with optional intra-word apostrophes ("i'm", "don't")
_TOKEN_RE = re.compile(r"[^\W_]+(?:['’][^\W_]+)*", re.UNICODE)

STOPWORDS = frozenset(
    """a an the and or but if of to in on at by for with from as is are was were be been being
    am do does did this that these those it its it's i me my we our you your he him his she her
    they them their there here so than then too very can will just not no""".split()
)


def tokenize(text: str) -> list[str]:
    """Lowercase, drop punctuation, split into word tokens."""
    return [t.replace("’", "'") for t in _TOKEN_RE.findall(text.lower())]


def content_tokens(text: str) -> set[str]:
    return {t for t in tokenize(text) if t not in STOPWORDS}


def stable_hash(*parts: object) -> int:
    """Process-independent 64-bit hash (``hash()`` is salted per interpreter)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")
