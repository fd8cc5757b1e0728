"""Halve documents at a midpoint drawn from the middle half of the word count."""
from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Iterator

from .corpus import Document

_WORD = re.compile(r"\S+")


class SplitError(Exception):
    pass


@dataclass(frozen=True)
class SplitRecord:
    """A document halved after word k; prefix + suffix reconstructs the text."""

    doc_id: str
    prefix: str
    suffix_original: str
    k: int
    wc: int
    seed: int


def midpoint_bounds(wc: int) -> tuple[int, int]:
    """Inclusive range [ceil(wc/4), floor(3*wc/4)] of legal midpoints."""
    if wc < 4:
        raise SplitError(f"document too short to split: {wc} words")
    return -(-wc // 4), (3 * wc) // 4


def choose_midpoint(wc: int, rng: random.Random) -> int:
    """Draw the split word index uniformly from the middle half."""
    lo, hi = midpoint_bounds(wc)
    return rng.randint(lo, hi)


def _doc_rng(seed: int, doc_id: str) -> random.Random:
    # Derive per-document state from (seed, id) so splits are
    # order-independent and stable across shards.
    digest = hashlib.sha256(f"{seed}:{doc_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def split(doc: Document, seed: int) -> SplitRecord:
    """Split a document after its k-th word; deterministic in (doc.id, seed).

    The prefix ends exactly at the last character of word k; all
    following whitespace belongs to the suffix, so prefix + suffix is the
    original text byte-for-byte.
    """
    rng = _doc_rng(seed, doc.id)
    k = choose_midpoint(doc.word_count, rng)
    spans = list(_WORD.finditer(doc.text))
    if len(spans) != doc.word_count:
        raise SplitError(
            f"{doc.id}: word_count {doc.word_count} does not match text ({len(spans)} words)")
    cut = spans[k - 1].end()
    return SplitRecord(
        doc_id=doc.id,
        prefix=doc.text[:cut],
        suffix_original=doc.text[cut:],
        k=k,
        wc=doc.word_count,
        seed=seed,
    )


def write_splits(records: Iterable[SplitRecord], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_splits(path: str | Path) -> Iterator[SplitRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield SplitRecord(**json.loads(line))
