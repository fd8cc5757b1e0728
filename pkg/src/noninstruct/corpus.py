"""Corpus ingestion and deterministic uniform sampling."""
from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

log = logging.getLogger(__name__)

# Documents shorter than this have no legal split midpoint, so they are
# dropped at ingestion rather than failing later in the splitter.
MIN_WORDS = 4


class CorpusError(Exception):
    pass


@dataclass(frozen=True)
class Document:
    """One raw corpus text with a content-derived identifier."""

    id: str
    text: str
    word_count: int
    source: str = ""


def content_id(text: str) -> str:
    """Stable identifier: hex digest of the UTF-8 text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def count_words(text: str) -> int:
    """Words are maximal runs of non-whitespace characters."""
    return len(text.split())


def make_document(text: str, source: str = "") -> Document | None:
    """Build a Document, or None if the text is empty or too short."""
    if not text or not text.strip():
        return None
    wc = count_words(text)
    if wc < MIN_WORDS:
        return None
    return Document(id=content_id(text), text=text, word_count=wc, source=source)


def load_corpus(path: str | Path, format: str = "jsonl", strict: bool = False) -> Iterator[Document]:
    """Yield Documents from a jsonl file or a directory of text files.

    jsonl records need a `text` field; `source` is optional. Malformed
    lines raise when strict, otherwise are logged and skipped. Empty,
    whitespace-only, and sub-minimum texts are always skipped.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus path does not exist: {path}")
    if format == "jsonl":
        yield from _load_jsonl(path, strict)
    elif format == "plain-dir":
        yield from _load_plain_dir(path)
    else:
        raise CorpusError(f"unknown corpus format: {format!r}")


def _load_jsonl(path: Path, strict: bool) -> Iterator[Document]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text = rec["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: malformed record: {exc}") from exc
                log.warning("%s:%d: skipping malformed record: %s", path, lineno, exc)
                continue
            doc = make_document(text, source=str(rec.get("source", "")))
            if doc is not None:
                yield doc


def _load_plain_dir(path: Path) -> Iterator[Document]:
    if not path.is_dir():
        raise CorpusError(f"not a directory: {path}")
    for file in sorted(path.iterdir()):
        if not file.is_file():
            continue
        doc = make_document(file.read_text(encoding="utf-8"), source=file.name)
        if doc is not None:
            yield doc


def sample_uniform(corpus: Iterable[Document], n: int, seed: int) -> list[Document]:
    """Draw n distinct documents uniformly without replacement.

    Deterministic in (corpus order, n, seed).
    """
    if n <= 0:
        raise CorpusError(f"sample size must be positive, got {n}")
    docs = list(corpus)
    if len(docs) < n:
        raise CorpusError(f"corpus has {len(docs)} documents, cannot sample {n}")
    rng = random.Random(seed)
    return rng.sample(docs, n)


def write_sample_manifest(docs: Iterable[Document], path: str | Path) -> int:
    """Write the `{id, word_count, source}` manifest; returns the count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(
                {"id": doc.id, "word_count": doc.word_count, "source": doc.source},
                ensure_ascii=False) + "\n")
            count += 1
    return count
