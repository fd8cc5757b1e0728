"""Detect and remove latent instructional/conversational content.

Two detectors: judge-LLM prompts (yes/no verdicts) and the
uppercase-continuation heuristic for completions that restart with a
fresh sentence instead of continuing the prefix.
"""
from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass, asdict
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document
from .splitter import SplitRecord
from .teacher import CompletionRecord, TeacherSpec, complete

log = logging.getLogger(__name__)

INSTRUCTIONAL = "instructional"
CONVERSATIONAL = "conversational"
KINDS = (INSTRUCTIONAL, CONVERSATIONAL)

DEFAULT_JUDGE_SAMPLE_SIZE = 2000


class FilterError(Exception):
    pass


class UnparseableVerdict(FilterError):
    """Judge reply did not open with Yes or No; carries the raw reply."""

    def __init__(self, raw_reply: str):
        super().__init__(f"judge reply does not start with Yes/No: {raw_reply[:120]!r}")
        self.raw_reply = raw_reply


@dataclass(frozen=True)
class FilterVerdict:
    doc_id: str
    kind: str
    answer: str  # "yes" | "no"
    rationale: str
    raw_reply: str


@dataclass(frozen=True)
class RateReport:
    dataset_tag: str
    sample_size: int
    instructional_pct: float | None = None
    conversational_pct: float | None = None


def _template(name: str) -> str:
    return resources.files("noninstruct.templates").joinpath(name).read_text(encoding="utf-8")


def default_example(kind: str, polarity: str) -> str:
    """Editable default text for a prompt's example slot."""
    return _template(f"{kind}_{polarity}_example.txt").rstrip("\n")


def _render(template: str, slots: Sequence[tuple[str, str]]) -> str:
    # Split on each marker at its position in the pristine template, so
    # substituted content containing a marker string is never re-expanded.
    parts = []
    rest = template
    for marker, value in slots:
        before, sep, rest = rest.partition(marker)
        if not sep:
            raise FilterError(f"template is missing slot {marker!r}")
        parts.append(before)
        parts.append(value)
    parts.append(rest)
    return "".join(parts)


def _build_prompt(kind: str, doc_text: str, positive_example: str, negative_example: str) -> str:
    if not doc_text:
        raise FilterError("doc_text must be non-empty")
    if not positive_example or not negative_example:
        raise FilterError("example slots must be non-empty")
    return _render(
        _template(f"{kind}_prompt.txt"),
        [("{positive_example}", positive_example),
         ("{negative_example}", negative_example),
         ("{doc[j]}", doc_text)],
    )


def build_instructional_prompt(doc_text: str, positive_example: str, negative_example: str) -> str:
    """Fill the instruction-content detection template."""
    return _build_prompt(INSTRUCTIONAL, doc_text, positive_example, negative_example)


def build_conversational_prompt(doc_text: str, positive_example: str, negative_example: str) -> str:
    """Fill the dialogue detection template."""
    return _build_prompt(CONVERSATIONAL, doc_text, positive_example, negative_example)


def parse_verdict(raw_reply: str, kind: str, doc_id: str = "") -> FilterVerdict:
    """Yes/no keyed on the first alphabetic token; anything else is an error."""
    token = ""
    start = end = 0
    for i, ch in enumerate(raw_reply):
        if ch.isalpha():
            start = i
            end = i
            while end < len(raw_reply) and raw_reply[end].isalpha():
                end += 1
            token = raw_reply[start:end].lower()
            break
    if token == "yes":
        answer = "yes"
    elif token == "no":
        answer = "no"
    else:
        raise UnparseableVerdict(raw_reply)
    rationale = raw_reply[end:].lstrip(" \t\n.,:;!?-–—").rstrip()
    return FilterVerdict(doc_id=doc_id, kind=kind, answer=answer,
                         rationale=rationale, raw_reply=raw_reply)


def measure_rates(samples: Sequence[Document], judge: TeacherSpec, kind: str,
                  positive_example: str | None = None,
                  negative_example: str | None = None,
                  sample_size: int = DEFAULT_JUDGE_SAMPLE_SIZE,
                  dataset_tag: str = "",
                  skip_unparseable: bool = False,
                  cache_dir: str | Path | None = None) -> tuple[RateReport, list[FilterVerdict]]:
    """Judge up to sample_size documents and report the yes-rate percentage."""
    if kind not in KINDS:
        raise FilterError(f"unknown verdict kind: {kind!r}")
    positive_example = positive_example or default_example(kind, "positive")
    negative_example = negative_example or default_example(kind, "negative")
    batch = list(samples)[:sample_size]
    verdicts: list[FilterVerdict] = []
    yes = skipped = 0
    for doc in batch:
        prompt = _build_prompt(kind, doc.text, positive_example, negative_example)
        rec = complete(prompt, judge, doc_id=doc.id, cache_dir=cache_dir)
        try:
            verdict = parse_verdict(rec.continuation, kind, doc_id=doc.id)
        except UnparseableVerdict:
            if not skip_unparseable:
                raise
            skipped += 1
            continue
        verdicts.append(verdict)
        if verdict.answer == "yes":
            yes += 1
    judged = len(batch) - skipped
    if skipped:
        log.warning("skipped %d unparseable verdicts of %d", skipped, len(batch))
    pct = 100.0 * yes / judged if judged else 0.0
    report = RateReport(
        dataset_tag=dataset_tag,
        sample_size=judged,
        instructional_pct=pct if kind == INSTRUCTIONAL else None,
        conversational_pct=pct if kind == CONVERSATIONAL else None,
    )
    return report, verdicts


def uppercase_heuristic(continuation: str, suffix_original: str) -> str:
    """Flag completions that restart with a capital the original didn't have.

    Returns "remove" iff the continuation's first non-whitespace
    character is an uppercase letter and the original suffix's is not;
    "keep" otherwise (including empty continuations).
    """
    c = continuation.lstrip()
    s = suffix_original.lstrip()
    if not c:
        log.warning("empty continuation passed to uppercase heuristic; keeping")
        return "keep"
    if unicodedata.category(c[0]) != "Lu":
        return "keep"
    if s and unicodedata.category(s[0]) == "Lu":
        return "keep"
    return "remove"


def apply_filters(dataset: Sequence[CompletionRecord],
                  verdicts: Iterable[FilterVerdict] = (),
                  drop_instructional: bool = True,
                  drop_conversational: bool = True,
                  drop_uppercase_restarts: bool = False,
                  splits: dict[str, SplitRecord] | None = None,
                  ) -> tuple[list[CompletionRecord], dict]:
    """Remove yes-verdict and heuristic-flagged records, preserving order.

    The uppercase heuristic needs the original suffixes, passed as
    `splits` keyed by doc_id. Returns (kept records, removal report).
    """
    known_ids = {rec.doc_id for rec in dataset}
    flagged: dict[str, set[str]] = {}
    counts = {INSTRUCTIONAL: 0, CONVERSATIONAL: 0, "uppercase": 0}

    for v in verdicts:
        if v.doc_id not in known_ids:
            raise FilterError(f"verdict for unknown doc_id {v.doc_id!r}")
        if v.answer != "yes":
            continue
        enabled = (drop_instructional if v.kind == INSTRUCTIONAL
                   else drop_conversational)
        if enabled:
            counts[v.kind] += 1
            flagged.setdefault(v.doc_id, set()).add(v.kind)

    if drop_uppercase_restarts:
        if splits is None:
            raise FilterError("uppercase heuristic requires the split records")
        for rec in dataset:
            split = splits.get(rec.doc_id)
            if split is None:
                raise FilterError(f"no split record for doc_id {rec.doc_id!r}")
            if uppercase_heuristic(rec.continuation, split.suffix_original) == "remove":
                counts["uppercase"] += 1
                flagged.setdefault(rec.doc_id, set()).add("uppercase")

    kept = [rec for rec in dataset if rec.doc_id not in flagged]
    report = {
        "input": len(dataset),
        "kept": len(kept),
        "unique_removed": len(flagged),
        "by_reason": counts,
    }
    return kept, report


def write_verdicts(verdicts: Iterable[FilterVerdict], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            row = asdict(v)
            row.pop("raw_reply", None)
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_verdicts(path: str | Path) -> list[FilterVerdict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                row.setdefault("raw_reply", "")
                out.append(FilterVerdict(**row))
    return out
