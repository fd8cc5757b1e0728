"""Trainer-ready dataset export and nested ablation subsets."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

log = logging.getLogger(__name__)

VANILLA_SFT_JSONL = "vanilla-sft-jsonl"
ALPACA_JSONL = "alpaca-jsonl"
RAW_TEXT = "raw-text"
FORMATS = (VANILLA_SFT_JSONL, ALPACA_JSONL, RAW_TEXT)


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class DatasetExample:
    """Prompt is the verbatim prefix, completion the verbatim continuation.

    No chat-template tokens are injected; training applies the plain
    (vanilla) template downstream.
    """

    prompt: str
    completion: str
    doc_id: str
    teacher: str = ""


def export(records: Sequence[DatasetExample], format: str, path: str | Path,
           name: str = "", filters_applied: Sequence[str] = (), seed: int | None = None) -> int:
    """Write one record per example; returns the number written.

    Records with empty completions are skipped with a warning. A
    `<path>.info.json` descriptor is written alongside the dataset.
    raw-text is one prefix+continuation per line and is not reversible
    for texts containing newlines; use the jsonl formats for round trips.
    """
    if format not in FORMATS:
        raise DatasetError(f"unknown export format: {format!r}")
    if not records:
        raise DatasetError("no records to export")
    seen: set[str] = set()
    for rec in records:
        if rec.doc_id in seen:
            raise DatasetError(f"duplicate doc_id in dataset: {rec.doc_id!r}")
        seen.add(rec.doc_id)

    path = Path(path)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if not rec.completion:
                log.warning("skipping %s: empty completion", rec.doc_id)
                continue
            if format == VANILLA_SFT_JSONL:
                fh.write(json.dumps(
                    {"prompt": rec.prompt, "completion": rec.completion},
                    ensure_ascii=False) + "\n")
            elif format == ALPACA_JSONL:
                fh.write(json.dumps(
                    {"instruction": rec.prompt, "input": "", "output": rec.completion},
                    ensure_ascii=False) + "\n")
            else:
                fh.write(rec.prompt + rec.completion + "\n")
            count += 1

    teachers = sorted({rec.teacher for rec in records if rec.teacher})
    info = {
        "name": name or path.stem,
        "format": format,
        "count": count,
        "teacher": teachers[0] if len(teachers) == 1 else teachers,
        "filters_applied": list(filters_applied),
        "seed": seed,
    }
    Path(str(path) + ".info.json").write_text(
        json.dumps(info, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return count


def parse_exported(path: str | Path, format: str) -> list[tuple[str, str]]:
    """Read back (prompt, completion) pairs from a jsonl export."""
    if format not in (VANILLA_SFT_JSONL, ALPACA_JSONL):
        raise DatasetError(f"cannot parse back format {format!r}")
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if format == VANILLA_SFT_JSONL:
                pairs.append((row["prompt"], row["completion"]))
            else:
                pairs.append((row["instruction"], row["output"]))
    return pairs


def subset(dataset: Sequence[DatasetExample], sizes: Sequence[int], seed: int,
           ) -> dict[int, list[DatasetExample]]:
    """Nested ablation subsets from a single seeded shuffle.

    The subset of size s is the first s elements of the shuffle, so
    smaller subsets are contained in larger ones.
    """
    if not sizes:
        raise DatasetError("no subset sizes given")
    if list(sizes) != sorted(sizes):
        raise DatasetError(f"sizes must be ascending, got {list(sizes)}")
    if any(s <= 0 for s in sizes):
        raise DatasetError("subset sizes must be positive")
    if max(sizes) > len(dataset):
        raise DatasetError(
            f"largest subset {max(sizes)} exceeds dataset size {len(dataset)}")
    shuffled = list(dataset)
    random.Random(seed).shuffle(shuffled)
    return {s: shuffled[:s] for s in sizes}
