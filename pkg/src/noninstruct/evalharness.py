"""Judge-score aggregation: absolute 1-10 grids and pairwise win rates."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .teacher import TeacherSpec, complete

WIN, TIE, LOSS = "win", "tie", "loss"
OUTCOMES = (WIN, TIE, LOSS)

DEFAULT_QUESTIONS = 80
DEFAULT_TURNS = 2
DEFAULT_ROUNDS = 3

_RATING = re.compile(r"\[\[(\d+(?:\.\d+)?)\]\]")
_PAIRWISE = re.compile(r"\[\[([ABC])\]\]")


class EvalError(Exception):
    pass


class JudgeParseError(EvalError):
    """Judge reply carried no recognizable rating or verdict."""


@dataclass
class ScoreMatrix:
    """Scores per (question, turn, round); NaN marks a missing cell."""

    scores: np.ndarray

    @classmethod
    def empty(cls, questions: int = DEFAULT_QUESTIONS, turns: int = DEFAULT_TURNS,
              rounds: int = DEFAULT_ROUNDS) -> "ScoreMatrix":
        return cls(np.full((questions, turns, rounds), np.nan))

    def set(self, question: int, turn: int, round: int, score: float) -> None:
        self.scores[question, turn, round] = score


@dataclass(frozen=True)
class PairwiseVerdict:
    question_id: str
    outcome: str

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise EvalError(f"unknown outcome: {self.outcome!r}")


def aggregate_mtbench(matrix: ScoreMatrix, validate: bool = True,
                      missing: str = "error") -> dict:
    """Arithmetic means over all cells plus per-round and per-turn marginals.

    missing="error" rejects incomplete grids; "exclude" averages the
    present cells and reports how many were missing.
    """
    scores = matrix.scores
    if scores.size == 0:
        raise EvalError("empty score matrix")
    missing_count = int(np.isnan(scores).sum())
    if missing_count:
        if missing != "exclude":
            raise EvalError(f"{missing_count} missing cells (pass missing='exclude' to skip them)")
        if missing_count == scores.size:
            raise EvalError("all cells missing")
    if validate:
        present = scores[~np.isnan(scores)]
        if present.size and (present.min() < 1 or present.max() > 10):
            raise EvalError(
                f"scores outside [1, 10]: min {present.min()}, max {present.max()}")
    return {
        "overall": float(np.nanmean(scores)),
        "per_round": [float(x) for x in np.nanmean(scores, axis=(0, 1))],
        "per_turn": [float(x) for x in np.nanmean(scores, axis=(0, 2))],
        "missing_cells": missing_count,
    }


def compute_win_rate(verdicts: Sequence[PairwiseVerdict]) -> float:
    """Win rate percent: ties count half. Not the official bootstrap pipeline."""
    if not verdicts:
        raise EvalError("no verdicts")
    wins = sum(1 for v in verdicts if v.outcome == WIN)
    ties = sum(1 for v in verdicts if v.outcome == TIE)
    return 100.0 * (wins + 0.5 * ties) / len(verdicts)


def build_judge_prompt(template: str, question: str, candidate_answer: str,
                       opponent_answer: str | None = None, mode: str = "absolute") -> str:
    """Fill a user-supplied judge template.

    Absolute templates use {question} and {answer}; pairwise templates
    use {question}, {answer_a} (candidate) and {answer_b} (opponent).
    """
    if not question or not candidate_answer:
        raise EvalError("question and candidate answer must be non-empty")
    if mode == "absolute":
        return template.replace("{question}", question).replace("{answer}", candidate_answer)
    if mode == "pairwise":
        if not opponent_answer:
            raise EvalError("pairwise mode needs an opponent answer")
        return (template.replace("{question}", question)
                .replace("{answer_a}", candidate_answer)
                .replace("{answer_b}", opponent_answer))
    raise EvalError(f"unknown judge mode: {mode!r}")


def parse_judge_reply(reply: str, mode: str = "absolute") -> float | str:
    """Extract a [[N]] rating or an [[A]]/[[B]]/[[C]] verdict (candidate is A)."""
    if mode == "absolute":
        m = _RATING.search(reply)
        if not m:
            raise JudgeParseError(f"no [[rating]] in judge reply: {reply[:120]!r}")
        return float(m.group(1))
    if mode == "pairwise":
        m = _PAIRWISE.search(reply)
        if not m:
            raise JudgeParseError(f"no [[A/B/C]] verdict in judge reply: {reply[:120]!r}")
        return {"A": WIN, "B": LOSS, "C": TIE}[m.group(1)]
    raise EvalError(f"unknown judge mode: {mode!r}")


def run_judge(template: str, question: str, candidate_answer: str,
              judge: TeacherSpec, opponent_answer: str | None = None,
              mode: str = "absolute", cache_dir: str | Path | None = None) -> float | str:
    """Build the prompt, ask the judge via the teacher client, parse the reply."""
    prompt = build_judge_prompt(template, question, candidate_answer,
                                opponent_answer, mode)
    rec = complete(prompt, judge, cache_dir=cache_dir)
    return parse_judge_reply(rec.continuation, mode)


def read_score_matrix(path: str | Path, questions: int = DEFAULT_QUESTIONS,
                      turns: int = DEFAULT_TURNS, rounds: int = DEFAULT_ROUNDS) -> ScoreMatrix:
    """Load `{question, turn, round, score}` jsonl rows (all zero-indexed)."""
    matrix = ScoreMatrix.empty(questions, turns, rounds)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                matrix.set(row["question"], row["turn"], row["round"], row["score"])
    return matrix


def read_pairwise_verdicts(path: str | Path) -> list[PairwiseVerdict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out.append(PairwiseVerdict(str(row["question_id"]), row["outcome"]))
    return out


def format_results_table(rows: Iterable[dict]) -> str:
    """Plain-text summary table: Backbone, Fine-tuned Modules, Data, Score."""
    header = ("Backbone", "Fine-tuned Modules", "Data", "Score")
    body = [(r.get("backbone", "-"), r.get("modules", "-"),
             r.get("data", "-"), f"{r['score']:.2f}") for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(b, widths)))
    return "\n".join(lines) + "\n"
