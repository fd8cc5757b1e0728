"""Run-directory summaries and published full-scale reference results.

The reference numbers below come from full-scale runs (80k-sample GPU
fine-tuning scored by paid judge APIs). They are not reproducible at
desk scale and are shipped only as documented comparison targets.
"""
from __future__ import annotations

import json
from pathlib import Path

REFERENCE_RESULTS = {
    "mtbench": {
        # Backbone tag -> score after fine-tuning on the 80k gpt-4-turbo set.
        "mistral-7b-v0.1 + gpt4-turbo 80k": 7.29,
        "llama-3-70b-instruct + gpt4-turbo 80k": 9.03,
    },
    "arena_hard_win_rate": {
        "llama-3-70b-instruct + gpt4-turbo 80k": 57.0,
    },
    "contamination_rates_pct": {
        # 2000-sample judge audit of the distilled datasets.
        "gpt4-continuous": {"instructional": 0.7, "conversational": 8.3},
        "original-text": {"instructional": 0.45, "conversational": 13.4},
    },
    "uppercase_heuristic_removals": {
        "gpt4-turbo 80k": 7000,
    },
}


def _load_json(path: Path):
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return None


def _count_lines(path: Path) -> int | None:
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


def summarize_run(run_dir: str | Path) -> dict:
    """Collect per-stage artifact counts and summaries from a run directory."""
    run_dir = Path(run_dir)
    summary: dict = {"run_dir": str(run_dir), "stages": {}}

    config = _load_json(run_dir / "config.json")
    if config is not None:
        summary["config"] = config

    sampled = _count_lines(run_dir / "sample" / "manifest.jsonl")
    if sampled is not None:
        summary["stages"]["sample"] = {"documents": sampled}

    splits = _count_lines(run_dir / "splits" / "splits.jsonl")
    if splits is not None:
        summary["stages"]["split"] = {"records": splits}

    manifest = _load_json(run_dir / "completions" / "manifest.json")
    if manifest is not None:
        summary["stages"]["complete"] = {
            "teacher": manifest["teacher"],
            "totals": manifest["totals"],
        }

    filter_report = _load_json(run_dir / "filter" / "report.json")
    if filter_report is not None:
        summary["stages"]["filter"] = filter_report

    dataset_dir = run_dir / "dataset"
    if dataset_dir.is_dir():
        infos = [_load_json(p) for p in sorted(dataset_dir.glob("*.info.json"))]
        if infos:
            summary["stages"]["export"] = {"datasets": infos}

    for name in ("mtbench", "win_rate"):
        result = _load_json(run_dir / "eval" / f"{name}.json")
        if result is not None:
            summary["stages"].setdefault("eval", {})[name] = result

    summary["reference_results"] = REFERENCE_RESULTS
    return summary


def render_report(summary: dict) -> str:
    lines = [f"Run report: {summary['run_dir']}", ""]
    for stage, info in summary["stages"].items():
        lines.append(f"[{stage}]")
        lines.append(json.dumps(info, indent=2, ensure_ascii=False))
        lines.append("")
    lines.append("Full-scale reference results (not reproducible at desk scale):")
    lines.append(json.dumps(summary["reference_results"], indent=2))
    return "\n".join(lines) + "\n"
