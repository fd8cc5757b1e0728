import json
import random

import pytest
import yaml
from click.testing import CliRunner

from mockserver import MockTeacherServer
from noninstruct.cli import main


def make_corpus_file(path, n=50, seed=0):
    rng = random.Random(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            words = [f"w{i}_{j}" for j in range(rng.randint(8, 30))]
            fh.write(json.dumps({"text": " ".join(words), "source": f"fix{i}"}) + "\n")


def write_config(tmp_path, run_dir, corpus_path, endpoint="http://unused", n=20,
                 extra=None):
    cfg = {
        "run_dir": str(run_dir),
        "corpus": {"path": str(corpus_path), "format": "jsonl"},
        "sample": {"n": n, "seed": 11},
        "split": {"seed": 22},
        "teacher": {
            "provider": "openai-compatible",
            "model_id": "gpt-4-0125-preview",
            "endpoint_url": endpoint,
            "max_in_flight": 3,
        },
        "filter": {"uppercase_heuristic": True,
                   "drop_instructional": False, "drop_conversational": False},
        "export": {"format": "vanilla-sft-jsonl", "name": "dataset"},
        "subset": {"sizes": [5, 10], "seed": 33},
    }
    if extra:
        cfg.update(extra)
    p = tmp_path / "config.yaml"
    p.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return p


def run_cli(config, *args, mock=None):
    runner = CliRunner()
    base = ["--config", str(config)]
    if mock:
        base += ["--mock-endpoint", mock]
    return runner.invoke(main, base + list(args))


def run_pipeline(config, mock):
    for stage in ("sample", "split", "complete", "filter", "export", "subset"):
        result = run_cli(config, stage, mock=mock)
        assert result.exit_code == 0, f"{stage}: {result.output}"


def test_full_pipeline_fixture(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path)
    run_dir = tmp_path / "run"
    config = write_config(tmp_path, run_dir, corpus_path)
    with MockTeacherServer(reply_fn=lambda p: f" more about {p.split()[-1]}") as server:
        run_pipeline(config, server.url)
        result = run_cli(config, "report", mock=server.url)
    assert result.exit_code == 0
    for artifact in ("sample/manifest.jsonl", "sample/documents.jsonl",
                     "splits/splits.jsonl", "completions/completions.jsonl",
                     "completions/manifest.json", "filter/verdicts.jsonl",
                     "filter/report.json", "dataset/dataset.jsonl",
                     "dataset/subset_5.jsonl", "dataset/subset_10.jsonl",
                     "report.json", "report.txt"):
        assert (run_dir / artifact).exists(), artifact
    rows = [json.loads(l) for l in
            (run_dir / "dataset" / "dataset.jsonl").read_text().splitlines()]
    assert rows and all(set(r) == {"prompt", "completion"} for r in rows)
    # Subsets are nested.
    small = {json.loads(l)["prompt"] for l in
             (run_dir / "dataset" / "subset_5.jsonl").read_text().splitlines()}
    big = {json.loads(l)["prompt"] for l in
           (run_dir / "dataset" / "subset_10.jsonl").read_text().splitlines()}
    assert small < big


def test_pipeline_determinism(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path)
    outputs = []
    with MockTeacherServer(reply_fn=lambda p: f" echo {len(p)}") as server:
        for tag in ("a", "b"):
            run_dir = tmp_path / f"run_{tag}"
            config = write_config(tmp_path, run_dir, corpus_path)
            run_pipeline(config, server.url)
            outputs.append({
                "dataset": (run_dir / "dataset" / "dataset.jsonl").read_bytes(),
                "sample": (run_dir / "sample" / "manifest.jsonl").read_bytes(),
                "splits": (run_dir / "splits" / "splits.jsonl").read_bytes(),
                "completions": (run_dir / "completions" / "completions.jsonl").read_bytes(),
                "manifest": (run_dir / "completions" / "manifest.json").read_bytes(),
            })
    assert outputs[0] == outputs[1]


def test_split_on_empty_sample(tmp_path):
    run_dir = tmp_path / "run"
    (run_dir / "sample").mkdir(parents=True)
    (run_dir / "sample" / "documents.jsonl").write_text("")
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path, n=5)
    config = write_config(tmp_path, run_dir, corpus_path)
    result = run_cli(config, "split")
    assert result.exit_code != 0
    assert "no documents" in result.output


def test_rerun_complete_zero_requests(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path)
    run_dir = tmp_path / "run"
    config = write_config(tmp_path, run_dir, corpus_path)
    with MockTeacherServer() as server:
        for stage in ("sample", "split", "complete"):
            assert run_cli(config, stage, mock=server.url).exit_code == 0
        server.reset_counters()
        result = run_cli(config, "complete", mock=server.url)
        assert result.exit_code == 0
        assert server.requests == 0


def test_complete_dry_run(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path)
    run_dir = tmp_path / "run"
    config = write_config(
        tmp_path, run_dir, corpus_path,
        extra={"prices": {"gpt-4-0125-preview": {"input_per_million": 10,
                                                 "output_per_million": 30}}})
    with MockTeacherServer() as server:
        assert run_cli(config, "sample", mock=server.url).exit_code == 0
        assert run_cli(config, "split", mock=server.url).exit_code == 0
        result = run_cli(config, "complete", "--dry-run", mock=server.url)
        assert result.exit_code == 0
        assert server.requests == 0
    payload = json.loads(result.output)
    assert payload["estimate"]["is_estimate"] is True
    assert payload["estimate"]["cost"] > 0


def test_stage_fails_fast_on_missing_upstream(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path, n=5)
    config = write_config(tmp_path, tmp_path / "run", corpus_path)
    result = run_cli(config, "complete")
    assert result.exit_code != 0
    assert "missing upstream artifact" in result.output


def test_config_serialized_into_run(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path, n=10)
    run_dir = tmp_path / "run"
    config = write_config(tmp_path, run_dir, corpus_path, n=5)
    assert run_cli(config, "sample").exit_code == 0
    stored = json.loads((run_dir / "config.json").read_text())
    assert stored["sample"] == {"n": 5, "seed": 11}


def test_emit_train_and_eval_commands(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path, n=5)
    run_dir = tmp_path / "run"
    config = write_config(tmp_path, run_dir, corpus_path)

    result = run_cli(config, "emit-train")
    assert result.exit_code == 0
    assert (run_dir / "train" / "run_train.sh").exists()

    scores = tmp_path / "scores.jsonl"
    with open(scores, "w") as fh:
        for q in range(80):
            for t in range(2):
                for r in range(3):
                    fh.write(json.dumps({"question": q, "turn": t, "round": r,
                                         "score": 8}) + "\n")
    result = run_cli(config, "eval-mtbench", "--scores", str(scores))
    assert result.exit_code == 0
    assert json.loads((run_dir / "eval" / "mtbench.json").read_text())["overall"] == 8.0

    verdicts = tmp_path / "verdicts.jsonl"
    verdicts.write_text(json.dumps({"question_id": "q1", "outcome": "win"}) + "\n")
    result = run_cli(config, "eval-wr", "--verdicts", str(verdicts))
    assert result.exit_code == 0
    assert json.loads((run_dir / "eval" / "win_rate.json").read_text())["win_rate"] == 100.0


def test_merge_subcommands(tmp_path):
    import numpy as np
    from noninstruct.merge import AdapterPair, load_archive, save_adapters, save_archive

    rng = np.random.default_rng(0)
    w = rng.standard_normal((4, 4)).astype(np.float32)
    backbone = tmp_path / "backbone.bin"
    save_archive(backbone, {"w": w})
    adapters = tmp_path / "adapters.bin"
    save_adapters(adapters, [AdapterPair(
        "w", A=rng.standard_normal((2, 4)).astype(np.float32),
        B=rng.standard_normal((4, 2)).astype(np.float32), rank=2, alpha=4.0)])

    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path, n=5)
    config = write_config(tmp_path, tmp_path / "run", corpus_path)

    out = tmp_path / "merged.bin"
    result = run_cli(config, "merge", "--backbone", str(backbone),
                     "--adapters", str(adapters), "--out", str(out))
    assert result.exit_code == 0, result.output
    merged = load_archive(out)
    assert not np.array_equal(merged["w"], w)

    out2 = tmp_path / "merged_base.bin"
    result = run_cli(config, "merge-base", "--instruct", str(backbone),
                     "--adapters", str(adapters), "--out", str(out2))
    assert result.exit_code == 0
    assert out2.read_bytes() == out.read_bytes()


def test_filter_with_mock_judge(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    make_corpus_file(corpus_path, n=30)
    run_dir = tmp_path / "run"

    def reply(prompt):
        if prompt.startswith("Is the following text"):
            return "No. Just an article."
        if prompt.startswith("Does the following text"):
            return "No. No dialogue."
        return " plain continuation"

    with MockTeacherServer(reply_fn=reply) as server:
        config = write_config(
            tmp_path, run_dir, corpus_path, n=10,
            extra={"filter": {
                "drop_instructional": True,
                "drop_conversational": True,
                "uppercase_heuristic": False,
                "judge": {"provider": "openai-compatible", "model_id": "gpt-4o",
                          "endpoint_url": "http://replaced"},
            }})
        for stage in ("sample", "split", "complete", "filter"):
            result = run_cli(config, stage, mock=server.url)
            assert result.exit_code == 0, f"{stage}: {result.output}"
    report = json.loads((run_dir / "filter" / "report.json").read_text())
    assert report["kept"] == report["input"] == 10
    verdict_rows = (run_dir / "filter" / "verdicts.jsonl").read_text().splitlines()
    assert len(verdict_rows) == 20  # both kinds judged for all 10
