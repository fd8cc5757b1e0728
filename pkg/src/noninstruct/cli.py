"""Pipeline orchestration: one subcommand per stage, one run directory per run."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import yaml

from . import corpus as corpus_mod
from . import datasets as datasets_mod
from . import evalharness, filtering, merge as merge_mod, report as report_mod
from . import splitter as splitter_mod
from . import teacher as teacher_mod
from . import trainconfig

log = logging.getLogger(__name__)


class StageError(click.ClickException):
    exit_code = 1


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise StageError(f"config file not found: {path}")
    with open(p, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    if "run_dir" not in cfg:
        raise StageError("config must set run_dir")
    return cfg


def _run_dir(cfg: dict) -> Path:
    d = Path(cfg["run_dir"])
    d.mkdir(parents=True, exist_ok=True)
    # The full configuration is serialized into the run directory so every
    # artifact is reproducible from (inputs, config, seeds).
    (d / "config.json").write_text(
        json.dumps(cfg, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8")
    return d


def _teacher_spec(section: dict, mock_endpoint: str | None) -> teacher_mod.TeacherSpec:
    try:
        return teacher_mod.TeacherSpec(
            provider=section["provider"],
            model_id=section["model_id"],
            endpoint_url=mock_endpoint or section["endpoint_url"],
            temperature=section.get("temperature", 0.0),
            system_prompt=section.get("system_prompt"),
            max_output_tokens=section.get("max_output_tokens", 2048),
        )
    except (KeyError, teacher_mod.TeacherError) as exc:
        raise StageError(f"bad teacher config: {exc}") from exc


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise StageError(f"missing upstream artifact {path} (run `{hint}` first)")
    return path


def _read_documents(path: Path) -> list[corpus_mod.Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                docs.append(corpus_mod.Document(**json.loads(line)))
    return docs


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Pipeline config file (YAML).")
@click.option("--seed", type=int, default=None, help="Override every stage seed.")
@click.option("--mock-endpoint", default=None,
              help="Point all providers at this base URL (testing hook).")
@click.pass_context
def main(ctx, config_path, seed, mock_endpoint):
    """Non-instructional dataset pipeline."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = _load_config(config_path)
    ctx.obj = {"cfg": cfg, "seed": seed, "mock": mock_endpoint}


def _stage_seed(ctx_obj: dict, section: str, default: int = 0) -> int:
    if ctx_obj["seed"] is not None:
        return ctx_obj["seed"]
    return int(ctx_obj["cfg"].get(section, {}).get("seed", default))


@main.command()
@click.pass_obj
def sample(obj):
    """Ingest the corpus and draw the uniform document sample."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    ccfg = cfg.get("corpus", {})
    scfg = cfg.get("sample", {})
    try:
        docs = corpus_mod.load_corpus(
            ccfg["path"], format=ccfg.get("format", "jsonl"),
            strict=ccfg.get("strict", False))
        picked = corpus_mod.sample_uniform(docs, int(scfg["n"]), _stage_seed(obj, "sample"))
    except (KeyError, corpus_mod.CorpusError) as exc:
        raise StageError(f"sample failed: {exc}") from exc
    out = run_dir / "sample"
    out.mkdir(exist_ok=True)
    with open(out / "documents.jsonl", "w", encoding="utf-8") as fh:
        for doc in picked:
            fh.write(json.dumps(
                {"id": doc.id, "text": doc.text, "word_count": doc.word_count,
                 "source": doc.source}, ensure_ascii=False) + "\n")
    corpus_mod.write_sample_manifest(picked, out / "manifest.jsonl")
    click.echo(f"sampled {len(picked)} documents -> {out}")


@main.command()
@click.pass_obj
def split(obj):
    """Halve every sampled document at a seeded midpoint."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    docs_path = _require(run_dir / "sample" / "documents.jsonl", "sample")
    docs = _read_documents(docs_path)
    if not docs:
        raise StageError("no documents in the sample")
    seed = _stage_seed(obj, "split")
    try:
        records = [splitter_mod.split(doc, seed) for doc in docs]
    except splitter_mod.SplitError as exc:
        raise StageError(f"split failed: {exc}") from exc
    out = run_dir / "splits"
    out.mkdir(exist_ok=True)
    n = splitter_mod.write_splits(records, out / "splits.jsonl")
    click.echo(f"split {n} documents -> {out}")


@main.command()
@click.option("--dry-run", is_flag=True, help="Plan and cost estimate only; no requests.")
@click.pass_obj
def complete(obj, dry_run):
    """Run the teacher completion batch (cached, resumable)."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    splits_path = _require(run_dir / "splits" / "splits.jsonl", "split")
    splits = list(splitter_mod.read_splits(splits_path))
    tcfg = cfg.get("teacher", {})
    spec = _teacher_spec(tcfg, obj["mock"])
    if dry_run:
        prices = cfg.get("prices", {spec.model_id: {"input_per_million": 0.0,
                                                    "output_per_million": 0.0}})
        estimate = teacher_mod.estimate_cost(splits, prices, spec=spec)
        click.echo(json.dumps({"records": len(splits), "estimate": estimate}, indent=2))
        return
    try:
        manifest = teacher_mod.run_batch(
            splits, spec,
            max_in_flight=int(tcfg.get("max_in_flight", 4)),
            cache_dir=run_dir / "completions",
            max_failures=tcfg.get("max_failures"))
    except teacher_mod.TeacherError as exc:
        raise StageError(f"completion batch failed: {exc}") from exc
    totals = manifest.to_dict()["totals"]
    click.echo(json.dumps(totals, indent=2))
    if totals["failed"]:
        sys.exit(2)


@main.command(name="filter")
@click.pass_obj
def filter_cmd(obj):
    """Judge completions for latent instructional/conversational content and filter."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    completions_path = _require(run_dir / "completions" / "completions.jsonl", "complete")
    splits_path = _require(run_dir / "splits" / "splits.jsonl", "split")
    records = teacher_mod.read_completions(completions_path)
    splits = {s.doc_id: s for s in splitter_mod.read_splits(splits_path)}
    fcfg = cfg.get("filter", {})

    out = run_dir / "filter"
    out.mkdir(exist_ok=True)
    verdicts: list[filtering.FilterVerdict] = []
    kinds = [k for k, flag in ((filtering.INSTRUCTIONAL, fcfg.get("drop_instructional", True)),
                               (filtering.CONVERSATIONAL, fcfg.get("drop_conversational", True)))
             if flag]
    if kinds and "judge" in fcfg:
        judge = _teacher_spec(fcfg["judge"], obj["mock"])
        docs = [corpus_mod.Document(id=rec.doc_id, text=rec.continuation,
                                    word_count=len(rec.continuation.split()))
                for rec in records]
        for kind in kinds:
            try:
                _report, kind_verdicts = filtering.measure_rates(
                    docs, judge, kind,
                    sample_size=int(fcfg.get("sample_size", filtering.DEFAULT_JUDGE_SAMPLE_SIZE)),
                    skip_unparseable=fcfg.get("skip_unparseable", False),
                    cache_dir=out / "judge_cache")
            except (filtering.FilterError, teacher_mod.TeacherError) as exc:
                raise StageError(f"judging failed: {exc}") from exc
            verdicts.extend(kind_verdicts)
    filtering.write_verdicts(verdicts, out / "verdicts.jsonl")

    try:
        kept, removal_report = filtering.apply_filters(
            records, verdicts,
            drop_instructional=fcfg.get("drop_instructional", True),
            drop_conversational=fcfg.get("drop_conversational", True),
            drop_uppercase_restarts=fcfg.get("uppercase_heuristic", False),
            splits=splits)
    except filtering.FilterError as exc:
        raise StageError(f"filtering failed: {exc}") from exc
    teacher_mod.write_completions(kept, out / "filtered.jsonl")
    (out / "report.json").write_text(
        json.dumps(removal_report, indent=2) + "\n", encoding="utf-8")
    click.echo(json.dumps(removal_report, indent=2))


def _load_examples(run_dir: Path) -> list[datasets_mod.DatasetExample]:
    filtered = run_dir / "filter" / "filtered.jsonl"
    source = filtered if filtered.exists() else _require(
        run_dir / "completions" / "completions.jsonl", "complete")
    records = teacher_mod.read_completions(source)
    splits = {s.doc_id: s
              for s in splitter_mod.read_splits(
                  _require(run_dir / "splits" / "splits.jsonl", "split"))}
    examples = []
    for rec in records:
        split = splits.get(rec.doc_id)
        if split is None:
            raise StageError(f"completion {rec.doc_id} has no split record")
        examples.append(datasets_mod.DatasetExample(
            prompt=split.prefix, completion=rec.continuation,
            doc_id=rec.doc_id, teacher=rec.teacher.get("model_id", "")))
    return examples


@main.command()
@click.pass_obj
def export(obj):
    """Assemble the trainer-ready dataset file."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    ecfg = cfg.get("export", {})
    examples = _load_examples(run_dir)
    fmt = ecfg.get("format", datasets_mod.VANILLA_SFT_JSONL)
    name = ecfg.get("name", "dataset")
    out = run_dir / "dataset"
    out.mkdir(exist_ok=True)
    ext = "txt" if fmt == datasets_mod.RAW_TEXT else "jsonl"
    filters_applied = []
    if (run_dir / "filter" / "filtered.jsonl").exists():
        filters_applied = list((cfg.get("filter") or {}).keys())
    try:
        n = datasets_mod.export(examples, fmt, out / f"{name}.{ext}", name=name,
                                filters_applied=filters_applied,
                                seed=_stage_seed(obj, "sample"))
    except datasets_mod.DatasetError as exc:
        raise StageError(f"export failed: {exc}") from exc
    click.echo(f"exported {n} examples -> {out / f'{name}.{ext}'}")


@main.command()
@click.pass_obj
def subset(obj):
    """Write nested ablation subsets of the dataset."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    scfg = cfg.get("subset", {})
    sizes = scfg.get("sizes")
    if not sizes:
        raise StageError("config subset.sizes is required")
    examples = _load_examples(run_dir)
    fmt = cfg.get("export", {}).get("format", datasets_mod.VANILLA_SFT_JSONL)
    try:
        by_size = datasets_mod.subset(examples, [int(s) for s in sizes],
                                      _stage_seed(obj, "subset"))
    except datasets_mod.DatasetError as exc:
        raise StageError(f"subset failed: {exc}") from exc
    out = run_dir / "dataset"
    out.mkdir(exist_ok=True)
    for size, rows in by_size.items():
        datasets_mod.export(rows, fmt, out / f"subset_{size}.jsonl",
                            name=f"subset_{size}", seed=_stage_seed(obj, "subset"))
    click.echo(f"wrote {len(by_size)} nested subsets -> {out}")


@main.command()
@click.option("--backbone", "backbone_path", required=True, type=click.Path(exists=True))
@click.option("--adapters", "adapters_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def merge(backbone_path, adapters_path, out_path):
    """Merge adapters into the backbone they were trained on."""
    _do_merge(backbone_path, adapters_path, out_path)


@main.command(name="merge-base")
@click.option("--instruct", "instruct_path", required=True, type=click.Path(exists=True))
@click.option("--adapters", "adapters_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def merge_base(instruct_path, adapters_path, out_path):
    """Merge adapters trained on the foundation model into the Instruct weights."""
    _do_merge(instruct_path, adapters_path, out_path)


def _do_merge(weights_path, adapters_path, out_path):
    try:
        weights = merge_mod.load_archive(weights_path)
        adapters = merge_mod.load_adapters(adapters_path)
        merged = merge_mod.merge_lora(weights, adapters)
        merge_mod.save_archive(out_path, merged)
    except merge_mod.MergeError as exc:
        raise StageError(f"merge failed: {exc}") from exc
    click.echo(f"merged {len(adapters)} adapters into {len(merged)} tensors -> {out_path}")


@main.command(name="emit-train")
@click.pass_obj
def emit_train(obj):
    """Emit the external-trainer launch script and config."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    tcfg = cfg.get("train", {})
    plan = trainconfig.TrainPlan(**tcfg)
    try:
        script, config = trainconfig.emit_files(plan, run_dir / "train")
    except trainconfig.TrainConfigError as exc:
        raise StageError(f"emit-train failed: {exc}") from exc
    click.echo(f"wrote {script} and {config}")


@main.command(name="eval-mtbench")
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True),
              help="jsonl of {question, turn, round, score}.")
@click.pass_obj
def eval_mtbench(obj, scores_path):
    """Aggregate an absolute 1-10 score grid."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    ecfg = cfg.get("eval", {})
    matrix = evalharness.read_score_matrix(
        scores_path,
        questions=int(ecfg.get("questions", evalharness.DEFAULT_QUESTIONS)),
        turns=int(ecfg.get("turns", evalharness.DEFAULT_TURNS)),
        rounds=int(ecfg.get("rounds", evalharness.DEFAULT_ROUNDS)))
    try:
        result = evalharness.aggregate_mtbench(
            matrix, missing=ecfg.get("missing", "error"))
    except evalharness.EvalError as exc:
        raise StageError(f"aggregation failed: {exc}") from exc
    out = run_dir / "eval"
    out.mkdir(exist_ok=True)
    (out / "mtbench.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    click.echo(json.dumps(result, indent=2))


@main.command(name="eval-wr")
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True),
              help="jsonl of {question_id, outcome}.")
@click.pass_obj
def eval_wr(obj, verdicts_path):
    """Compute the pairwise win rate against the baseline."""
    cfg = obj["cfg"]
    run_dir = _run_dir(cfg)
    try:
        verdicts = evalharness.read_pairwise_verdicts(verdicts_path)
        wr = evalharness.compute_win_rate(verdicts)
    except evalharness.EvalError as exc:
        raise StageError(f"win-rate computation failed: {exc}") from exc
    result = {"win_rate": wr, "verdicts": len(verdicts)}
    out = run_dir / "eval"
    out.mkdir(exist_ok=True)
    (out / "win_rate.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    click.echo(json.dumps(result, indent=2))


@main.command(name="report")
@click.pass_obj
def report_cmd(obj):
    """Summarize a run directory: counts, costs, filter rates, eval aggregates."""
    cfg = obj["cfg"]
    run_dir = Path(cfg["run_dir"])
    if not run_dir.exists():
        raise StageError(f"run directory does not exist: {run_dir}")
    summary = report_mod.summarize_run(run_dir)
    (run_dir / "report.json").write_text(
        json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    text = report_mod.render_report(summary)
    (run_dir / "report.txt").write_text(text, encoding="utf-8")
    click.echo(text)


if __name__ == "__main__":
    main()
