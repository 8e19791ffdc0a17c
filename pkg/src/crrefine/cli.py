"""Command-line interface.

Every pipeline stage is a subcommand over plain files: JSONL for structured
records, TSV for tables, PNG for optional figures.  Model access always goes
through named profiles from a TOML file (``--models``, the ``CRR_MODELS``
environment variable, or ``./models.toml``).
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import (
    analysis,
    annoservice,
    corpus,
    crparser,
    evalharness,
    filterkit,
    jsonio,
    modelgateway,
    rationale,
    taskforge,
)

logger = logging.getLogger(__name__)


def _fail(message: str) -> "click.exceptions.ClickException":
    return click.ClickException(message)


def _load_handle(profile: str, models: str | None) -> modelgateway.ModelHandle:
    try:
        return modelgateway.load_handle(profile, path=models)
    except modelgateway.ProfileError as exc:
        raise _fail(str(exc)) from exc


def _read_instances(path: str) -> list[taskforge.TaskInstance]:
    return [taskforge.TaskInstance.from_record(r) for r in jsonio.read_jsonl(path)]


def _read_crs(path: str) -> list[crparser.ChangeRequest]:
    return [crparser.ChangeRequest.from_record(r) for r in jsonio.read_jsonl(path)]


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Build change-request datasets and run the evaluation loop."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# -- corpus acquisition ---------------------------------------------------------


@main.command()
@click.option("--list", "listing", required=True, help="Listing URL or local JSONL file.")
@click.option("--ftp", "endpoint", required=True, help="Archive endpoint URL or local directory.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--parallel", default=4, show_default=True, help="Concurrent downloads.")
@click.option("--approved-only", is_flag=True, help="Skip descriptors not marked approved.")
def ingest(listing: str, endpoint: str, out_dir: str, parallel: int, approved_only: bool) -> None:
    """Download change-request archives listed in a meeting listing."""
    try:
        descriptors = corpus.fetch_cr_list(listing, approved_only=approved_only)
        index = corpus.fetch_cr_archives(
            descriptors, endpoint, Path(out_dir) / "raw", max_parallel=parallel
        )
    except corpus.CorpusError as exc:
        raise _fail(str(exc)) from exc
    jsonio.write_jsonl(Path(out_dir) / "index.jsonl", index.to_records())
    click.echo(f"fetched {len(index.fetched)} of {len(descriptors)} archives into {out_dir}")
    if index.failures:
        click.echo(f"failed: {len(index.failures)} (see index.jsonl for reasons)", err=True)


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True), help="Ingest directory.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Parsed JSONL output.")
def parse(in_dir: str, out_path: str) -> None:
    """Parse downloaded documents into structured change requests."""
    root = Path(in_dir)
    raw_dir = root / "raw" if (root / "raw").is_dir() else root
    files = sorted(raw_dir.glob("*.txt"))
    if not files:
        raise _fail(f"no .txt documents under {raw_dir}")
    records = []
    failures = 0
    for file in files:
        try:
            doc = corpus.normalize_document(file.read_bytes(), doc_id=file.stem)
            records.append(crparser.parse_coversheet(doc).to_record())
        except (corpus.CorpusError, crparser.ParserError) as exc:
            failures += 1
            logger.warning("skipping %s: %s", file.name, exc)
    jsonio.write_jsonl(out_path, records)
    click.echo(f"parsed {len(records)} change requests ({failures} skipped) -> {out_path}")


# -- filtering ----------------------------------------------------------------


@main.command("filter")
@click.argument("kind", type=click.Choice(["security", "educational"]))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--judge", "judge_profile", required=True, help="Judge model profile name.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--models", default=None, type=click.Path(), help="Model profile TOML.")
def filter_cmd(kind: str, in_path: str, judge_profile: str, out_path: str, models: str | None) -> None:
    """Classify change requests (security) or task instances (educational)."""
    judge = _load_handle(judge_profile, models)
    labels = []
    try:
        if kind == "security":
            for cr in _read_crs(in_path):
                labels.append(
                    filterkit.classify_security_relevance(
                        cr.reason_for_change, cr.consequences, judge, subject_id=cr.cr_id
                    )
                )
        else:
            for instance in _read_instances(in_path):
                labels.append(filterkit.classify_educational_value(instance, judge))
    except filterkit.FilterError as exc:
        raise _fail(str(exc)) from exc
    jsonio.write_jsonl(out_path, [label.to_record() for label in labels])
    click.echo(f"labeled {len(labels)} subjects -> {out_path}")


@main.command()
@click.option("--train", "train_path", required=True, type=click.Path(exists=True))
@click.option("--test", "test_path", required=True, type=click.Path(exists=True))
@click.option("--n", "ngram_order", default=filterkit.DEFAULT_NGRAM_ORDER, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--evidence", "evidence_path", required=True, type=click.Path())
@click.option("--include-queries", is_flag=True, help="Also match n-grams inside query texts.")
def decontaminate(
    train_path: str,
    test_path: str,
    ngram_order: int,
    out_path: str,
    evidence_path: str,
    include_queries: bool,
) -> None:
    """Remove training instances sharing n-grams with held-out answers."""
    train = _read_instances(train_path)
    held_out = _read_instances(test_path)
    index = filterkit.build_ngram_index((i.reference_answer for i in held_out), ngram_order)
    retained, removed = filterkit.decontaminate(train, index, include_queries=include_queries)
    jsonio.write_jsonl(out_path, [i.to_record() for i in retained])
    jsonio.write_jsonl(
        evidence_path,
        [
            {"instance_id": r.instance.instance_id, "witness": r.witness, "instance": r.instance.to_record()}
            for r in removed
        ],
    )
    click.echo(
        f"retained {len(retained)} of {len(train)} instances"
        f" ({len(removed)} removed, evidence in {evidence_path})"
    )


# -- dataset assembly -----------------------------------------------------------


@main.command("build-tasks")
@click.option("--crs", "crs_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--eval-ids", "eval_ids_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--general-docs", default=None, type=click.Path(exists=True), help="JSONL of raw docs.")
@click.option("--attack-texts", default=None, type=click.Path(exists=True), help="JSONL of texts.")
@click.option("--ngram", "ngram_order", default=filterkit.DEFAULT_NGRAM_ORDER, show_default=True)
@click.option("--min-query-words", default=filterkit.DEFAULT_MIN_QUERY_WORDS, show_default=True)
@click.option("--include-queries", is_flag=True)
def build_tasks(
    crs_path: str,
    labels_path: str,
    eval_ids_path: str,
    out_dir: str,
    general_docs: str | None,
    attack_texts: str | None,
    ngram_order: int,
    min_query_words: int,
    include_queries: bool,
) -> None:
    """Build the dataset products from parsed change requests and labels."""
    crs = _read_crs(crs_path)
    labels = [filterkit.FilterLabel.from_record(r) for r in jsonio.read_jsonl(labels_path)]
    eval_ids = [
        line.strip()
        for line in Path(eval_ids_path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    docs = tuple(str(r["text"]) for r in jsonio.read_jsonl(general_docs)) if general_docs else ()
    extra = tuple(str(r["text"]) for r in jsonio.read_jsonl(attack_texts)) if attack_texts else ()
    config = taskforge.AssembleConfig(
        ngram_order=ngram_order,
        min_query_words=min_query_words,
        include_queries=include_queries,
        extra_contamination_texts=extra,
        general_docs=docs,
    )
    try:
        assembled = taskforge.assemble_datasets(crs, labels, eval_ids, config)
    except taskforge.TaskError as exc:
        raise _fail(str(exc)) from exc

    out = Path(out_dir)
    jsonio.write_jsonl(out / "cr_eval.jsonl", [i.to_record() for i in assembled.cr_eval])
    jsonio.write_jsonl(out / "cr_instruct.jsonl", [i.to_record() for i in assembled.cr_instruct])
    for kind, instances in assembled.cr_sec.items():
        jsonio.write_jsonl(out / f"cr_sec_{kind}.jsonl", [i.to_record() for i in instances])
    jsonio.write_jsonl(out / "cr_mix.jsonl", [{"text": doc} for doc in assembled.cr_mix])
    jsonio.write_json(
        out / "manifests.json", {k: m.to_record() for k, m in assembled.manifests.items()}
    )
    jsonio.write_jsonl(
        out / "evidence_rejections.jsonl",
        [{"instance_id": iid, "reason": reason} for iid, reason in assembled.build_rejections],
    )
    jsonio.write_jsonl(
        out / "evidence_heuristic.jsonl",
        [{"instance_id": iid, "reason": reason} for iid, reason in assembled.heuristic_drops],
    )
    jsonio.write_jsonl(
        out / "evidence_contamination.jsonl",
        [{"instance_id": iid, "witness": witness} for iid, witness in assembled.contamination_removals],
    )
    jsonio.write_jsonl(
        out / "evidence_educational.jsonl",
        [{"instance_id": iid} for iid in assembled.educational_drops],
    )
    for name, manifest in sorted(assembled.manifests.items()):
        click.echo(f"{name}: {manifest.instance_count} records")


@main.command("export-training")
@click.option("--datasets", "datasets_dir", required=True, type=click.Path(exists=True))
@click.option("--stage", required=True, type=click.Choice(list(taskforge.EXPORT_STAGES)))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option(
    "--max-sample-length", default=taskforge.DEFAULT_MAX_SAMPLE_LENGTH, show_default=True
)
@click.option("--rationale-sets", default=None, type=click.Path(exists=True))
def export_training(
    datasets_dir: str,
    stage: str,
    out_dir: str,
    max_sample_length: int,
    rationale_sets: str | None,
) -> None:
    """Export one training stage from a built dataset directory."""
    root = Path(datasets_dir)
    assembled = taskforge.AssembledDatasets()
    instruct_path = root / "cr_instruct.jsonl"
    if instruct_path.exists():
        assembled.cr_instruct = [
            taskforge.TaskInstance.from_record(r) for r in jsonio.read_jsonl(instruct_path)
        ]
    for kind in taskforge.TaskKind:
        sec_path = root / f"cr_sec_{kind.value}.jsonl"
        assembled.cr_sec[kind.value] = (
            [taskforge.TaskInstance.from_record(r) for r in jsonio.read_jsonl(sec_path)]
            if sec_path.exists()
            else []
        )
    mix_path = root / "cr_mix.jsonl"
    if mix_path.exists():
        assembled.cr_mix = [str(r["text"]) for r in jsonio.read_jsonl(mix_path)]
    sets = None
    if rationale_sets:
        sets = {
            r["instance_id"]: rationale.RationaleSet.from_record(r)
            for r in jsonio.read_jsonl(rationale_sets)
        }
    result = taskforge.export_training_files(
        assembled, stage, out_dir, max_sample_length=max_sample_length, rationale_sets=sets
    )
    for name, path in sorted(result.files.items()):
        click.echo(f"{name}: {result.record_counts[name]} records -> {path}")
    click.echo(f"truncated {result.truncated} records")


# -- augmentation ----------------------------------------------------------------


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--generator", "generator_profile", required=True)
@click.option("--k", default=3, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--temperature", default=rationale.DEFAULT_TEMPERATURE, show_default=True)
@click.option("--top-p", default=rationale.DEFAULT_TOP_P, show_default=True)
@click.option("--models", default=None, type=click.Path())
def augment(
    in_path: str,
    generator_profile: str,
    k: int,
    out_path: str,
    temperature: float,
    top_p: float,
    models: str | None,
) -> None:
    """Sample augmented answer variants for training instances."""
    generator = _load_handle(generator_profile, models)
    instances = _read_instances(in_path)
    eval_ids = [i.instance_id for i in instances if i.split is taskforge.Split.EVAL]
    if eval_ids:
        raise _fail(
            "refusing to augment evaluation-split instances: " + ", ".join(sorted(eval_ids)[:5])
        )
    sets = []
    for instance in instances:
        try:
            sets.append(
                rationale.augment_answer(
                    instance, generator, k=k, temperature=temperature, top_p=top_p
                )
            )
        except rationale.RationaleError as exc:
            logger.warning("skipping %s: %s", instance.instance_id, exc)
    jsonio.write_jsonl(out_path, [s.to_record() for s in sets])
    gaps = sum(s.gaps for s in sets)
    click.echo(f"augmented {len(sets)} instances (k={k}, {gaps} gaps) -> {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--embedder", "embedder_profile", required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--models", default=None, type=click.Path())
def diversity(in_path: str, embedder_profile: str, out_path: str, models: str | None) -> None:
    """Score embedding-distance novelty of augmented answers."""
    embedder = _load_handle(embedder_profile, models)
    reports = []
    for record in jsonio.read_jsonl(in_path):
        rset = rationale.RationaleSet.from_record(record)
        reports.append(rationale.diversity_gain(rset, embedder).to_record())
    jsonio.write_jsonl(out_path, reports)
    click.echo(f"scored {len(reports)} rationale sets -> {out_path}")


# -- model management -------------------------------------------------------------


@main.group()
def models() -> None:
    """Inspect and exercise model profiles."""


@models.command("list")
@click.option("--models", "models_path", default=None, type=click.Path())
def models_list(models_path: str | None) -> None:
    """List configured model profiles."""
    path = modelgateway.resolve_profiles_path(models_path)
    try:
        profiles = modelgateway.load_profiles(path)
    except modelgateway.ProfileError as exc:
        raise _fail(str(exc)) from exc
    click.echo(f"profiles from {path}:")
    for name, profile in sorted(profiles.items()):
        auth = f" auth={profile.auth_env}" if profile.auth_env else ""
        click.echo(
            f"  {name}: backend={profile.backend} model={profile.model_id}"
            f" parallel={profile.max_parallel}{auth}"
        )


@models.command("ping")
@click.option("--profile", "profile_name", required=True)
@click.option("--models", "models_path", default=None, type=click.Path())
def models_ping(profile_name: str, models_path: str | None) -> None:
    """Send one probe request through a profile."""
    handle = _load_handle(profile_name, models_path)
    try:
        response = modelgateway.complete_chat(handle, modelgateway.ChatRequest(user="ping"))
    except modelgateway.GatewayError as exc:
        raise _fail(str(exc)) from exc
    click.echo(f"{profile_name} ok: {response.text[:80]}")


# -- evaluation --------------------------------------------------------------------


@main.command("eval")
@click.option("--tasks", "tasks_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_profile", required=True)
@click.option("--n", default=10, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--temperature", default=0.8, show_default=True)
@click.option("--top-p", default=0.95, show_default=True)
@click.option("--hints", type=click.Choice([m.value for m in evalharness.HintMode]), default=None)
@click.option("--helper", "helper_profile", default=None, help="Profile for hint generation.")
@click.option("--root-causes", default=None, type=click.Path(exists=True), help="Catalog, one per line.")
@click.option("--models", default=None, type=click.Path())
def eval_cmd(
    tasks_path: str,
    model_profile: str,
    n: int,
    out_path: str,
    temperature: float,
    top_p: float,
    hints: str | None,
    helper_profile: str | None,
    root_causes: str | None,
    models: str | None,
) -> None:
    """Sample completions for evaluation tasks."""
    model = _load_handle(model_profile, models)
    instances = _read_instances(tasks_path)
    if hints:
        if not helper_profile:
            raise _fail("--hints needs --helper")
        helper = _load_handle(helper_profile, models)
        causes: tuple[str, ...] = ()
        if root_causes:
            causes = tuple(
                line.strip()
                for line in Path(root_causes).read_text(encoding="utf-8").splitlines()
                if line.strip()
            )
        instances = [
            evalharness.inject_expert_hints(
                instance, evalharness.HintMode(hints), helper, root_causes=causes
            )
            for instance in instances
        ]
    completions = evalharness.generate_completions(
        instances, model, n=n, temperature=temperature, top_p=top_p
    )
    jsonio.write_jsonl(out_path, [c.to_record() for c in completions])
    gaps = sum(1 for c in completions if c.gap)
    click.echo(f"sampled {len(completions)} completions ({gaps} gaps) -> {out_path}")


@main.command()
@click.option("--completions", "completions_path", required=True, type=click.Path(exists=True))
@click.option("--judge", "judge_profile", required=True)
@click.option("--tasks", "tasks_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--models", default=None, type=click.Path())
def judge(
    completions_path: str,
    judge_profile: str,
    tasks_path: str,
    out_path: str,
    models: str | None,
) -> None:
    """Judge completions against reference answers."""
    judge_handle = _load_handle(judge_profile, models)
    completions = [
        evalharness.CompletionRecord.from_record(r) for r in jsonio.read_jsonl(completions_path)
    ]
    references = {i.instance_id: i.reference_answer for i in _read_instances(tasks_path)}
    verdicts = evalharness.judge_completions(completions, references, judge_handle)
    jsonio.write_jsonl(out_path, [v.to_record() for v in verdicts])
    unscored = sum(1 for v in verdicts if v.unscored)
    click.echo(f"judged {len(verdicts)} completions ({unscored} unscored) -> {out_path}")


@main.command()
@click.option("--verdicts", "verdicts_path", required=True, type=click.Path(exists=True))
@click.option("--k", "ks_text", default="1,3,5", show_default=True, help="Comma-separated k values.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--exclude-unscored", is_flag=True)
@click.option("--figures", "figures_dir", default=None, type=click.Path(), help="Render PNG figures.")
def passk(
    verdicts_path: str,
    ks_text: str,
    out_path: str,
    exclude_unscored: bool,
    figures_dir: str | None,
) -> None:
    """Aggregate judge verdicts into a pass@k report."""
    try:
        ks = tuple(int(part) for part in ks_text.split(",") if part.strip())
    except ValueError as exc:
        raise _fail(f"bad --k value {ks_text!r}") from exc
    verdicts = [evalharness.JudgeVerdict.from_record(r) for r in jsonio.read_jsonl(verdicts_path)]
    try:
        report = evalharness.aggregate_passk(verdicts, ks, exclude_unscored=exclude_unscored)
    except ValueError as exc:
        raise _fail(str(exc)) from exc
    jsonio.write_json(out_path, report.to_record())
    for k in sorted(report.cumulative):
        average = report.cumulative[k] / report.instance_count if report.instance_count else 0.0
        click.echo(f"pass@{k}: cumulative {report.cumulative[k]:.6f}, average {average:.6f}")
    if figures_dir:
        from . import reporting

        click.echo("figure: " + reporting.save_passk_figure(report, Path(figures_dir) / "passk.png"))
        click.echo(
            "figure: "
            + reporting.save_score_histogram_figure(report, Path(figures_dir) / "scores.png")
        )


# -- analysis ---------------------------------------------------------------------


@main.group()
def analyze() -> None:
    """Behavioral analyses of specialized models."""


@analyze.command("tokens")
@click.option("--base", "base_path", required=True, type=click.Path(exists=True))
@click.option("--tuned", "tuned_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--floor", default=None, type=float, help="Override the 1/vocab probability floor.")
@click.option("--figures", "figures_dir", default=None, type=click.Path())
def analyze_tokens(
    base_path: str, tuned_path: str, out_path: str, floor: float | None, figures_dir: str | None
) -> None:
    """Compare token-behavior profiles of two probability dumps."""
    try:
        base_records, base_vocab, base_model = analysis.read_distribution_dump(base_path)
        tuned_records, tuned_vocab, tuned_model = analysis.read_distribution_dump(tuned_path)
        base_profile = analysis.token_behavior_profile(base_records, base_vocab, base_model)
        tuned_profile = analysis.token_behavior_profile(tuned_records, tuned_vocab, tuned_model)
        table = analysis.compare_profiles(base_profile, tuned_profile, floor=floor)
    except (analysis.AnalysisError, ValueError) as exc:
        raise _fail(str(exc)) from exc
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_tsv(), encoding="utf-8")
    new = sum(1 for r in table.rows if r.new_emphasis)
    click.echo(f"{len(table.rows)} tokens compared ({new} newly emphasized) -> {out_path}")
    if figures_dir:
        from . import reporting

        click.echo("figure: " + reporting.save_ratio_figure(table, Path(figures_dir) / "ratios.png"))


@main.command()
@click.option("--cases", "cases_path", required=True, type=click.Path(exists=True))
@click.option("--analyst", "analyst_profile", required=True)
@click.option("--verifier", "verifier_profile", required=True)
@click.option("--trials", default=10, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--accepted-out", "accepted_path", default=None, type=click.Path())
@click.option("--models", default=None, type=click.Path())
def attacks(
    cases_path: str,
    analyst_profile: str,
    verifier_profile: str,
    trials: int,
    out_path: str,
    accepted_path: str | None,
    models: str | None,
) -> None:
    """Check whether drafted analyses cover known attacks."""
    analyst = _load_handle(analyst_profile, models)
    verifier = _load_handle(verifier_profile, models)
    cases = [analysis.AttackCase.from_record(r) for r in jsonio.read_jsonl(cases_path)]
    table = analysis.attack_case_study(cases, analyst, verifier, trials=trials)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_tsv(), encoding="utf-8")
    detected = sum(1 for row in table.rows if row.detected)
    click.echo(f"detected {detected} of {len(table.rows)} attacks -> {out_path}")
    if accepted_path:
        jsonio.write_jsonl(
            accepted_path,
            [
                {
                    "attack_id": row.attack_id,
                    "trial": trial,
                    "analysis": text,
                    "verifier_reason": reason,
                }
                for row in table.rows
                for trial, text, reason in row.accepted
            ],
        )
        click.echo(f"accepted analyses -> {accepted_path}")


# -- annotation study ---------------------------------------------------------------


@main.group()
def anno() -> None:
    """Run and analyze two-round annotation studies."""


@anno.command("serve")
@click.option("--port", default=8321, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--study", "study_path", default=None, type=click.Path(exists=True))
@click.option("--log", "log_path", default=None, type=click.Path())
@click.option("--ui", "ui_dir", default=None, type=click.Path(exists=True), help="Static UI bundle.")
def anno_serve(
    port: int, host: str, study_path: str | None, log_path: str | None, ui_dir: str | None
) -> None:
    """Serve the annotation HTTP API (and optionally the browser UI)."""
    import uvicorn

    store = annoservice.StudyStore(log_path=log_path)
    if study_path:
        study_id = annoservice.import_study_records(
            store, annoservice.load_study_fixture(study_path)
        )
        click.echo(f"loaded study {study_id} from {study_path}")
    app = annoservice.create_app(store, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


@anno.command("report")
@click.option("--study", "study_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--figures", is_flag=True, help="Render PNG figures alongside the reports.")
def anno_report(study_path: str, out_dir: str, figures: bool) -> None:
    """Compute agreement, transition, and timing reports from a recorded study."""
    store = annoservice.StudyStore()
    study_id = annoservice.import_study_records(store, annoservice.load_study_fixture(study_path))
    agreement = store.compute_agreement(study_id)
    transitions = store.compute_transitions(study_id)
    timing = store.timing_report(study_id)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jsonio.write_json(out / "agreement.json", agreement.to_record())
    jsonio.write_json(out / "transitions.json", transitions.to_record())
    jsonio.write_json(out / "timing.json", timing.to_record())

    rows = ["annotator\tagreement_pct\tjudge_agreement_pct"]
    for annotator in agreement.per_annotator:
        rows.append(
            f"{annotator}\t{agreement.per_annotator[annotator]:g}"
            f"\t{agreement.llm_per_annotator[annotator]:g}"
        )
    rows.append(f"average\t{agreement.participant_average:g}\t{agreement.llm_average:g}")
    (out / "agreement.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    click.echo(
        f"study {study_id}: participant average {agreement.participant_average:g}%,"
        f" transitions {transitions.to_record()}"
    )
    if figures:
        from . import reporting

        click.echo("figure: " + reporting.save_agreement_figure(agreement, out / "agreement.png"))
        click.echo("figure: " + reporting.save_transitions_figure(transitions, out / "transitions.png"))
        click.echo("figure: " + reporting.save_timing_figure(timing, out / "timing.png"))


if __name__ == "__main__":
    main()
