"""Command-line entry points: solve, index-corpus, replay, report."""

from __future__ import annotations

import json
import shlex
import sys
from pathlib import Path

import click

from .backend import HttpBackend, ScriptedBackend, ScriptedTranscript, TokenLedger
from .errors import RoundtableError
from .harness import (
    TrialOutcome,
    aggregate,
    grade_result,
    human_report,
    load_dataset,
    machine_report,
)
from .memory import corpus_from_jsonl, corpus_to_jsonl, EpisodicCorpus
from .orchestrator import (
    SolveConfig,
    replay_transcript,
    solve_dataset,
    write_transcript,
)
from .prompts import registry_hash
from .toolproc import ProcessRunner


@click.group()
def main():
    """Multi-agent deliberation engine."""


def _build_backend(kind: str, model: str, transcript: str | None):
    if kind == "scripted":
        if not transcript:
            raise click.UsageError("--backend scripted needs --transcript")
        return ScriptedBackend(ScriptedTranscript.from_jsonl(transcript), model=model)
    return HttpBackend(model=model)


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False),
              help="Exemplar corpus (JSON Lines); required for external retrieval.")
@click.option("--mode", type=click.Choice(["plus", "minus"]), default="plus",
              show_default=True, help="plus grows the corpus with solved problems.")
@click.option("--agents", "agents_m", type=int, default=3, show_default=True)
@click.option("--iterations", type=int, default=2, show_default=True,
              help="Refinement budget I; the loop runs up to I+1 rounds.")
@click.option("--k", "retrieval_k", type=int, default=5, show_default=True)
@click.option("--temperature", type=float, default=0.2, show_default=True)
@click.option("--backend", "backend_kind", type=click.Choice(["http", "scripted"]),
              default="http", show_default=True)
@click.option("--judge", type=click.Choice(["auto", "simulated", "sandbox"]),
              default="auto", show_default=True,
              help="auto picks sandbox when a runner is configured.")
@click.option("--trials", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--retrieval", type=click.Choice(["external", "self", "none"]),
              default="external", show_default=True)
@click.option("--transcript", type=click.Path(exists=True, dir_okay=False),
              help="Canned responses for the scripted backend.")
@click.option("--model", default="gpt-4o", show_default=True)
@click.option("--runner-cmd", help="Command spawning the execution service, "
              "e.g. 'python -m runbox'.")
def solve(dataset, corpus, mode, agents_m, iterations, retrieval_k, temperature,
          backend_kind, judge, trials, seed, out, retrieval, transcript, model, runner_cmd):
    """Solve every problem in a dataset and write reports and transcripts."""
    problems = load_dataset(dataset)
    if retrieval == "external" and not corpus:
        raise click.UsageError("external retrieval needs --corpus")

    runner = ProcessRunner(shlex.split(runner_cmd)) if runner_cmd else None
    if judge == "auto":
        judge = "sandbox" if runner else "simulated"
    if judge == "sandbox" and runner is None and any(p.kind == "code" for p in problems):
        raise click.UsageError("sandbox judging needs --runner-cmd")

    config = SolveConfig(
        m=agents_m,
        max_iterations=iterations,
        retrieval_k=retrieval_k,
        temperature=temperature,
        mode=mode,
        retrieval=retrieval,
        judge_execution=judge,
        seed=seed,
    )
    backend = _build_backend(backend_kind, model, transcript)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    trial_outcomes = []
    results_by_trial = []
    ledger = TokenLedger()
    final_corpus = None
    try:
        for trial_no in range(trials):
            run_corpus = corpus_from_jsonl(corpus) if corpus else EpisodicCorpus()
            results, run_corpus = solve_dataset(
                problems, config, run_corpus, backend, tool_runner=runner, ledger=ledger
            )
            results_by_trial.append(results)
            final_corpus = run_corpus

            verdicts, answers, kinds = {}, {}, {}
            problem_by_id = {p.id: p for p in problems}
            transcripts_dir = out_dir / "transcripts" / f"trial{trial_no:02d}"
            transcripts_dir.mkdir(parents=True, exist_ok=True)
            for result in results:
                problem = problem_by_id[result.problem_id]
                verdicts[result.problem_id] = grade_result(problem, result, runner)
                answers[result.problem_id] = (
                    result.answer.answer if result.answer else None
                )
                kinds[result.problem_id] = problem.kind
                write_transcript(
                    transcripts_dir / f"{result.problem_id}.jsonl",
                    problem, config, result.exemplars_used, result,
                )
            trial_outcomes.append(
                TrialOutcome(verdicts=verdicts, answers=answers, kinds=kinds)
            )
    finally:
        if runner:
            runner.close()

    report = aggregate(trial_outcomes)
    report_obj = machine_report(
        config_dict=config.to_dict(),
        seed=seed,
        template_hash=registry_hash(),
        backend_desc={"kind": backend_kind, "model": model},
        problems=problems,
        trials=trial_outcomes,
        results_by_trial=results_by_trial,
        report=report,
        ledger_dict=ledger.to_dict(),
    )
    (out_dir / "report.json").write_text(
        json.dumps(report_obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    text = human_report(report_obj)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    if mode == "plus" and final_corpus is not None:
        corpus_to_jsonl(final_corpus, out_dir / "corpus.final.jsonl")
    click.echo(text, nl=False)

    failed = [
        r.problem_id for results in results_by_trial for r in results if r.failed
    ]
    if failed:
        click.echo(f"terminal failures: {sorted(set(failed))}", err=True)
        sys.exit(1)


@main.command("index-corpus")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
def index_corpus(corpus):
    """Build the retrieval index sidecar for a corpus file."""
    loaded = corpus_from_jsonl(corpus)
    sidecar = Path(corpus).with_suffix(Path(corpus).suffix + ".idx")
    loaded.save_index(sidecar)
    click.echo(f"indexed {len(loaded)} documents -> {sidecar}")


@main.command()
@click.option("--transcript", required=True, type=click.Path(exists=True, dir_okay=False))
def replay(transcript):
    """Re-run a recorded problem against its own transcript and diff."""
    ok, diffs = replay_transcript(transcript)
    if ok:
        click.echo("replay OK: transcript reproduced exactly")
    else:
        click.echo("replay MISMATCH:", err=True)
        for d in diffs[:20]:
            click.echo(f"  {d}", err=True)
        sys.exit(1)


@main.command()
@click.option("--runs", required=True, type=click.Path(exists=True, file_okay=False))
def report(runs):
    """Summarize every report.json found under a directory."""
    paths = sorted(Path(runs).rglob("report.json"))
    if not paths:
        raise click.UsageError(f"no report.json under {runs}")
    for path in paths:
        obj = json.loads(path.read_text(encoding="utf-8"))
        metric = obj["metric"]
        click.echo(
            f"{path.parent.name:<24} trials={obj['trial_count']} "
            f"accuracy={metric['mean_pct']}% +/- {metric['sd_pct']}%"
        )


if __name__ == "__main__":
    main()
