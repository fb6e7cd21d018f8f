"""Command-line surface: one subcommand per stage plus `run` for the whole
pipeline."""

from __future__ import annotations

import logging
import sys

import click

from .config import load_config
from .errors import FaultloomError
from .pipeline import Runner

logger = logging.getLogger(__name__)


def _runner(config_path: str, **overrides) -> Runner:
    mapped = {
        "mode": overrides.get("mode"),
        "model": overrides.get("model"),
        "seed": overrides.get("seed"),
        "parallelism": overrides.get("parallelism"),
        "out": overrides.get("out"),
    }
    config = load_config(config_path, overrides=mapped)
    return Runner(config)


common_options = [
    click.option("--config", "config_path", required=True, type=click.Path(exists=True)),
    click.option("--mode", type=click.Choice(["live", "record", "replay"]), default=None),
    click.option("--model", default=None),
    click.option("--seed", type=int, default=None),
    click.option("--parallelism", type=int, default=None),
    click.option("--out", default=None),
]


def with_common_options(fn):
    for option in reversed(common_options):
        fn = option(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool) -> None:
    """Automated empirical software-fault study pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _invoke(step_name: str, config_path: str, **overrides) -> None:
    try:
        runner = _runner(config_path, **overrides)
        step = {
            "ingest": runner.run_corpus,
            "import": runner.run_corpus,
            "sample": runner.run_sample,
            "define": runner.run_define,
            "filter": runner.run_filter,
            "classify": runner.run_classify,
            "evaluate": runner.run_evaluate,
        }[step_name]
        artifact = step()
        click.echo(f"{step_name}: wrote {artifact}")
    except FaultloomError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


for _name, _help in (
    ("ingest", "Fetch issues from the configured repos into the corpus artifact."),
    ("import", "Import configured offline dumps into the corpus artifact."),
    ("sample", "Draw the balanced evaluation sample from the corpus."),
    ("define", "Run research definition: elicit and score a study plan."),
    ("filter", "Run fault-related issue filtering over the sample."),
    ("classify", "Run taxonomy-anchored symptom/root-cause classification."),
    ("evaluate", "Score stage outputs against gold labels and write the report."),
):
    def _make(name: str, help_text: str):
        @main.command(name=name, help=help_text)
        @with_common_options
        def _cmd(config_path, mode, model, seed, parallelism, out, _name=name):
            _invoke(_name, config_path, mode=mode, model=model, seed=seed,
                    parallelism=parallelism, out=out)
        return _cmd

    _make(_name, _help)


@main.command(help="Regenerate report files from a finished run directory.")
@with_common_options
def report(config_path, mode, model, seed, parallelism, out):
    try:
        runner = _runner(config_path, mode=mode, model=model, seed=seed,
                         parallelism=parallelism, out=out)
        for needed in ("filter", "classify"):
            runner.require_artifact(needed, "report")
        runner.write_report(runner.build_report())
        click.echo(f"report: wrote {runner.artifact('evaluate')}")
    except FaultloomError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command(help="Run the full pipeline end to end.")
@with_common_options
def run(config_path, mode, model, seed, parallelism, out):
    try:
        runner = _runner(config_path, mode=mode, model=model, seed=seed,
                         parallelism=parallelism, out=out)
        report_obj = runner.run_pipeline()
        click.echo(f"run: report at {runner.artifact('evaluate')}")
        if report_obj.stage2:
            click.echo(f"stage2 accuracy: {report_obj.stage2.accuracy:.4f}")
        if report_obj.stage3_symptom:
            click.echo(f"stage3 symptom accuracy: {report_obj.stage3_symptom.accuracy:.4f}")
        if report_obj.stage3_rootcause:
            click.echo(f"stage3 root-cause accuracy: {report_obj.stage3_rootcause.accuracy:.4f}")
    except FaultloomError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
