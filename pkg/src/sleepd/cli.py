from __future__ import annotations

import json
import logging
import sys

import click

from . import pipeline
from .config import load_config
from .datasets import load_examples, swe_file_f1
from .store import ContextStore


def _echo(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True, default=str))


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose: int) -> None:
    """Sleep-time compute: derive contexts offline, then answer queries against them under token budgets."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_path", type=click.Path(dir_okay=False))
@click.option("--overrides", "overrides_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Line-delimited {id, context, question} records that bypass splitting.")
def split(input_path: str, output_path: str, overrides_path: str | None) -> None:
    """Split {id, problem, answer} records into stateful (context, question) records."""
    _echo(pipeline.cmd_split(input_path, output_path, overrides_path))


@main.command("import-dataset")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["stateful", "multi_query", "swe"]), default="stateful",
              show_default=True)
@click.option("--store", "store_dir", type=click.Path(file_okay=False), default=None,
              help="Store directory to import contexts into; omit to only validate.")
def import_dataset(path: str, fmt: str, store_dir: str | None) -> None:
    """Validate a record file and report its counts; with --store, also store its contexts."""
    if fmt == "swe":
        loaded = load_examples(path, "swe")
        scores = [swe_file_f1(r.predicted_files, r.truth_files).f1 for r in loaded.records]
        mean = float(sum(scores) / len(scores)) if scores else None
        _echo({**loaded.stats, "mean_f1": mean})
        return
    if store_dir is None:
        _echo(load_examples(path, fmt).stats)
    else:
        _echo(pipeline.cmd_import(ContextStore(store_dir), path, fmt))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--context-id", "context_ids", multiple=True,
              help="Context ids to process (repeatable). Default: every context in the dataset.")
def sleep(config_path: str, context_ids: tuple[str, ...]) -> None:
    """Run sleep-time compute and attach derived versions to the store."""
    cfg = load_config(config_path)
    store = ContextStore(cfg.path(cfg.store_dir))
    summary = pipeline.cmd_sleep(cfg, store, cfg.make_backend(), list(context_ids) or None)
    _echo(summary)
    if summary["failures"]:
        sys.exit(1)


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--dry-run", is_flag=True, help="Print the resolved condition matrix and exit.")
def eval_(config_path: str, dry_run: bool) -> None:
    """Evaluate the condition matrix (resumable) and write report files."""
    cfg = load_config(config_path)
    plan = pipeline.plan_eval(cfg)
    if dry_run:
        _echo({"conditions": plan.describe(), "pairs": len(plan.pairs())})
        return
    store = ContextStore(cfg.path(cfg.store_dir))
    _echo(pipeline.cmd_eval(cfg, store, cfg.make_backend(), plan))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
def report(config_path: str) -> None:
    """Rebuild report files from the eval checkpoint."""
    cfg = load_config(config_path, validate=False)
    _echo({"reports": pipeline.cmd_report(cfg, ContextStore(cfg.path(cfg.store_dir)))})


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True, type=int)
def serve(config_path: str, host: str, port: int) -> None:
    """Run the HTTP service over the configured store and backend."""
    import uvicorn

    from .service import create_app

    cfg = load_config(config_path)
    app = create_app(ContextStore(cfg.path(cfg.store_dir)), cfg.make_backend(), cfg.sleep_config())
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
