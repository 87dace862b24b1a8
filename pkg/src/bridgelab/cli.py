"""bridgelab command line: dataset generation, evaluation, splitting, and
the derivation verification lab."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import build_gateway, load_config
from .core import load_dataset, save_dataset
from .derivation import verify_worlds
from .harness import PipelineSpec, evaluate, save_report, split_ext_abs
from .preference import CompositionPolicy, generate_dpo_dataset, save_dpo_records
from .supervision import (
    generate_sft_dataset,
    load_sft_records,
    parse_rewrite_set,
    save_sft_records,
)
from .synthetic import generate_corpus

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


@click.group()
def main() -> None:
    """Relevance-to-utility bridging toolkit."""


def _gateway(config_path: str | None, concurrency: int | None = None):
    config = load_config(config_path)
    if concurrency is not None:
        from dataclasses import replace

        config = replace(config, gateway=replace(config.gateway, concurrency=concurrency))
    return config, build_gateway(config)


@main.command("gen-sft")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--teacher-model", required=True)
@click.option("--concurrency", type=int, default=None, help="Override the configured cap.")
@click.option("--filter-by-answer-f1", is_flag=True, default=False)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def gen_sft(dataset_path, out_path, teacher_model, concurrency, filter_by_answer_f1, config_path):
    """Fan out rewrite calls over a dataset and write SFT JSONL."""
    config, gateway = _gateway(config_path, concurrency)
    examples = load_dataset(dataset_path)
    records, stats = generate_sft_dataset(
        examples,
        gateway,
        teacher_model,
        filter_by_answer_f1=filter_by_answer_f1,
        max_tokens=config.generation.rewrite_max_tokens,
    )
    save_sft_records(records, out_path)
    click.echo(
        f"examples={stats.examples} calls={stats.calls} records={stats.records} "
        f"parse_failures={stats.parse_failures} dropped_incomplete={stats.dropped_incomplete} "
        f"dropped_by_filter={stats.dropped_by_filter}"
    )
    if stats.dropped_incomplete or stats.parse_failures:
        sys.exit(EXIT_PARTIAL)


@main.command("gen-dpo")
@click.option("--rewrites", "rewrites_path", required=True, type=click.Path(exists=True),
              help="SFT JSONL whose targets carry the rewrite sets.")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--generator-model", required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--naive", is_flag=True, default=False,
              help="Individual-document pairs only (C singletons vs A singletons).")
@click.option("--pairs-per-example", type=int, default=4)
@click.option("--max-sets-per-family", type=int, default=8)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def gen_dpo(rewrites_path, dataset_path, generator_model, out_path, seed, naive,
            pairs_per_example, max_sets_per_family, config_path):
    """Score rewrites, compose labeled sets, and write DPO pair JSONL."""
    config, gateway = _gateway(config_path)
    examples = load_dataset(dataset_path)
    by_id = {ex.id: ex for ex in examples}
    rewrite_sets = {}
    for record in load_sft_records(rewrites_path):
        example = by_id.get(record.id)
        if example is None:
            continue
        parsed = parse_rewrite_set(record.target, example)
        if parsed is not None:
            rewrite_sets[record.id] = parsed
    records, stats = generate_dpo_dataset(
        examples,
        rewrite_sets,
        gateway,
        generator_model,
        policy=CompositionPolicy(max_per_family=max_sets_per_family),
        pairs_per_example=pairs_per_example,
        seed=seed,
        naive=naive,
    )
    save_dpo_records(records, out_path)
    click.echo(
        f"examples={stats.examples} sets_labeled={stats.sets_labeled} "
        f"sets_discarded={stats.sets_discarded} pools_too_small={stats.pools_too_small} "
        f"pairs={stats.pairs}"
    )


@main.command("eval")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--pipeline", "mode", type=click.Choice(["naive", "bridged"]), required=True)
@click.option("--generator-model", required=True)
@click.option("--bridge-model", default=None)
@click.option("--bridge-style", type=click.Choice(["student", "teacher"]), default="student")
@click.option("--judge-model", default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def eval_cmd(dataset_path, mode, generator_model, bridge_model, bridge_style, judge_model,
             out_path, config_path):
    """Run a pipeline over a dataset and write the comparison report."""
    config, gateway = _gateway(config_path)
    examples = load_dataset(dataset_path)
    spec = PipelineSpec(
        mode=mode,
        generator_model=generator_model,
        bridge_model=bridge_model,
        bridge_style=bridge_style,
    )
    report = evaluate(
        examples,
        [spec],
        gateway,
        dataset_name=Path(dataset_path).stem,
        judge_model=judge_model,
        answer_max_tokens=config.generation.answer_max_tokens,
        rewrite_max_tokens=config.generation.rewrite_max_tokens,
    )
    save_report(report, out_path)
    click.echo(report.render_table())
    if any(res.errors for res in report.pipelines):
        sys.exit(EXIT_PARTIAL)


@main.command("split-ext-abs")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out-ext", required=True, type=click.Path())
@click.option("--out-abs", required=True, type=click.Path())
def split_cmd(in_path, out_ext, out_abs):
    """Partition a dataset into extractive and abstractive answer types."""
    n_ext, n_abs = split_ext_abs(in_path, out_ext, out_abs)
    click.echo(f"extractive={n_ext} abstractive={n_abs}")


@main.group()
def lab() -> None:
    """Exact verification of the bridging derivation on toy worlds."""


@lab.command("verify")
@click.option("--worlds", type=int, default=1000)
@click.option("--seed", type=int, default=0)
@click.option("--report", "report_path", type=click.Path(), default=None)
def lab_verify(worlds, seed, report_path):
    """Check the factorization and importance identities on random worlds."""
    summary = verify_worlds(worlds, seed)
    click.echo(json.dumps(summary, indent=2))
    if report_path:
        Path(report_path).write_text(json.dumps(summary, indent=2), "utf-8")
    if not summary["passed"]:
        sys.exit(EXIT_FATAL)


@main.command("synth")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("-n", "--num-examples", type=int, default=50)
@click.option("--seed", type=int, default=0)
def synth_cmd(out_path, num_examples, seed):
    """Write a deterministic synthetic corpus for offline runs and demos."""
    save_dataset(generate_corpus(num_examples, seed=seed), out_path)
    click.echo(f"wrote {num_examples} examples to {out_path}")


if __name__ == "__main__":
    main()
