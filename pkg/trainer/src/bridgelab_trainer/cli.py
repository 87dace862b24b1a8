"""bridgelab-trainer command line: sft, dpo, export, serve."""

from __future__ import annotations

import logging

import click

from .data import load_dpo, load_sft
from .serve import create_app, export_student
from .train import TrainConfig, train_dpo, train_sft

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main() -> None:
    """Train and serve the student rewriter."""


def _config(**overrides) -> TrainConfig:
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out", "output_path", required=True, type=click.Path())
@click.option("--base-model", default="tiny-byte-lm")
@click.option("--learning-rate", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--target-loss", type=float, default=None, help="Early stop below this per-token NLL.")
def sft(data_path, output_path, base_model, learning_rate, epochs, batch_size, seed, target_loss):
    """Supervised fine-tuning on SFT JSONL."""
    records = load_sft(data_path)
    config = _config(
        base_model=base_model,
        learning_rate=learning_rate,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        output_path=output_path,
        target_loss=target_loss,
    )
    result = train_sft(records, config)
    click.echo(f"records={len(records)} epochs={len(result.epoch_losses)} "
               f"final_per_token_loss={result.final_loss:.4f} artifact={result.artifact_path}")


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--reference", "reference_path", required=True, type=click.Path(exists=True),
              help="SFT artifact used as the frozen reference policy.")
@click.option("--out", "output_path", required=True, type=click.Path())
@click.option("--beta", type=float, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
def dpo(data_path, reference_path, output_path, beta, learning_rate, epochs, batch_size, seed):
    """Preference optimization on DPO JSONL against a frozen reference."""
    records = load_dpo(data_path)
    config = _config(
        beta=beta,
        learning_rate=learning_rate,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        output_path=output_path,
    )
    result = train_dpo(records, reference_path, config)
    click.echo(f"pairs={len(records)} epochs={len(result.epoch_losses)} "
               f"final_mean_pair_loss={result.final_loss:.4f} artifact={result.artifact_path}")


@main.command()
@click.option("--artifact", required=True, type=click.Path())
@click.option("--base-url", default="http://127.0.0.1:8731")
@click.option("--model-id", default="bridgelab-student")
@click.option("--out", "descriptor_path", required=True, type=click.Path())
def export(artifact, base_url, model_id, descriptor_path):
    """Write the serving descriptor for a trained artifact."""
    descriptor = export_student(artifact, base_url, model_id, descriptor_path)
    click.echo(f"descriptor={descriptor_path} base_url={descriptor['base_url']} "
               f"model_id={descriptor['model_id']}")


@main.command()
@click.option("--artifact", required=True, type=click.Path(exists=True))
@click.option("--model-id", default="bridgelab-student")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8731)
def serve(artifact, model_id, host, port):
    """Serve the student on an OpenAI-compatible endpoint."""
    import uvicorn

    uvicorn.run(create_app(artifact, model_id), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
