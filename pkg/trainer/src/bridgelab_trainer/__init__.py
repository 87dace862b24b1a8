"""bridgelab-trainer: fine-tune and serve a small student rewriter from
bridgelab SFT/DPO JSONL exports."""

from .data import DpoExample, SftExample, load_dpo, load_sft
from .model import ByteLM, build_model, greedy_decode, load_artifact, save_artifact
from .train import TrainConfig, TrainResult, train_dpo, train_sft

__version__ = "0.1.0"

__all__ = [
    "DpoExample",
    "SftExample",
    "load_dpo",
    "load_sft",
    "ByteLM",
    "build_model",
    "greedy_decode",
    "load_artifact",
    "save_artifact",
    "TrainConfig",
    "TrainResult",
    "train_dpo",
    "train_sft",
    "__version__",
]
