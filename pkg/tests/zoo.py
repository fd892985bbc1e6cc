"""Trained toy models shared by the slow tests, cached as MMAL1 checkpoints.

Training a fused model takes a few minutes on one core, so checkpoints go
to ``$MMATTACK_MODEL_CACHE`` (default ``<repo>/.cache/models``) and are
reused while the configs below stay the same.
"""

from __future__ import annotations

import hashlib
import json
import os
from functools import lru_cache
from pathlib import Path

from mmattack.encoders.checkpoint import load_checkpoint, save_checkpoint
from mmattack.encoders.corpus import ToyCorpus, synthesize_corpus
from mmattack.encoders.model import ModelConfig
from mmattack.encoders.train import TrainConfig, TrainingFailure, train_toy_vlp

SEEDS = (0, 1, 2, 3, 4)
N_PAIRS = 2000
CACHE_TAG = "v1"


def cache_dir() -> Path:
    default = Path(__file__).resolve().parents[1] / ".cache" / "models"
    path = Path(os.environ.get("MMATTACK_MODEL_CACHE", default))
    path.mkdir(parents=True, exist_ok=True)
    return path


@lru_cache(maxsize=None)
def corpus(seed: int) -> ToyCorpus:
    return synthesize_corpus(seed, N_PAIRS)


def _key(kind: str, seed: int, tc: TrainConfig, mc: ModelConfig) -> str:
    blob = json.dumps([CACHE_TAG, kind, seed, N_PAIRS, tc.to_dict(), mc.to_dict()], sort_keys=True)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def checkpoint_path(kind: str, seed: int) -> Path:
    tc, mc = TrainConfig(seed=seed), ModelConfig()
    return cache_dir() / f"{kind}-seed{seed}-{_key(kind, seed, tc, mc)}.mmal"


@lru_cache(maxsize=None)
def trained(kind: str, seed: int):
    """``(model, clean metrics)``; raises TrainingFailure if the floors are missed."""
    tc, mc = TrainConfig(seed=seed), ModelConfig()
    path = checkpoint_path(kind, seed)
    if path.exists():
        model, meta = load_checkpoint(path)
        return model, meta["metrics"]
    result = train_toy_vlp(corpus(seed), kind, tc, mc)
    if not result.passed:
        raise TrainingFailure(result)
    save_checkpoint(result.model, path, {"metrics": result.metrics, "seed": seed})
    return result.model, result.metrics


if __name__ == "__main__":
    import sys
    import time

    for seed in SEEDS:
        for kind in sys.argv[1:] or ("aligned", "fused"):
            t = time.time()
            try:
                _, metrics = trained(kind, seed)
                print(kind, seed, metrics, f"{time.time() - t:.0f}s", flush=True)
            except TrainingFailure as exc:
                print(kind, seed, "FAILED", exc, flush=True)
