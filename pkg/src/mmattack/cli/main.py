"""``mmattack`` command line: train, attack, matrix, angles, sweep, report.

Exit codes: 0 success, 1 usage error, 2 training below the accuracy floors
(the checkpoint is still written), 3 every requested setting failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import multiprocessing
import sys
import time
from pathlib import Path

import numpy as np

from mmattack.co_attack import perturbation_vectors
from mmattack.encoders.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mmattack.encoders.corpus import decode_ids, load_lexicon, synthesize_corpus
from mmattack.encoders.model import FUSED
from mmattack.encoders.train import train_toy_vlp
from mmattack.eval import (
    AttackSetting,
    MetricsReport,
    alpha_sweep,
    angles_between,
    baseline_settings,
    eval_indices,
    grid_settings,
    read_report,
    run_attack_matrix,
    vanilla_setting,
    write_report,
)
from mmattack.eval.metrics import budgets_dict
from mmattack.eval.settings import CO_ATTACK
from mmattack.targets import MULTIMODAL, UNIMODAL

from .config import ConfigError, ExperimentConfig, defaults_help, load_config

log = logging.getLogger("mmattack")

EXIT_OK, EXIT_USAGE, EXIT_TRAIN, EXIT_ALL_FAILED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 means training failure here
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, checkpoint: bool = True) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help="output directory (config key: out)")
    p.add_argument("--seed", type=int, help="root seed (config key: seed)")
    p.add_argument("--workers", type=int, default=1, help="worker processes, one setting each (default 1)")
    if checkpoint:
        p.add_argument("--checkpoint", help="MMAL1 checkpoint (default: <out>/model.mmal)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="mmattack",
        description="Adversarial attacks on toy fused and aligned vision-language models.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys and defaults:\n" + defaults_help(),
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", help="synthesize the corpus and train a model")
    _common(p)
    p = sub.add_parser("attack", help="attack the evaluation split and save the adversarial pairs")
    _common(p)
    p.add_argument("--setting", action="append", default=[], help="setting name (repeatable; default eval.settings)")
    p = sub.add_parser("matrix", help="ASR for every requested setting")
    _common(p)
    p = sub.add_parser("angles", help="angle histograms between image and text perturbations")
    _common(p)
    p = sub.add_parser("sweep", help="Co-Attack ASR over alpha")
    _common(p)
    p.add_argument("--alphas", help="comma-separated alphas (config key: eval.alphas)")
    p = sub.add_parser("report", help="merge finished report directories")
    _common(p, checkpoint=False)
    p.add_argument("runs", nargs="+", help="directories written by matrix, angles, sweep or attack")
    return parser


def _assignments(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def resolve_config(args) -> ExperimentConfig:
    overrides = _assignments(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "alphas", None):
        overrides["eval.alphas"] = args.alphas
    return load_config(args.config, overrides)


def resolve_settings(names, kind: str) -> list[AttackSetting]:
    out: list[AttackSetting] = []
    for name in names:
        if name == "grid":
            batch = grid_settings(kind)
        elif name == "baselines":
            batch = baseline_settings(kind)
        elif name == "all":
            batch = grid_settings(kind) + baseline_settings(kind)
        else:
            try:
                batch = [AttackSetting.parse(name)]
            except ValueError as exc:
                raise UsageError(str(exc)) from None
        out.extend(s for s in batch if s not in out)
    return out


def _checkpoint_path(args, cfg: ExperimentConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "model.mmal"


def _load_model(args, cfg: ExperimentConfig):
    path = _checkpoint_path(args, cfg)
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        model, meta = load_checkpoint(path)
    except CheckpointError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if model.kind != cfg.kind or model.config != cfg.model:
        log.info("using the %s model described by %s", model.kind, path)
    # the checkpoint decides the model half of the echoed config
    return model, dataclasses.replace(cfg, kind=model.kind, model=model.config), meta


def _lexicon(cfg: ExperimentConfig):
    if not cfg.lexicon:
        return None
    try:
        return load_lexicon(cfg.lexicon)
    except (OSError, ValueError) as exc:
        raise UsageError(f"lexicon {cfg.lexicon}: {exc}") from None


def _write_config(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())


# -- fan-out over settings -----------------------------------------------------

_JOB: dict = {}


def _run_job(i: int):
    job = _JOB
    kept = {}
    keep = (lambda name, outcome: kept.__setitem__(name, outcome)) if job["keep"] else None
    report = job["fn"](job["items"][i], keep)
    return report, kept


def fan_out(items: list, fn, workers: int, keep: bool = False):
    """Run ``fn(item, on_outcome)`` for each item and merge in item order.

    Every item draws from its own named random stream, so the merged result
    does not depend on the worker count.
    """
    _JOB.update(fn=fn, items=items, keep=keep)
    try:
        if workers > 1 and len(items) > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(min(workers, len(items))) as pool:
                parts = pool.map(_run_job, range(len(items)))
        else:
            parts = [_run_job(i) for i in range(len(items))]
    finally:
        _JOB.clear()
    report, kept = MetricsReport(), {}
    for part, outcomes in parts:
        report = report.merge(part)
        kept.update(outcomes)
    return report, kept


def _matrix(model, cfg, settings, lexicon, workers, keep=False):
    corpus = synthesize_corpus(cfg.seed, cfg.n_pairs)

    def one(setting, on_outcome):
        return run_attack_matrix(
            model, corpus, [setting], cfg.co_attack, cfg.seed, cfg.n_eval, cfg.k, lexicon, on_outcome=on_outcome
        )

    report, kept = fan_out(settings, one, workers, keep)
    report.seeds, report.budgets = [cfg.seed], budgets_dict(cfg.co_attack)
    return corpus, report, kept


def _finish(report: MetricsReport, cfg: ExperimentConfig, started: float) -> int:
    out = Path(cfg.out)
    write_report(report, out, cfg.flat())
    _write_config(cfg, out)
    log.info("wrote %s in %.1fs", out, time.perf_counter() - started)
    if report.rows and all(r["error"] for r in report.rows):
        log.error("every setting failed")
        return EXIT_ALL_FAILED
    return EXIT_OK


# -- subcommands ---------------------------------------------------------------


def cmd_train(args, cfg: ExperimentConfig) -> int:
    started = time.perf_counter()
    corpus = synthesize_corpus(cfg.seed, cfg.n_pairs)
    result = train_toy_vlp(corpus, cfg.kind, cfg.train_config, cfg.model)
    path = _checkpoint_path(args, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"metrics": result.metrics, "passed": result.passed, "seed": cfg.seed, "n_pairs": cfg.n_pairs}
    save_checkpoint(result.model, path, meta)
    out = Path(cfg.out)
    _write_config(cfg, out)
    lines = [f"epoch {i} loss {loss!r}" for i, loss in enumerate(result.history)]
    lines.append(result.diagnostic())
    (out / "train.log").write_text("\n".join(lines) + "\n")
    log.info("trained %s model in %.1fs; %s", cfg.kind, time.perf_counter() - started, result.diagnostic())
    if not result.passed:
        print(f"training failed: {result.diagnostic()}", file=sys.stderr)
        return EXIT_TRAIN
    return EXIT_OK


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def cmd_attack(args, cfg: ExperimentConfig) -> int:
    started = time.perf_counter()
    model, cfg, _ = _load_model(args, cfg)
    settings = resolve_settings(args.setting or cfg.settings, model.kind)
    corpus, report, kept = _matrix(model, cfg, settings, _lexicon(cfg), args.workers, keep=True)
    indices = eval_indices(corpus, cfg.n_eval)
    for name, outcome in kept.items():
        d = Path(cfg.out) / "adversarial" / _safe(name)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "images.npy", np.asarray(outcome.images, dtype=np.float64))
        texts = [
            {
                "index": int(i),
                "clean": list(map(int, corpus.captions[i])),
                "adversarial": list(map(int, adv)),
                "clean_text": decode_ids(corpus.captions[i]),
                "adversarial_text": decode_ids(adv),
            }
            for i, adv in zip(indices, outcome.texts)
        ]
        (d / "texts.json").write_text(json.dumps(texts, indent=1) + "\n")
    return _finish(report, cfg, started)


def cmd_matrix(args, cfg: ExperimentConfig) -> int:
    started = time.perf_counter()
    model, cfg, _ = _load_model(args, cfg)
    settings = resolve_settings(cfg.settings, model.kind)
    _, report, _ = _matrix(model, cfg, settings, _lexicon(cfg), args.workers)
    return _finish(report, cfg, started)


def angle_spaces(kind: str) -> tuple[str, ...]:
    return (MULTIMODAL, UNIMODAL) if kind == FUSED else (UNIMODAL,)


def cmd_angles(args, cfg: ExperimentConfig) -> int:
    """Vanilla and Co-Attack angles in every space the model has (up to four series)."""
    started = time.perf_counter()
    model, cfg, _ = _load_model(args, cfg)
    settings = [vanilla_setting(model.kind), AttackSetting(method=CO_ATTACK)]
    corpus, report, kept = _matrix(model, cfg, settings, _lexicon(cfg), args.workers, keep=True)
    indices = eval_indices(corpus, cfg.n_eval)
    images, texts = corpus.images[indices], [list(corpus.captions[i]) for i in indices]
    report.angles, report.skipped_angles = {}, {}
    for setting, label in zip(settings, ("Vanilla", "CoAttack")):
        for space in angle_spaces(model.kind):
            series = f"{label}.{space}"
            samples, skipped = [], 0
            if setting.name in kept:
                slice_ = cfg.angle_slice if space == MULTIMODAL else "cls"
                d_i, d_t, d_it = perturbation_vectors(model, images, texts, kept[setting.name], space, slice_)
                samples, skipped = angles_between(d_i, d_t, d_it)
            report.angles[series] = samples
            report.skipped_angles[series] = skipped
    return _finish(report, cfg, started)


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    started = time.perf_counter()
    model, cfg, _ = _load_model(args, cfg)
    alphas = sorted(set(cfg.alphas))
    if not alphas:
        raise UsageError("eval.alphas is empty")
    corpus = synthesize_corpus(cfg.seed, cfg.n_pairs)
    lexicon = _lexicon(cfg)

    def one(alpha, _on_outcome):
        return alpha_sweep(model, corpus, [alpha], cfg.co_attack, cfg.seed, cfg.n_eval, cfg.k, lexicon)

    report, _ = fan_out(alphas, one, args.workers)
    report.seeds, report.budgets = [cfg.seed], budgets_dict(cfg.co_attack)
    return _finish(report, cfg, started)


def cmd_report(args, cfg: ExperimentConfig) -> int:
    started = time.perf_counter()
    report = MetricsReport()
    for run in args.runs:
        try:
            part = read_report(run)
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot read report {run}: {exc}") from None
        report = report.merge(part)
    return _finish(report, cfg, started)


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "matrix": cmd_matrix,
    "angles": cmd_angles,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"mmattack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
