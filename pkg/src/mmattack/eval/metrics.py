"""Attack success rates, perturbation angles, the attack matrix and the alpha sweep.

Retrieval ASR: among queries whose ground truth is in the top ``k`` before
the attack, the fraction pushed out of the top ``k`` once the query's pair
(the query and its ground-truth item) is replaced by the adversarial pair.

Entailment ASR: among matched pairs predicted "entail" before the attack,
the fraction whose prediction changes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mmattack.co_attack import AttackOutcome, CoAttackConfig, perturbation_vectors
from mmattack.encoders.corpus import ENTAIL, ToyCorpus, default_lexicon
from mmattack.encoders.inference import predict_entailment_batch, retrieval_hits
from mmattack.encoders.model import FUSED, VLPModel, pad_tokens
from mmattack.encoders.train import stream

from .settings import (
    BASELINE_OPTIMIZERS,
    BI,
    CO_ATTACK,
    CO_ATTACK_SI,
    ENTAILMENT_TASK,
    INDEPENDENT,
    AttackSetting,
    run_setting,
    tasks_for,
)

# an attack maps (images, captions) to an AttackOutcome or an (images, captions) pair
Attack = Callable[[np.ndarray, list], object]

NORM_FLOOR = 1e-9
DEFAULT_ALPHAS = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass
class MetricsReport:
    """One row per (setting, task, seed); ``asr`` is None when no query was eligible."""

    rows: list[dict] = field(default_factory=list)
    # setting name -> [(angle in radians, |delta_it|), ...]
    angles: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    skipped_angles: dict[str, int] = field(default_factory=dict)
    budgets: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    wall_clock: float = 0.0

    def asr(self, setting: str, task: str) -> float | None:
        """Mean ASR over seeds; None if no seed had eligible samples."""
        vals = [r["asr"] for r in self.rows if r["setting"] == setting and r["task"] == task and r["asr"] is not None]
        return float(np.mean(vals)) if vals else None

    def settings(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r["setting"] not in seen:
                seen.append(r["setting"])
        return seen

    def merge(self, other: MetricsReport) -> MetricsReport:
        out = MetricsReport(
            rows=self.rows + other.rows,
            angles={k: list(v) for k, v in self.angles.items()},
            skipped_angles=dict(self.skipped_angles),
            budgets=self.budgets or other.budgets,
            seeds=self.seeds + [s for s in other.seeds if s not in self.seeds],
            wall_clock=self.wall_clock + other.wall_clock,
        )
        for k, v in other.angles.items():
            out.angles.setdefault(k, []).extend(v)
        for k, v in other.skipped_angles.items():
            out.skipped_angles[k] = out.skipped_angles.get(k, 0) + v
        return out


def eval_indices(corpus: ToyCorpus, n_eval: int = 100) -> np.ndarray:
    return corpus.split(n_eval)[1]


def _as_pairs(result, texts) -> tuple[np.ndarray, list[list[int]]]:
    if isinstance(result, AttackOutcome):
        return result.images, result.texts
    images, adv_texts = result
    return np.asarray(images), (texts if adv_texts is None else adv_texts)


def _rate(flipped: np.ndarray, eligible: np.ndarray) -> tuple[float | None, int, int]:
    n = int(eligible.sum())
    k = int((flipped & eligible).sum())
    return (k / n if n else None), n, k


def retrieval_counts(model, images, texts, adv_images, adv_texts, k: int = 1) -> dict[str, tuple]:
    """``{"TR": (asr, eligible, flipped), "IR": ...}`` for already-attacked pairs."""
    if len(texts) == 0:
        return {"TR": (None, 0, 0), "IR": (None, 0, 0)}
    max_len = model.config.max_len
    ids, adv_ids = pad_tokens(texts, max_len), pad_tokens(adv_texts, max_len)
    clean_tr, clean_ir = retrieval_hits(model, images, ids, k)
    adv_tr, adv_ir = retrieval_hits(model, images, ids, k, adv_images, adv_ids)
    return {"TR": _rate(~adv_tr, clean_tr), "IR": _rate(~adv_ir, clean_ir)}


def entailment_counts(model, images, texts, adv_images, adv_texts) -> tuple:
    if len(texts) == 0:
        return None, 0, 0
    max_len = model.config.max_len
    clean = predict_entailment_batch(model, images, pad_tokens(texts, max_len))
    adv = predict_entailment_batch(model, adv_images, pad_tokens(adv_texts, max_len))
    return _rate(adv != clean, clean == ENTAIL)


def _eval_pairs(corpus: ToyCorpus, indices):
    indices = np.asarray(indices)
    return corpus.images[indices], [list(corpus.captions[i]) for i in indices]


def retrieval_asr(model: VLPModel, corpus: ToyCorpus, attack: Attack, k: int = 1, indices=None) -> dict:
    """``{"TR": asr, "IR": asr}`` over the evaluation split (None when undefined)."""
    indices = eval_indices(corpus) if indices is None else indices
    images, texts = _eval_pairs(corpus, indices)
    adv_images, adv_texts = _as_pairs(attack(images, texts), texts)
    counts = retrieval_counts(model, images, texts, adv_images, adv_texts, k)
    return {task: c[0] for task, c in counts.items()}


def entailment_asr(model: VLPModel, corpus: ToyCorpus, attack: Attack, indices=None) -> float | None:
    if model.kind != FUSED:
        raise TypeError("entailment needs a fused model")
    indices = eval_indices(corpus) if indices is None else indices
    images, texts = _eval_pairs(corpus, indices)
    adv_images, adv_texts = _as_pairs(attack(images, texts), texts)
    return entailment_counts(model, images, texts, adv_images, adv_texts)[0]


def angles_between(d_i: np.ndarray, d_t: np.ndarray, d_it: np.ndarray | None = None):
    """Per-row angle between ``d_i`` and ``d_t`` with the resultant's norm.

    Rows where either vector is shorter than 1e-9 are skipped; returns
    ``(samples, skipped)``.
    """
    d_i, d_t = np.atleast_2d(d_i), np.atleast_2d(d_t)
    d_it = d_i + d_t if d_it is None else np.atleast_2d(d_it)
    samples, skipped = [], 0
    for a, b, r in zip(d_i, d_t, d_it):
        na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
        if na < NORM_FLOOR or nb < NORM_FLOOR:
            skipped += 1
            continue
        cos = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
        samples.append((math.acos(cos), float(np.linalg.norm(r))))
    return samples, skipped


def angle_stats(
    model: VLPModel, corpus: ToyCorpus, attack: Attack, space: str | None = None, slice_: str = "cls", indices=None
):
    """``(samples, skipped)`` of (angle, resultant magnitude) over the evaluation split."""
    indices = eval_indices(corpus) if indices is None else indices
    if len(indices) == 0:
        return [], 0
    images, texts = _eval_pairs(corpus, indices)
    result = attack(images, texts)
    if not isinstance(result, AttackOutcome):
        adv_images, adv_texts = _as_pairs(result, texts)
        result = AttackOutcome(adv_images, adv_texts)
    d_i, d_t, d_it = perturbation_vectors(model, images, texts, result, space, slice_)
    return angles_between(d_i, d_t, d_it)


def _records_angles(setting: AttackSetting) -> bool:
    return setting.method in (CO_ATTACK, CO_ATTACK_SI) or (setting.method == INDEPENDENT and setting.perturbed == BI)


def run_attack_matrix(
    model: VLPModel,
    corpus: ToyCorpus,
    settings: list[AttackSetting],
    config: CoAttackConfig | None = None,
    seed: int = 0,
    n_eval: int = 100,
    k: int = 1,
    lexicon: dict[int, list[int]] | None = None,
    label: Callable[[AttackSetting], str] | None = None,
    on_outcome: Callable[[str, AttackOutcome], None] | None = None,
) -> MetricsReport:
    """Run every setting over the evaluation split and score each task.

    A setting the model cannot run becomes error rows and the rest go on.
    ``on_outcome(name, outcome)`` sees each retrieval-side outcome.
    """
    config = config or CoAttackConfig()
    lexicon = default_lexicon() if lexicon is None else lexicon
    label = label or (lambda s: s.name)
    started = time.perf_counter()
    report = MetricsReport(budgets=budgets_dict(config), seeds=[seed])
    images, texts = _eval_pairs(corpus, eval_indices(corpus, n_eval))
    tasks = tasks_for(model)
    for setting in settings:
        name = label(setting)
        try:
            setting.check(model)
        except TypeError as exc:
            for task in tasks:
                report.rows.append(_row(name, task, seed, None, 0, 0, str(exc)))
            continue
        if len(images) == 0:
            report.rows.extend(_row(name, task, seed, None, 0, 0) for task in tasks)
            if _records_angles(setting):
                report.angles.setdefault(name, [])
                report.skipped_angles.setdefault(name, 0)
            continue
        # the stream follows the setting, not the row label, so a sweep row equals the matrix cell
        rng_name = f"attack.{setting.name}"
        outcome = run_setting(model, setting, images, texts, config, lexicon, stream(seed, rng_name))
        if on_outcome is not None:
            on_outcome(name, outcome)
        for task, (asr, n, flipped) in retrieval_counts(
            model, images, texts, outcome.images, outcome.texts, k
        ).items():
            report.rows.append(_row(name, task, seed, asr, n, flipped))
        if ENTAILMENT_TASK in tasks:
            ve_outcome = outcome
            if setting.method in BASELINE_OPTIMIZERS:
                ve_outcome = run_setting(
                    model, setting, images, texts, config, lexicon, stream(seed, rng_name + ".ve"), ENTAILMENT_TASK
                )
            asr, n, flipped = entailment_counts(model, images, texts, ve_outcome.images, ve_outcome.texts)
            report.rows.append(_row(name, ENTAILMENT_TASK, seed, asr, n, flipped))
        if _records_angles(setting) and outcome.delta_i is not None:
            samples, skipped = angles_between(outcome.delta_i, outcome.delta_t, outcome.delta_it)
            report.angles.setdefault(name, []).extend(samples)
            report.skipped_angles[name] = report.skipped_angles.get(name, 0) + skipped
    report.wall_clock = time.perf_counter() - started
    return report


def alpha_sweep(
    model: VLPModel,
    corpus: ToyCorpus,
    alphas=DEFAULT_ALPHAS,
    config: CoAttackConfig | None = None,
    seed: int = 0,
    n_eval: int = 100,
    k: int = 1,
    lexicon: dict[int, list[int]] | None = None,
) -> MetricsReport:
    """Co-Attack at each alpha (alpha1 on fused models, alpha2 on aligned ones)."""
    alphas = sorted({float(a) for a in alphas})
    if not alphas:
        raise ValueError("alphas must be nonempty")
    config = config or CoAttackConfig()
    report = MetricsReport(budgets=budgets_dict(config), seeds=[seed])
    for a in alphas:
        cfg = CoAttackConfig(a, a, config.image_budget, config.text_budget)
        part = run_attack_matrix(
            model, corpus, [AttackSetting(method=CO_ATTACK)], cfg, seed, n_eval, k, lexicon,
            label=lambda s, a=a: f"{s.name}[alpha={a:g}]",
        )
        report = report.merge(part)
    report.seeds = [seed]
    return report


def plateau(report: MetricsReport, task: str, lo: float = 1.0, hi: float = 5.0) -> float | None:
    """Spread (max - min) of sweep ASR over alphas in ``[lo, hi]``."""
    vals = []
    for name in report.settings():
        if "[alpha=" not in name:
            continue
        a = float(name.split("=")[1].rstrip("]"))
        v = report.asr(name, task)
        if lo <= a <= hi and v is not None:
            vals.append(v)
    return max(vals) - min(vals) if vals else None


def budgets_dict(config: CoAttackConfig) -> dict:
    ib, tb = config.image_budget, config.text_budget
    return {
        "alpha1": config.alpha1,
        "alpha2": config.alpha2,
        "eps_inf": ib.eps_inf,
        "step_size": ib.step_size,
        "iters": ib.iters,
        "optimizer": ib.optimizer,
        "momentum": ib.momentum,
        "scale_copies": ib.scale_copies,
        "max_substitutions": tb.max_substitutions,
        "list_length": tb.list_length,
    }


def _row(setting, task, seed, asr, eligible, flipped, error=""):
    return {
        "setting": setting,
        "task": task,
        "seed": seed,
        "asr": asr,
        "eligible": eligible,
        "flipped": flipped,
        "error": error,
    }
