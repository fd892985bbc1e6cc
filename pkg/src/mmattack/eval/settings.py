"""Attack settings: the perturbed-object x target grid plus the named baselines."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from mmattack.co_attack import AttackOutcome, CoAttackConfig, co_attack, independent_attack
from mmattack.encoders.corpus import ENTAIL
from mmattack.encoders.model import FUSED, VLPModel, pad_tokens
from mmattack.image_attack import ADAM, MIM, PGD, SI, embedding_image_attack, label_image_attack
from mmattack.targets import CLS_SLICE, FULL_SLICE, MULTIMODAL, UNIMODAL, TargetSpec

IMAGE, TEXT, BI = "Image", "Text", "Bi"
UNI, MULTI = "Uni", "Multi"
INDEPENDENT = "Independent"
CO_ATTACK = "CoAttack"
CO_ATTACK_SI = "CoAttack_SI"
FOOLING_VQA = "FoolingVQA"
SSAP = "SSAP"
SSAP_MIM = "SSAP_MIM"
SSAP_SI = "SSAP_SI"

# image-only baselines and the optimizer each one uses
BASELINE_OPTIMIZERS = {FOOLING_VQA: ADAM, SSAP: PGD, SSAP_MIM: MIM, SSAP_SI: SI}
METHODS = (INDEPENDENT, CO_ATTACK, FOOLING_VQA, SSAP, SSAP_MIM, SSAP_SI, CO_ATTACK_SI)

RETRIEVAL_TASKS = ("TR", "IR")
ENTAILMENT_TASK = "VE"


@dataclass(frozen=True)
class AttackSetting:
    perturbed: str = BI
    target: str = MULTI
    slice: str = FULL_SLICE
    method: str = INDEPENDENT

    def __post_init__(self):
        if self.perturbed not in (IMAGE, TEXT, BI):
            raise ValueError(f"unknown perturbed object {self.perturbed!r}")
        if self.target not in (UNI, MULTI):
            raise ValueError(f"unknown target {self.target!r}")
        if self.slice not in (CLS_SLICE, FULL_SLICE):
            raise ValueError(f"unknown slice {self.slice!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def name(self) -> str:
        if self.method != INDEPENDENT:
            return self.method
        return f"{self.perturbed}@{self.target}_{self.slice}"

    @property
    def target_spec(self) -> TargetSpec:
        return TargetSpec(UNIMODAL if self.target == UNI else MULTIMODAL, self.slice)

    def check(self, model: VLPModel) -> None:
        if self.method == INDEPENDENT and self.target == MULTI and model.kind != FUSED:
            raise TypeError(f"{self.name} needs a fused model")

    @classmethod
    def parse(cls, name: str) -> AttackSetting:
        """``Bi@Multi_full`` style cell names or a method name."""
        if name in METHODS and name != INDEPENDENT:
            return cls(method=name)
        m = re.fullmatch(r"(Image|Text|Bi)@(Uni|Multi)_(cls|full)", name, flags=re.IGNORECASE)
        if not m:
            raise ValueError(f"unrecognised setting {name!r}")
        perturbed = {"image": IMAGE, "text": TEXT, "bi": BI}[m.group(1).lower()]
        target = UNI if m.group(2).lower() == "uni" else MULTI
        return cls(perturbed, target, m.group(3).lower())


def grid_settings(kind: str = FUSED) -> list[AttackSetting]:
    """Every perturbed-object x target cell the model kind supports."""
    targets = (UNI, MULTI) if kind == FUSED else (UNI,)
    return [
        AttackSetting(p, t, s)
        for t in targets
        for s in (CLS_SLICE, FULL_SLICE)
        for p in (TEXT, IMAGE, BI)
    ]


def vanilla_setting(kind: str) -> AttackSetting:
    """Strongest uncoordinated bi-modal cell used as the baseline."""
    if kind == FUSED:
        return AttackSetting(BI, MULTI, FULL_SLICE)
    return AttackSetting(BI, UNI, CLS_SLICE)


def baseline_settings(kind: str) -> list[AttackSetting]:
    return [
        AttackSetting(method=FOOLING_VQA),
        AttackSetting(method=SSAP),
        AttackSetting(method=SSAP_MIM),
        AttackSetting(method=SSAP_SI),
        vanilla_setting(kind),
        AttackSetting(method=CO_ATTACK),
        AttackSetting(method=CO_ATTACK_SI),
    ]


def tasks_for(model: VLPModel) -> tuple[str, ...]:
    return RETRIEVAL_TASKS + ((ENTAILMENT_TASK,) if model.kind == FUSED else ())


def run_setting(
    model: VLPModel,
    setting: AttackSetting,
    images: np.ndarray,
    texts: list[list[int]],
    config: CoAttackConfig,
    lexicon: dict[int, list[int]],
    rng: np.random.Generator,
    task: str = "TR",
) -> AttackOutcome:
    """Adversarial pairs for one setting over a batch.

    The image-only baselines attack the entailment logits on the entailment
    task and the vanilla embedding target everywhere else.
    """
    setting.check(model)
    if setting.method == INDEPENDENT:
        return independent_attack(
            model, images, texts, setting.target_spec, config.image_budget, config.text_budget, lexicon, rng,
            perturb_image=setting.perturbed != TEXT, perturb_text=setting.perturbed != IMAGE,
        )
    if setting.method in (CO_ATTACK, CO_ATTACK_SI):
        if setting.method == CO_ATTACK_SI:
            config = CoAttackConfig(
                config.alpha1, config.alpha2, config.image_budget.replace(optimizer=SI), config.text_budget
            )
        return co_attack(model, images, texts, config, lexicon, rng)
    budget = config.image_budget.replace(optimizer=BASELINE_OPTIMIZERS[setting.method])
    if task == ENTAILMENT_TASK:
        labels = np.full(len(images), ENTAIL)
        result = label_image_attack(model, images, pad_tokens(texts, model.config.max_len), labels, budget, rng)
    else:
        result = embedding_image_attack(
            model, images, texts, vanilla_setting(model.kind).target_spec, budget, rng
        )
    return AttackOutcome(result.images, [list(t) for t in texts], result.trace, result.objective)
