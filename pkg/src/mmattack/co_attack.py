"""Collaborative text-then-image attack, plus the independent bi-modal baseline.

The text is attacked first. The image attack then pushes the embedding of
the adversarial pair away from the clean-image/adversarial-text pair and,
weighted by alpha, away from a second reference:

* fused models: the clean pair's multimodal embedding (``alpha1``);
* aligned models: the adversarial text's embedding (``alpha2``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mmattack.diffcore import Tensor, kl_embedding_loss
from mmattack.encoders.corpus import default_lexicon
from mmattack.encoders.model import ALIGNED, FUSED, VLPModel, pad_tokens, text_mask
from mmattack.image_attack import ImageBudget, embedding_image_attack, maximize_linf
from mmattack.targets import CLS_SLICE, FULL_SLICE, MULTIMODAL, UNIMODAL, TargetSpec, image_target
from mmattack.text_attack import TextBudget, text_attack

MULTI_FULL = TargetSpec(MULTIMODAL, FULL_SLICE)
UNI_CLS = TargetSpec(UNIMODAL, CLS_SLICE)


@dataclass(frozen=True)
class CoAttackConfig:
    alpha1: float = 3.0
    alpha2: float = 3.0
    image_budget: ImageBudget = field(default_factory=ImageBudget)
    text_budget: TextBudget = field(default_factory=TextBudget)

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alphas must be non-negative")


@dataclass
class AttackOutcome:
    """Adversarial pairs for a batch plus the embedding-space perturbations.

    ``delta_*`` rows are per sample; ``trace[t]`` is the per-sample image
    objective at iterate ``t``.
    """

    images: np.ndarray
    texts: list[list[int]]
    trace: list[np.ndarray] = field(default_factory=list)
    objective: np.ndarray | None = None
    delta_i: np.ndarray | None = None
    delta_t: np.ndarray | None = None
    delta_it: np.ndarray | None = None


def _batch(x_i, x_t):
    images = np.asarray(x_i, dtype=float)
    if images.ndim == 3:
        return images[None], [list(x_t)], True
    return images, [list(t) for t in x_t], False


def _attack_texts(model, images, texts, target, budget, lexicon, attack_text):
    if not attack_text:
        return [list(t) for t in texts]
    return [
        text_attack(model, img, t, target, budget, lexicon).tokens for img, t in zip(images, texts)
    ]


def _pair_rows(model: VLPModel, images, ids, slice_: str) -> np.ndarray:
    """Multimodal embedding rows the geometry is measured on, flattened per sample."""
    if model.kind != FUSED:
        raise TypeError("the multimodal space needs a fused model")
    e_m = model.multimodal_embedding(model.image_embedding(images), model.text_embedding(ids), ids).data
    if slice_ == CLS_SLICE:
        return e_m[:, 0]
    return (e_m * text_mask(ids)).reshape(len(e_m), -1)


def perturbation_vectors(
    model: VLPModel, x_i, x_t, outcome: AttackOutcome, space: str | None = None, slice_: str = CLS_SLICE
):
    """``(delta_i, delta_t, delta_it)``, one row per sample.

    The multimodal space (default for fused models) compares pair
    embeddings with one side swapped for its adversarial version. The
    unimodal space (default for aligned models) compares the unimodal CLS
    rows, projected for aligned models; there ``delta_it`` is
    ``delta_i + delta_t``. Image and text rows differ in count, so the
    unimodal space only has a CLS slice.
    """
    space = space or (MULTIMODAL if model.kind == FUSED else UNIMODAL)
    images, texts, _ = _batch(x_i, x_t)
    max_len = model.config.max_len
    ids, adv_ids = pad_tokens(texts, max_len), pad_tokens(outcome.texts, max_len)
    adv_images = outcome.images if outcome.images.ndim == 4 else outcome.images[None]
    if space == MULTIMODAL:
        clean = _pair_rows(model, images, ids, slice_)
        d_t = _pair_rows(model, images, adv_ids, slice_) - clean
        d_i = _pair_rows(model, adv_images, ids, slice_) - clean
        d_it = _pair_rows(model, adv_images, adv_ids, slice_) - clean
        return d_i, d_t, d_it
    if slice_ != CLS_SLICE:
        raise ValueError("unimodal perturbation vectors are only defined on the CLS row")
    img = model.unimodal_image(images).data[:, 0]
    txt = model.unimodal_text(ids).data[:, 0]
    d_i = model.unimodal_image(adv_images).data[:, 0] - img
    d_t = model.unimodal_text(adv_ids).data[:, 0] - txt
    return d_i, d_t, d_i + d_t


def _finish(model, images, texts, outcome: AttackOutcome, single: bool) -> AttackOutcome:
    outcome.delta_i, outcome.delta_t, outcome.delta_it = perturbation_vectors(model, images, texts, outcome)
    if single:
        outcome.images = outcome.images[0]
    return outcome


def co_attack_objective(model: VLPModel, x_i: np.ndarray, ids: np.ndarray, adv_ids: np.ndarray, alpha: float):
    """Per-sample image objective of the collaborative attack for a batch."""
    if model.kind == FUSED:
        e_t_adv = model.text_embedding(adv_ids)
        e_t = model.text_embedding(ids)
        mask = text_mask(adv_ids)
        clean = model.image_embedding(x_i)
        ref_adv = Tensor(model.multimodal_embedding(clean, e_t_adv, adv_ids).data)
        ref_clean = Tensor(model.multimodal_embedding(clean, e_t, ids).data)

        def objective(x: Tensor) -> Tensor:
            e_m = model.multimodal_embedding(model.image_embedding(x), e_t_adv, adv_ids)
            first = kl_embedding_loss(e_m, ref_adv, mask=mask, batched=True)
            return first + kl_embedding_loss(e_m, ref_clean, mask=mask, batched=True) * alpha

        return objective
    ref_img = Tensor(model.unimodal_image(x_i).data[:, 0:1])
    ref_txt = Tensor(model.unimodal_text(adv_ids).data[:, 0:1])

    def objective(x: Tensor) -> Tensor:
        e = image_target(model, x, UNI_CLS)[0]
        first = kl_embedding_loss(e, ref_img, batched=True)
        return first + kl_embedding_loss(e, ref_txt, batched=True) * alpha

    return objective


def _co_attack(model, x_i, x_t, config, lexicon, rng, kind, attack_text):
    if model.kind != kind:
        raise TypeError(f"expected a {kind} model, got {model.kind}")
    lexicon = default_lexicon() if lexicon is None else lexicon
    images, texts, single = _batch(x_i, x_t)
    target = MULTI_FULL if kind == FUSED else UNI_CLS
    adv_texts = _attack_texts(model, images, texts, target, config.text_budget, lexicon, attack_text)
    max_len = model.config.max_len
    ids, adv_ids = pad_tokens(texts, max_len), pad_tokens(adv_texts, max_len)
    alpha = config.alpha1 if kind == FUSED else config.alpha2
    objective = co_attack_objective(model, images, ids, adv_ids, alpha)
    if config.image_budget.eps_inf == 0:
        values = objective(Tensor(images)).data.copy()
        result_images, trace = images.copy(), [values]
    else:
        result = maximize_linf(objective, images, config.image_budget, rng)
        result_images, trace, values = result.images, result.trace, result.objective
    outcome = AttackOutcome(result_images, adv_texts, trace, values)
    return _finish(model, images, texts, outcome, single)


def co_attack_fused(
    model: VLPModel,
    x_i,
    x_t,
    config: CoAttackConfig | None = None,
    lexicon: dict[int, list[int]] | None = None,
    rng: np.random.Generator | None = None,
    attack_text: bool = True,
) -> AttackOutcome:
    """Text attack on the multimodal embedding, then the weighted image attack.

    Accepts one pair (``[C, H, W]`` image and a token list) or a batch.
    ``attack_text=False`` keeps the clean captions, leaving only the image step.
    """
    return _co_attack(model, x_i, x_t, config or CoAttackConfig(), lexicon, rng, FUSED, attack_text)


def co_attack_aligned(
    model: VLPModel,
    x_i,
    x_t,
    config: CoAttackConfig | None = None,
    lexicon: dict[int, list[int]] | None = None,
    rng: np.random.Generator | None = None,
    attack_text: bool = True,
) -> AttackOutcome:
    """Text attack on the projected CLS embedding, then the image attack pushed off the adversarial text."""
    return _co_attack(model, x_i, x_t, config or CoAttackConfig(), lexicon, rng, ALIGNED, attack_text)


def co_attack(model: VLPModel, x_i, x_t, config=None, lexicon=None, rng=None, attack_text=True) -> AttackOutcome:
    run = co_attack_fused if model.kind == FUSED else co_attack_aligned
    return run(model, x_i, x_t, config, lexicon, rng, attack_text)


def independent_attack(
    model: VLPModel,
    x_i,
    x_t,
    target: TargetSpec,
    image_budget: ImageBudget | None = None,
    text_budget: TextBudget | None = None,
    lexicon: dict[int, list[int]] | None = None,
    rng: np.random.Generator | None = None,
    perturb_image: bool = True,
    perturb_text: bool = True,
) -> AttackOutcome:
    """Image and text attacked separately, each against the clean other modality.

    With both switched on this is the uncoordinated bi-modal baseline.
    """
    image_budget = image_budget or ImageBudget()
    text_budget = text_budget or TextBudget()
    lexicon = default_lexicon() if lexicon is None else lexicon
    images, texts, single = _batch(x_i, x_t)
    adv_texts = _attack_texts(model, images, texts, target, text_budget, lexicon, perturb_text)
    trace, values = [], None
    adv_images = images.copy()
    if perturb_image:
        ids = pad_tokens(texts, model.config.max_len)
        result = embedding_image_attack(model, images, ids, target, image_budget, rng)
        adv_images, trace, values = result.images, result.trace, result.objective
    outcome = AttackOutcome(adv_images, adv_texts, trace, values)
    return _finish(model, images, texts, outcome, single)
