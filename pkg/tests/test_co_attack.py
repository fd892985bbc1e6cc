import numpy as np
import pytest

from mmattack.co_attack import (
    MULTI_FULL,
    UNI_CLS,
    AttackOutcome,
    CoAttackConfig,
    co_attack,
    co_attack_aligned,
    co_attack_fused,
    co_attack_objective,
    independent_attack,
    perturbation_vectors,
)
from mmattack.diffcore import Tensor, kl_embedding_loss
from mmattack.encoders.corpus import default_lexicon
from mmattack.encoders.model import pad_tokens
from mmattack.image_attack import ImageBudget, embedding_image_attack, embedding_objective
from mmattack.targets import UNIMODAL
from mmattack.text_attack import TextBudget

EPS = 2 / 255


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


def test_config_rejects_negative_alpha():
    with pytest.raises(ValueError):
        CoAttackConfig(alpha1=-1)


def test_fused_alpha_zero_reduces_to_multimodal_attack_on_adversarial_text(trained_fused, zoo_corpus):
    images, texts = zoo_corpus.images[:8], zoo_corpus.captions[:8]
    out = co_attack_fused(trained_fused, images, texts, CoAttackConfig(alpha1=0.0), rng=np.random.default_rng(4))
    ref = embedding_image_attack(
        trained_fused, images, out.texts, MULTI_FULL, ImageBudget(), np.random.default_rng(4)
    )
    assert _rel(out.objective, ref.objective) <= 1e-9
    assert np.array_equal(out.images, ref.images)


def test_aligned_alpha_zero_reduces_to_unimodal_cls_attack(trained_aligned, zoo_corpus):
    images, texts = zoo_corpus.images[:8], zoo_corpus.captions[:8]
    out = co_attack_aligned(trained_aligned, images, texts, CoAttackConfig(alpha2=0.0), rng=np.random.default_rng(4))
    ref = embedding_image_attack(trained_aligned, images, None, UNI_CLS, ImageBudget(), np.random.default_rng(4))
    assert _rel(out.objective, ref.objective) <= 1e-9


def test_fused_objective_pointwise_reduction(fresh_fused, corpus):
    images = corpus.images[:3]
    ids = pad_tokens(corpus.captions[:3], 12)
    adv_ids = pad_tokens(corpus.contradictions[:3], 12)
    x = Tensor(np.clip(images + 0.01, 0, 1))
    co = co_attack_objective(fresh_fused, images, ids, adv_ids, 0.0)(x).data
    eq5 = embedding_objective(fresh_fused, images, MULTI_FULL, adv_ids)(x).data
    assert _rel(co, eq5) <= 1e-9


def test_zero_budgets_return_inputs(fresh_fused, fresh_aligned, corpus):
    cfg = CoAttackConfig(image_budget=ImageBudget(eps_inf=0.0))
    for model in (fresh_fused, fresh_aligned):
        out = co_attack(model, corpus.images[:3], corpus.captions[:3], cfg, lexicon={})
        assert np.array_equal(out.images, corpus.images[:3])
        assert out.texts == [list(c) for c in corpus.captions[:3]]
    out = co_attack_fused(fresh_fused, corpus.images[:3], corpus.captions[:3], cfg, lexicon={})
    np.testing.assert_array_equal(out.objective, 0.0)
    np.testing.assert_array_equal(out.delta_it, 0.0)


def test_aligned_degenerate_text_keeps_second_term(fresh_aligned, corpus):
    images, texts = corpus.images[:3], corpus.captions[:3]
    ids = pad_tokens(texts, 12)
    value = co_attack_objective(fresh_aligned, images, ids, ids, 3.0)(Tensor(images)).data
    img = fresh_aligned.unimodal_image(images).data[:, 0:1]
    txt = fresh_aligned.unimodal_text(ids).data[:, 0:1]
    expected = 3.0 * kl_embedding_loss(img, txt, batched=True).data
    np.testing.assert_allclose(value, expected, rtol=1e-12)
    assert (value > 0).all()
    out = co_attack_aligned(fresh_aligned, images, texts, lexicon={})
    assert np.isfinite(out.objective).all()


def test_wrong_model_kind(fresh_fused, fresh_aligned, corpus):
    with pytest.raises(TypeError):
        co_attack_fused(fresh_aligned, corpus.images[0], corpus.captions[0])
    with pytest.raises(TypeError):
        co_attack_aligned(fresh_fused, corpus.images[0], corpus.captions[0])


@pytest.mark.parametrize("si", [False, True])
def test_budgets_respected(fresh_fused, corpus, si):
    budget = ImageBudget(optimizer="SI") if si else ImageBudget()
    lexicon = default_lexicon()
    images, texts = corpus.images[:6], corpus.captions[:6]
    out = co_attack(fresh_fused, images, texts, CoAttackConfig(image_budget=budget), lexicon, np.random.default_rng(0))
    assert np.abs(out.images - images).max() <= EPS + 1e-6
    assert out.images.min() >= 0 and out.images.max() <= 1
    for cap, adv in zip(texts, out.texts):
        diff = [p for p in range(len(cap)) if cap[p] != adv[p]]
        assert len(diff) <= 1 and all(adv[p] in lexicon[cap[p]] for p in diff)


def test_single_pair_input(fresh_fused, corpus):
    out = co_attack(fresh_fused, corpus.images[0], corpus.captions[0], rng=np.random.default_rng(0))
    assert out.images.shape == (3, 24, 24)
    assert len(out.texts) == 1


def test_unperturbed_outcome_has_zero_vectors(fresh_fused, fresh_aligned, corpus):
    images, texts = corpus.images[:3], corpus.captions[:3]
    for model in (fresh_fused, fresh_aligned):
        d_i, d_t, d_it = perturbation_vectors(model, images, texts, AttackOutcome(images.copy(), list(texts)))
        for d in (d_i, d_t, d_it):
            assert not d.any()


def test_text_only_attack_joint_equals_text_vector(fresh_fused, corpus):
    images, texts = corpus.images[:4], corpus.captions[:4]
    out = independent_attack(fresh_fused, images, texts, MULTI_FULL, perturb_image=False)
    assert np.array_equal(out.delta_it, out.delta_t)
    assert not out.delta_i.any()


def test_stored_vectors_match_recomputation(fresh_fused, fresh_aligned, corpus):
    images, texts = corpus.images[:4], corpus.captions[:4]
    for model in (fresh_fused, fresh_aligned):
        out = co_attack(model, images, texts, rng=np.random.default_rng(2))
        again = perturbation_vectors(model, images, texts, out)
        for stored, fresh in zip((out.delta_i, out.delta_t, out.delta_it), again):
            assert stored.tobytes() == fresh.tobytes()


def test_unimodal_vectors_on_fused_model_and_slices(fresh_fused, corpus):
    images, texts = corpus.images[:2], corpus.captions[:2]
    out = co_attack(fresh_fused, images, texts, rng=np.random.default_rng(2))
    d_i, d_t, d_it = perturbation_vectors(fresh_fused, images, texts, out, UNIMODAL)
    assert d_i.shape == (2, 32) and np.array_equal(d_it, d_i + d_t)
    full = perturbation_vectors(fresh_fused, images, texts, out, slice_="full")
    assert full[0].shape == (2, 12 * 32)
    with pytest.raises(ValueError):
        perturbation_vectors(fresh_fused, images, texts, out, UNIMODAL, "full")


def test_independent_attack_switches(fresh_aligned, corpus):
    images, texts = corpus.images[:3], corpus.captions[:3]
    image_only = independent_attack(fresh_aligned, images, texts, UNI_CLS, perturb_text=False)
    assert image_only.texts == [list(t) for t in texts]
    text_only = independent_attack(fresh_aligned, images, texts, UNI_CLS, perturb_image=False)
    assert np.array_equal(text_only.images, images)


def test_co_attack_is_deterministic(fresh_fused, corpus):
    a = co_attack(fresh_fused, corpus.images[:3], corpus.captions[:3], rng=np.random.default_rng(5))
    b = co_attack(fresh_fused, corpus.images[:3], corpus.captions[:3], rng=np.random.default_rng(5))
    assert a.images.tobytes() == b.images.tobytes() and a.texts == b.texts


def test_text_step_comes_first(fresh_fused, corpus):
    """The image step is scored against the adversarial caption."""
    images, texts = corpus.images[:3], corpus.captions[:3]
    out = co_attack_fused(fresh_fused, images, texts, rng=np.random.default_rng(1))
    objective = co_attack_objective(
        fresh_fused, images, pad_tokens(texts, 12), pad_tokens(out.texts, 12), 3.0
    )
    np.testing.assert_array_equal(objective(Tensor(out.images)).data, out.objective)
