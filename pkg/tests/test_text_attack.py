import numpy as np
import pytest

from mmattack.encoders.corpus import CLS, UNK, default_lexicon
from mmattack.encoders.model import FUSED, ModelConfig, build_model, init_params
from mmattack.targets import CLS_SLICE, FULL_SLICE, MULTIMODAL, UNIMODAL, TargetSpec
from mmattack.text_attack import TextBudget, rank_token_importance, text_attack, text_objective

MULTI_FULL = TargetSpec(MULTIMODAL, FULL_SLICE)
UNI_CLS = TargetSpec(UNIMODAL, CLS_SLICE)
UNI_FULL = TargetSpec(UNIMODAL, FULL_SLICE)


def brute_force(model, image, caption, target, lexicon, list_length=10):
    """Best objective over every single (position, candidate) substitution."""
    best, best_tokens = 0.0, list(caption)
    for pos in range(1, len(caption)):
        for cand in lexicon.get(caption[pos], [])[:list_length]:
            trial = list(caption)
            trial[pos] = cand
            value = text_objective(model, image, caption, trial, target)
            if value > best:
                best, best_tokens = value, trial
    return best, best_tokens


def test_budget_validation():
    with pytest.raises(ValueError):
        TextBudget(max_substitutions=0)
    with pytest.raises(ValueError):
        TextBudget(list_length=0)


def test_single_content_token_ranking(fresh_aligned):
    assert rank_token_importance(fresh_aligned, None, [CLS, 7], UNI_CLS) == [1]


def test_importance_ties_go_to_lower_position():
    cfg = ModelConfig()
    params = {k: np.zeros_like(v) for k, v in init_params(cfg, FUSED, np.random.default_rng(0)).items()}
    flat = build_model(FUSED, cfg, params)  # every caption embeds the same, so every score ties
    caption = [CLS, 5, 9, 12, 5, 9, 12]
    assert rank_token_importance(flat, None, caption, UNI_FULL) == [1, 2, 3, 4, 5, 6]


def test_empty_lexicon_leaves_caption(fresh_fused, corpus):
    out = text_attack(fresh_fused, corpus.images[0], corpus.captions[0], MULTI_FULL, TextBudget(), {})
    assert out.tokens == corpus.captions[0] and out.objective == 0.0 and out.positions == []


def test_empty_candidate_lists_are_skipped(fresh_aligned, corpus):
    caption = corpus.captions[0]
    lexicon = {caption[1]: []}
    out = text_attack(fresh_aligned, None, caption, UNI_CLS, TextBudget(), lexicon)
    assert out.tokens == caption


def test_multimodal_target_needs_image(fresh_fused, corpus):
    with pytest.raises(ValueError):
        text_attack(fresh_fused, None, corpus.captions[0], MULTI_FULL, TextBudget(), default_lexicon())


def test_bad_caption_is_rejected(fresh_aligned):
    with pytest.raises(ValueError):
        text_attack(fresh_aligned, None, [5, 6], UNI_CLS, TextBudget(), default_lexicon())


@pytest.mark.parametrize("subs", [1, 2, 3])
def test_budget_and_lexicon_respected(fresh_fused, corpus, subs):
    lexicon = default_lexicon()
    for img, cap in zip(corpus.images[:8], corpus.captions[:8]):
        out = text_attack(fresh_fused, img, cap, MULTI_FULL, TextBudget(max_substitutions=subs), lexicon)
        changed = [p for p, (a, b) in enumerate(zip(cap, out.tokens)) if a != b]
        assert len(changed) <= subs and 0 not in changed
        assert out.tokens[0] == CLS
        for p in changed:
            assert out.tokens[p] in lexicon[cap[p]]
        assert out.objective >= 0.0
        assert out.objective == text_objective(fresh_fused, img, cap, out.tokens, MULTI_FULL)


def test_list_length_truncates_candidates(fresh_aligned, corpus):
    lexicon = {k: v for k, v in default_lexicon().items()}
    cap = corpus.captions[0]
    out = text_attack(fresh_aligned, None, cap, UNI_FULL, TextBudget(list_length=1), lexicon)
    for p, (a, b) in enumerate(zip(cap, out.tokens)):
        if a != b:
            assert b == lexicon[a][0]


def test_single_candidate_lexicon_matches_brute_force(trained_aligned, zoo_corpus):
    lexicon = {k: v[:1] for k, v in default_lexicon().items()}
    for cap in zoo_corpus.captions[:20]:
        out = text_attack(trained_aligned, None, cap, UNI_CLS, TextBudget(), lexicon)
        # the greedy result is only guaranteed to be exact with a full scan
        full = text_attack(trained_aligned, None, cap, UNI_CLS, TextBudget(), lexicon, scan_all=True)
        best, _ = brute_force(trained_aligned, None, cap, UNI_CLS, lexicon)
        assert full.objective == best
        assert out.objective <= best


def test_full_scan_equals_brute_force_fused(trained_fused, zoo_corpus):
    lexicon = default_lexicon()
    for i in range(15):
        img, cap = zoo_corpus.images[i], zoo_corpus.captions[i]
        out = text_attack(trained_fused, img, cap, MULTI_FULL, TextBudget(), lexicon, scan_all=True)
        best, _ = brute_force(trained_fused, img, cap, MULTI_FULL, lexicon)
        assert out.objective == best


def test_top_ranked_position_has_max_masked_displacement(trained_aligned, zoo_corpus):
    for cap in zoo_corpus.captions[:30]:
        ranking = rank_token_importance(trained_aligned, None, cap, UNI_FULL)
        assert sorted(ranking) == list(range(1, len(cap)))
        scores = []
        for p in range(1, len(cap)):
            masked = list(cap)
            masked[p] = UNK
            scores.append(text_objective(trained_aligned, None, cap, masked, UNI_FULL))
        assert scores[ranking[0] - 1] == pytest.approx(max(scores), rel=1e-12)


def test_trained_fused_multimodal_displacement_is_positive(trained_fused, zoo_corpus):
    _, held = zoo_corpus.split(100)
    lexicon = default_lexicon()
    values = [
        text_attack(trained_fused, zoo_corpus.images[i], zoo_corpus.captions[i], MULTI_FULL, TextBudget(), lexicon).objective
        for i in held
    ]
    assert np.mean(values) > 0
