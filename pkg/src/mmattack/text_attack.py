"""Token-substitution attacks on captions.

A caption is a token list starting with the CLS id. Substitutions only swap
a content token for one of its lexicon candidates, so the length (and the
padding mask) never changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mmattack.diffcore import Tensor, embedding_distance
from mmattack.encoders.corpus import CLS, UNK
from mmattack.encoders.inference import rank_order
from mmattack.encoders.model import VLPModel, pad_tokens
from mmattack.targets import MULTIMODAL, TargetSpec, text_target


@dataclass(frozen=True)
class TextBudget:
    max_substitutions: int = 1
    list_length: int = 10

    def __post_init__(self):
        if self.max_substitutions < 1:
            raise ValueError("max_substitutions must be >= 1")
        if self.list_length < 1:
            raise ValueError("list_length must be >= 1")


@dataclass
class TextAttackResult:
    tokens: list[int]
    objective: float
    positions: list[int] = field(default_factory=list)


def _check_caption(tokens) -> list[int]:
    tokens = [int(t) for t in tokens]
    if len(tokens) < 2 or tokens[0] != CLS:
        raise ValueError("caption needs the CLS id first and at least one content token")
    return tokens


class _Scorer:
    """Distance of candidate captions' target embeddings from the reference caption's."""

    def __init__(self, model: VLPModel, x_i, x_t: list[int], target: TargetSpec):
        target.check(model)
        self.model = model
        self.target = target
        self.e_i = None
        if target.space == MULTIMODAL:
            if x_i is None:
                raise ValueError("a multimodal target needs the paired image")
            self.e_i = model.image_embedding(np.asarray(x_i, dtype=float)[None]).data
        ref, self.mask = self._embed([x_t])
        self.ref = ref.data

    def _embed(self, captions: list[list[int]]):
        ids = pad_tokens(captions, self.model.config.max_len)
        e_i = None if self.e_i is None else Tensor(np.repeat(self.e_i, len(captions), axis=0))
        return text_target(self.model, ids, self.target, e_i=e_i)

    def __call__(self, captions: list[list[int]]) -> np.ndarray:
        if not captions:
            return np.zeros(0)
        e, mask = self._embed(captions)
        ref = Tensor(np.repeat(self.ref, len(captions), axis=0))
        return embedding_distance(e, ref, mask=mask, batched=True).data.copy()

    def exact(self, caption: list[int]) -> float:
        """Single-caption evaluation; the canonical objective value."""
        return float(self([caption])[0])


def text_objective(model: VLPModel, x_i, x_t, x_adv, target: TargetSpec) -> float:
    """Embedding distance between ``x_adv`` and ``x_t`` under ``target``."""
    return _Scorer(model, x_i, _check_caption(x_t), target).exact(_check_caption(x_adv))


def _importance(scorer: _Scorer, tokens: list[int]) -> np.ndarray:
    positions = np.arange(1, len(tokens))
    masked = []
    for p in positions:
        m = list(tokens)
        m[p] = UNK
        masked.append(m)
    scores = scorer(masked)
    return positions[rank_order(scores, positions)]


def rank_token_importance(model: VLPModel, x_i, x_t, target: TargetSpec) -> list[int]:
    """Content positions by how far masking each one (with UNK) moves the target embedding.

    Ties go to the lower position.
    """
    tokens = _check_caption(x_t)
    return [int(p) for p in _importance(_Scorer(model, x_i, tokens, target), tokens)]


def text_attack(
    model: VLPModel,
    x_i,
    x_t,
    target: TargetSpec,
    budget: TextBudget,
    lexicon: dict[int, list[int]],
    scan_all: bool = False,
) -> TextAttackResult:
    """Greedy synonym substitution maximising the embedding distance from ``x_t``.

    Positions are visited in importance order; at each one the best
    candidate is committed if it beats the current objective. With
    ``scan_all`` every remaining (position, candidate) pair competes in each
    round instead, which for a one-token budget is the exhaustive argmax.
    """
    tokens = _check_caption(x_t)
    scorer = _Scorer(model, x_i, tokens, target)
    current = list(tokens)
    best = 0.0
    committed: list[int] = []

    def candidates(pos):
        return [int(c) for c in lexicon.get(tokens[pos], [])[: budget.list_length] if c != tokens[pos]]

    if scan_all:
        remaining = list(range(1, len(tokens)))
        while len(committed) < budget.max_substitutions and remaining:
            trials, where = [], []
            for pos in remaining:
                for c in candidates(pos):
                    t = list(current)
                    t[pos] = c
                    trials.append(t)
                    where.append(pos)
            if not trials:
                break
            scores = scorer(trials)
            # first maximum wins: lower position, then earlier candidate
            k = int(np.argmax(scores))
            if scores[k] <= best:
                break
            current, best = trials[k], float(scores[k])
            committed.append(where[k])
            remaining.remove(where[k])
    else:
        for pos in _importance(scorer, tokens):
            if len(committed) >= budget.max_substitutions:
                break
            trials = []
            for c in candidates(int(pos)):
                t = list(current)
                t[pos] = c
                trials.append(t)
            if not trials:
                continue
            scores = scorer(trials)
            k = int(np.argmax(scores))
            if scores[k] > best:
                current, best = trials[k], float(scores[k])
                committed.append(int(pos))
    objective = scorer.exact(current) if committed else 0.0
    return TextAttackResult(tokens=current, objective=objective, positions=committed)
