"""Which embedding an attack pushes on: unimodal or multimodal, CLS row or all rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mmattack.diffcore import Tensor
from mmattack.encoders.model import FUSED, VLPModel, text_mask

UNIMODAL = "unimodal"
MULTIMODAL = "multimodal"
CLS_SLICE = "cls"
FULL_SLICE = "full"


@dataclass(frozen=True)
class TargetSpec:
    space: str = MULTIMODAL
    slice: str = FULL_SLICE

    def __post_init__(self):
        if self.space not in (UNIMODAL, MULTIMODAL):
            raise ValueError(f"unknown target space {self.space!r}")
        if self.slice not in (CLS_SLICE, FULL_SLICE):
            raise ValueError(f"unknown target slice {self.slice!r}")

    def check(self, model: VLPModel) -> None:
        if self.space == MULTIMODAL and model.kind != FUSED:
            raise TypeError("a multimodal target needs a fused model")

    @property
    def label(self) -> str:
        return f"{'Uni' if self.space == UNIMODAL else 'Multi'}_{self.slice}"


def _slice(e: Tensor, target: TargetSpec, mask: np.ndarray | None):
    if target.slice == CLS_SLICE:
        return e[:, 0:1], None
    return e, mask


def image_target(
    model: VLPModel,
    images,
    target: TargetSpec,
    ids: np.ndarray | None = None,
    e_t: Tensor | None = None,
) -> tuple[Tensor, np.ndarray | None]:
    """Target embedding as a function of the pixels, plus its row mask.

    Multimodal targets need the (fixed) text as ``ids``; its embedding can be
    passed precomputed as ``e_t``.
    """
    target.check(model)
    if target.space == UNIMODAL:
        return _slice(model.unimodal_image(images), target, None)
    if ids is None:
        raise ValueError("a multimodal target needs the paired text")
    e_t = model.text_embedding(ids) if e_t is None else e_t
    e_m = model.multimodal_embedding(model.image_embedding(images), e_t, ids)
    return _slice(e_m, target, text_mask(ids))


def text_target(
    model: VLPModel,
    ids: np.ndarray,
    target: TargetSpec,
    images: np.ndarray | None = None,
    e_i: Tensor | None = None,
) -> tuple[Tensor, np.ndarray | None]:
    """Target embedding as a function of the tokens, plus its row mask."""
    target.check(model)
    if target.space == UNIMODAL:
        return _slice(model.unimodal_text(ids), target, text_mask(ids))
    if e_i is None:
        if images is None:
            raise ValueError("a multimodal target needs the paired image")
        e_i = model.image_embedding(images)
    e_m = model.multimodal_embedding(e_i, model.text_embedding(ids), ids)
    return _slice(e_m, target, text_mask(ids))
