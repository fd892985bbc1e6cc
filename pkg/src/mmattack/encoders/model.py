"""Toy fused (ALBEF-like) and aligned (CLIP-like) vision-language models.

Parameters live in a flat ``name -> ndarray`` dict. Forward functions take a
dict of :class:`Tensor` so the same code serves training (parameters require
gradients) and attacks (parameters are constants, inputs require gradients).
All forward passes are batched; text is always padded to ``max_len``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from mmattack.diffcore import (
    Tensor,
    broadcast_to,
    concat,
    constant,
    embedding_lookup,
    gelu,
    l2_norm,
    layer_norm,
    reshape,
    softmax,
    transpose,
)

from .corpus import PAD, VOCAB

FUSED = "fused"
ALIGNED = "aligned"
KINDS = (FUSED, ALIGNED)


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 32
    heads: int = 4
    layers: int = 2
    fusion_layers: int = 2
    mlp_dim: int = 64
    stem_dim: int = 96
    patch: int = 8
    image_size: int = 24
    channels: int = 3
    vocab_size: int = len(VOCAB)
    max_len: int = 12
    proj_dim: int = 32
    temperature: float = 0.1

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    def to_dict(self) -> dict:
        return asdict(self)


# -- parameter initialisation ------------------------------------------------


def _dense(rng, params, name, n_in, n_out):
    params[f"{name}.w"] = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
    params[f"{name}.b"] = np.zeros(n_out)


def _norm(params, name, dim):
    params[f"{name}.g"] = np.ones(dim)
    params[f"{name}.b"] = np.zeros(dim)


def _block(rng, params, name, cfg: ModelConfig, cross: bool):
    d = cfg.dim
    _norm(params, f"{name}.ln1", d)
    for proj in ("q", "k", "v", "o"):
        _dense(rng, params, f"{name}.attn.{proj}", d, d)
    if cross:
        _norm(params, f"{name}.lnx", d)
        for proj in ("q", "k", "v", "o"):
            _dense(rng, params, f"{name}.xattn.{proj}", d, d)
    _norm(params, f"{name}.ln2", d)
    _dense(rng, params, f"{name}.mlp1", d, cfg.mlp_dim)
    _dense(rng, params, f"{name}.mlp2", cfg.mlp_dim, d)


def init_params(cfg: ModelConfig, kind: str, rng: np.random.Generator) -> dict[str, np.ndarray]:
    if kind not in (FUSED, ALIGNED):
        raise ValueError(f"unknown model kind {kind!r}")
    d = cfg.dim
    p: dict[str, np.ndarray] = {}
    patch_in = cfg.channels * cfg.patch * cfg.patch
    _dense(rng, p, "img.stem", patch_in, cfg.stem_dim)
    _dense(rng, p, "img.patch", cfg.stem_dim, d)
    p["img.cls"] = rng.normal(0.0, 0.02, size=(1, 1, d))
    p["img.pos"] = rng.normal(0.0, 0.1, size=(1, 1 + cfg.n_patches, d))
    for i in range(cfg.layers):
        _block(rng, p, f"img.block{i}", cfg, cross=False)
    _norm(p, "img.ln", d)
    p["txt.tok"] = rng.normal(0.0, 0.5, size=(cfg.vocab_size, d))
    p["txt.pos"] = rng.normal(0.0, 0.1, size=(1, cfg.max_len, d))
    for i in range(cfg.layers):
        _block(rng, p, f"txt.block{i}", cfg, cross=False)
    _norm(p, "txt.ln", d)
    _dense(rng, p, "itc.img", d, cfg.proj_dim)
    _dense(rng, p, "itc.txt", d, cfg.proj_dim)
    if kind == FUSED:
        for i in range(cfg.fusion_layers):
            _block(rng, p, f"mm.block{i}", cfg, cross=True)
        _norm(p, "mm.ln", d)
        _dense(rng, p, "itm", d, 2)
        _dense(rng, p, "ve", d, 3)
    return p


def round_to_float32(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Snap parameters to float32-representable values (checkpoint precision)."""
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


# -- building blocks -----------------------------------------------------------


def _linear(p, name, x: Tensor) -> Tensor:
    return x @ p[f"{name}.w"] + p[f"{name}.b"]


def _ln(p, name, x: Tensor) -> Tensor:
    return layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return transpose(reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _attention(p, name, xq: Tensor, xkv: Tensor, key_bias: np.ndarray | None, heads: int) -> Tensor:
    b, nq, d = xq.shape
    q = _split_heads(_linear(p, f"{name}.q", xq), heads)
    k = _split_heads(_linear(p, f"{name}.k", xkv), heads)
    v = _split_heads(_linear(p, f"{name}.v", xkv), heads)
    scores = (q @ transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d // heads))
    if key_bias is not None:
        scores = scores + key_bias
    ctx = softmax(scores, axis=-1) @ v
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, nq, d))
    return _linear(p, f"{name}.o", ctx)


def _mlp(p, name, x: Tensor) -> Tensor:
    return _linear(p, f"{name}.mlp2", gelu(_linear(p, f"{name}.mlp1", x)))


def _encoder_block(p, name, x: Tensor, key_bias, heads: int) -> Tensor:
    h = _ln(p, f"{name}.ln1", x)
    x = x + _attention(p, f"{name}.attn", h, h, key_bias, heads)
    return x + _mlp(p, name, _ln(p, f"{name}.ln2", x))


def _fusion_block(p, name, x: Tensor, img: Tensor, key_bias, heads: int) -> Tensor:
    h = _ln(p, f"{name}.ln1", x)
    x = x + _attention(p, f"{name}.attn", h, h, key_bias, heads)
    x = x + _attention(p, f"{name}.xattn", _ln(p, f"{name}.lnx", x), img, None, heads)
    return x + _mlp(p, name, _ln(p, f"{name}.ln2", x))


def text_key_bias(ids: np.ndarray) -> np.ndarray:
    """Additive attention bias ``[B, 1, 1, L]`` hiding padding keys."""
    return np.where(ids == PAD, -1e9, 0.0)[:, None, None, :]


def text_mask(ids: np.ndarray) -> np.ndarray:
    """``[B, L, 1]`` with 1 on real tokens, 0 on padding."""
    return (ids != PAD).astype(np.float64)[:, :, None]


def pad_tokens(seqs, max_len: int) -> np.ndarray:
    """Stack token lists into a PAD-filled ``[B, max_len]`` int array."""
    out = np.full((len(seqs), max_len), PAD, dtype=np.int64)
    for i, seq in enumerate(seqs):
        seq = list(seq)
        if len(seq) > max_len:
            raise ValueError(f"sequence of length {len(seq)} exceeds max_len {max_len}")
        out[i, : len(seq)] = seq
    return out


# -- forward passes --------------------------------------------------------------


def image_forward(p, cfg: ModelConfig, images: Tensor) -> Tensor:
    """``[B, C, H, W]`` pixels -> ``[B, 1 + P, d]`` image embedding."""
    images = constant(images)
    b = images.shape[0]
    g = cfg.image_size // cfg.patch
    x = reshape(images, (b, cfg.channels, g, cfg.patch, g, cfg.patch))
    x = transpose(x, (0, 2, 4, 1, 3, 5))
    x = reshape(x, (b, g * g, cfg.channels * cfg.patch * cfg.patch))
    # small per-patch MLP; a single linear map struggles to tell jittered shapes apart
    x = _linear(p, "img.patch", gelu(_linear(p, "img.stem", x)))
    cls = broadcast_to(p["img.cls"], (b, 1, cfg.dim))
    x = concat([cls, x], axis=1) + p["img.pos"]
    for i in range(cfg.layers):
        x = _encoder_block(p, f"img.block{i}", x, None, cfg.heads)
    return _ln(p, "img.ln", x)


def text_forward(p, cfg: ModelConfig, ids: np.ndarray) -> Tensor:
    """``[B, max_len]`` token ids -> ``[B, max_len, d]`` text embedding."""
    x = embedding_lookup(p["txt.tok"], ids) + p["txt.pos"][:, : ids.shape[1]]
    bias = text_key_bias(ids)
    for i in range(cfg.layers):
        x = _encoder_block(p, f"txt.block{i}", x, bias, cfg.heads)
    return _ln(p, "txt.ln", x)


def fusion_forward(p, cfg: ModelConfig, e_i: Tensor, e_t: Tensor, ids: np.ndarray) -> Tensor:
    """Text tokens attend to themselves and to every image token."""
    e_i, e_t = constant(e_i), constant(e_t)
    if e_i.shape[-1] != e_t.shape[-1]:
        raise ValueError(f"embedding width mismatch {e_i.shape[-1]} vs {e_t.shape[-1]}")
    bias = text_key_bias(ids)
    x = e_t
    for i in range(cfg.fusion_layers):
        x = _fusion_block(p, f"mm.block{i}", x, e_i, bias, cfg.heads)
    return _ln(p, "mm.ln", x)


def project(p, which: str, e: Tensor) -> Tensor:
    """Row-wise linear map into the shared contrastive space."""
    return _linear(p, f"itc.{which}", e)


def normalize(x: Tensor) -> Tensor:
    n = l2_norm(x, axis=-1)
    return x * reshape(n ** -1.0, n.shape + (1,))


def itm_logits(p, e_m: Tensor) -> Tensor:
    return _linear(p, "itm", e_m[:, 0])


def ve_logits(p, e_m: Tensor) -> Tensor:
    return _linear(p, "ve", e_m[:, 0])


class VLPModel:
    """Parameters plus config; subclasses fix the topology."""

    kind: str = ""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self._const: dict[str, Tensor] | None = None

    def constants(self) -> dict[str, Tensor]:
        if self._const is None:
            self._const = {k: Tensor(v, name=k) for k, v in self.params.items()}
        return self._const

    def parameter_tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        self.params = params
        self._const = None

    # batched helpers used by attacks and evaluation

    def image_embedding(self, images, p=None) -> Tensor:
        return image_forward(p or self.constants(), self.config, images)

    def text_embedding(self, ids: np.ndarray, p=None) -> Tensor:
        return text_forward(p or self.constants(), self.config, ids)

    def unimodal_image(self, images, p=None) -> Tensor:
        """Image-side embedding that unimodal attacks target."""
        return self.image_embedding(images, p)

    def unimodal_text(self, ids: np.ndarray, p=None) -> Tensor:
        return self.text_embedding(ids, p)

    def itc_features(self, images=None, ids=None, p=None):
        """L2-normalised projected CLS vectors for images and/or texts."""
        p = p or self.constants()
        img = txt = None
        if images is not None:
            img = normalize(project(p, "img", self.image_embedding(images, p)[:, 0]))
        if ids is not None:
            txt = normalize(project(p, "txt", self.text_embedding(ids, p)[:, 0]))
        return img, txt


class FusedVLPModel(VLPModel):
    kind = FUSED

    def multimodal_embedding(self, e_i: Tensor, e_t: Tensor, ids: np.ndarray, p=None) -> Tensor:
        return fusion_forward(p or self.constants(), self.config, e_i, e_t, ids)

    def itm_score(self, images, ids, p=None) -> Tensor:
        """Match-class log-odds from the multimodal CLS."""
        p = p or self.constants()
        e_m = self.multimodal_embedding(self.image_embedding(images, p), self.text_embedding(ids, p), ids, p)
        logits = itm_logits(p, e_m)
        return logits[:, 1] - logits[:, 0]

    def entailment_logits(self, images, ids, p=None) -> Tensor:
        p = p or self.constants()
        e_m = self.multimodal_embedding(self.image_embedding(images, p), self.text_embedding(ids, p), ids, p)
        return ve_logits(p, e_m)


class AlignedVLPModel(VLPModel):
    """Dual encoder; its unimodal embeddings are the projected rows."""

    kind = ALIGNED

    def unimodal_image(self, images, p=None) -> Tensor:
        p = p or self.constants()
        return project(p, "img", self.image_embedding(images, p))

    def unimodal_text(self, ids: np.ndarray, p=None) -> Tensor:
        p = p or self.constants()
        return project(p, "txt", self.text_embedding(ids, p))


def build_model(kind: str, config: ModelConfig, params: dict[str, np.ndarray]) -> VLPModel:
    if kind == FUSED:
        return FusedVLPModel(config, params)
    if kind == ALIGNED:
        return AlignedVLPModel(config, params)
    raise ValueError(f"unknown model kind {kind!r}")


def new_model(kind: str, config: ModelConfig, rng: np.random.Generator) -> VLPModel:
    return build_model(kind, config, round_to_float32(init_params(config, kind, rng)))
