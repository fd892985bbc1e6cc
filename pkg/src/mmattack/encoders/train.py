"""Training loop for the toy models (contrastive, matching and entailment losses)."""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from mmattack.diffcore import Tensor, compute_dtype, concat, log_softmax, take_index

from .corpus import CONTRADICT, ENTAIL, NEUTRAL, ToyCorpus
from .inference import evaluate_clean
from .model import (
    ALIGNED,
    FUSED,
    ModelConfig,
    VLPModel,
    itm_logits,
    new_model,
    normalize,
    pad_tokens,
    project,
    round_to_float32,
    ve_logits,
)

log = logging.getLogger(__name__)

R1_FLOOR = 0.70
ENTAILMENT_FLOOR = 0.80


def stream(seed: int, name: str) -> np.random.Generator:
    """Named sub-stream of a root seed; adding a stream never shifts another."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    batch_size: int = 64
    lr: float = 2e-3
    min_lr: float = 1e-4
    warmup_steps: int = 30
    weight_decay: float = 1e-4
    n_eval: int = 100
    seed: int = 0
    # re-render and re-caption the training scenes every epoch after the first
    augment: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: VLPModel
    metrics: dict[str, float]
    passed: bool
    history: list[float] = field(default_factory=list)

    def diagnostic(self) -> str:
        parts = [f"{k}={v:.3f}" for k, v in sorted(self.metrics.items())]
        verdict = "meets floors" if self.passed else "below floors"
        return f"{verdict}: " + ", ".join(parts)


class TrainingFailure(RuntimeError):
    def __init__(self, result: TrainResult):
        super().__init__(result.diagnostic())
        self.result = result


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        out = {}
        for k, w in params.items():
            g = grads.get(k)
            if g is None:
                out[k] = w
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            decay = self.weight_decay * w if w.ndim > 1 else 0.0
            out[k] = w - self.lr * (update + decay)
        return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits [B, C]``."""
    lp = log_softmax(logits, axis=-1)
    picked = take_index(lp, (np.arange(len(labels)), np.asarray(labels)))
    return -picked.mean()


def contrastive_loss(img_feat: Tensor, txt_feat: Tensor, temperature: float) -> Tensor:
    """Symmetric in-batch InfoNCE over cosine similarities."""
    sims = (img_feat @ txt_feat.transpose(1, 0)) * (1.0 / temperature)
    labels = np.arange(sims.shape[0])
    return (cross_entropy(sims, labels) + cross_entropy(sims.transpose(1, 0), labels)) * 0.5


def _batch_loss(model: VLPModel, p: dict[str, Tensor], corpus: ToyCorpus, idx: np.ndarray,
                rng: np.random.Generator) -> Tensor:
    cfg = model.config
    b = len(idx)
    images = corpus.images[idx]
    matched = pad_tokens([corpus.captions[i] for i in idx], cfg.max_len)
    e_i = model.image_embedding(images, p)
    img_feat = normalize(project(p, "img", e_i[:, 0]))
    if model.kind == ALIGNED:
        txt_feat = normalize(project(p, "txt", model.text_embedding(matched, p)[:, 0]))
        return contrastive_loss(img_feat, txt_feat, cfg.temperature)

    contra = pad_tokens([corpus.contradictions[i] for i in idx], cfg.max_len)
    neutral = pad_tokens([corpus.neutrals[i] for i in idx], cfg.max_len)
    e_t = model.text_embedding(np.concatenate([matched, contra, neutral]), p)
    txt_feat = normalize(project(p, "txt", e_t[:b, 0]))
    loss = contrastive_loss(img_feat, txt_feat, cfg.temperature)
    # ITM negatives: another caption of the batch, drawn in proportion to its ITC similarity
    sims = (img_feat.data @ txt_feat.data.T) / cfg.temperature
    np.fill_diagonal(sims, -np.inf)
    weights = np.exp(sims - sims.max(axis=1, keepdims=True))
    cum = np.cumsum(weights / weights.sum(axis=1, keepdims=True), axis=1)
    hard = np.minimum((cum < rng.random((b, 1))).sum(axis=1), b - 1)
    ids = np.concatenate([matched, contra, neutral, matched[hard]])
    e_t = concat([e_t, take_index(e_t, hard)], axis=0)
    e_m = model.multimodal_embedding(concat([e_i] * 4, axis=0), e_t, ids, p)
    ve_labels = np.repeat([ENTAIL, CONTRADICT, NEUTRAL], b)
    loss = loss + cross_entropy(ve_logits(p, e_m[: 3 * b]), ve_labels)
    # matched captions are ITM positives; contradictions and mined captions negatives
    itm_rows = np.concatenate([np.arange(2 * b), np.arange(3 * b, 4 * b)])
    itm_labels = np.repeat([1, 0, 0], b)
    return loss + cross_entropy(itm_logits(p, take_index(e_m, itm_rows)), itm_labels)


def train_toy_vlp(
    corpus: ToyCorpus,
    kind: str,
    train_config: TrainConfig | None = None,
    model_config: ModelConfig | None = None,
) -> TrainResult:
    """Train a model on every scene except the held-out tail, then score the floors."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    if kind not in (FUSED, ALIGNED):
        raise ValueError(f"unknown model kind {kind!r}")
    tc = train_config or TrainConfig()
    cfg = model_config or ModelConfig()
    model = new_model(kind, cfg, stream(tc.seed, f"init.{kind}"))
    order_rng = stream(tc.seed, f"order.{kind}")
    view_rng = stream(tc.seed, f"views.{kind}")
    train_idx, eval_idx = corpus.split(tc.n_eval)
    if len(train_idx) == 0:
        train_idx = eval_idx
    opt = Adam(model.params, tc.lr, tc.weight_decay)
    steps_per_epoch = max(1, int(np.ceil(len(train_idx) / tc.batch_size)))
    total = tc.epochs * steps_per_epoch
    history = []
    step = 0
    params = model.params
    for epoch in range(tc.epochs):
        perm = order_rng.permutation(train_idx)
        data = corpus.reviewed(train_idx, view_rng) if tc.augment and epoch > 0 else corpus
        running = 0.0
        for s in range(steps_per_epoch):
            idx = perm[s * tc.batch_size : (s + 1) * tc.batch_size]
            if len(idx) < 2:
                continue
            with compute_dtype(np.float32):
                p = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
                loss = _batch_loss(model, p, data, idx, order_rng)
                loss.backward()
            grads = {k: t.grad.astype(np.float64) for k, t in p.items() if t.grad is not None}
            warm = min(1.0, (step + 1) / max(1, tc.warmup_steps))
            cosine = 0.5 * (1 + np.cos(np.pi * step / max(1, total)))
            opt.lr = warm * (tc.min_lr + (tc.lr - tc.min_lr) * cosine)
            params = opt.step(params, grads)
            running += float(loss.data)
            step += 1
        history.append(running / steps_per_epoch)
        log.debug("epoch %d loss %.4f", epoch, history[-1])
    model.set_params(round_to_float32(params))
    metrics = evaluate_clean(model, corpus, eval_idx)
    passed = metrics["tr_r1"] >= R1_FLOOR and metrics["ir_r1"] >= R1_FLOOR
    if kind == FUSED:
        passed = passed and metrics["ve_acc"] >= ENTAILMENT_FLOOR
    return TrainResult(model=model, metrics=metrics, passed=passed, history=history)
