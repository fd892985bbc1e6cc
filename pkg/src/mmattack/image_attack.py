"""L-infinity bounded gradient attacks on the image input.

All attacks here are batched: ``x`` is ``[B, C, H, W]`` and the objective
returns one value per sample. Samples never interact, so the gradient of the
summed objective is the per-sample gradient. The returned image is the best
iterate seen (clean input included), never merely the last one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mmattack.diffcore import Tensor, kl_embedding_loss, log_softmax, take_index
from mmattack.encoders.model import FUSED, VLPModel, pad_tokens, ve_logits
from mmattack.targets import TargetSpec, image_target

FGSM, PGD, MIM, SI, ADAM = "FGSM", "PGD", "MIM", "SI", "ADAM"
OPTIMIZERS = (FGSM, PGD, MIM, SI, ADAM)

Objective = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class ImageBudget:
    """Pixel-space budget; values are in [0, 1] units."""

    eps_inf: float = 2 / 255
    step_size: float = 1.25 / 255
    iters: int = 10
    optimizer: str = PGD
    momentum: float = 0.9
    scale_copies: int = 5
    probe_sigma: float = 1e-3

    def __post_init__(self):
        if self.eps_inf < 0:
            raise ValueError("eps_inf must be non-negative")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.scale_copies < 1:
            raise ValueError("scale_copies must be >= 1")

    @property
    def n_iters(self) -> int:
        return 1 if self.optimizer == FGSM else self.iters

    def replace(self, **changes) -> ImageBudget:
        fields = {**self.__dict__, **changes}
        return ImageBudget(**fields)


@dataclass
class AscentResult:
    images: np.ndarray
    objective: np.ndarray
    # trace[t] holds the per-sample objective at iterate t (t = 0 is the clean image)
    trace: list[np.ndarray] = field(default_factory=list)


def project_linf(x_raw: np.ndarray, x_orig: np.ndarray, eps_inf: float) -> np.ndarray:
    """Clamp into the eps band around ``x_orig``, then into [0, 1]."""
    x_raw, x_orig = np.asarray(x_raw, dtype=float), np.asarray(x_orig, dtype=float)
    if x_raw.shape != x_orig.shape:
        raise ValueError(f"shape mismatch {x_raw.shape} vs {x_orig.shape}")
    return np.clip(np.clip(x_raw, x_orig - eps_inf, x_orig + eps_inf), 0.0, 1.0)


def si_transform(x: np.ndarray, copies: int) -> list[np.ndarray]:
    """Scale copies ``x / 2**k`` for ``k`` in ``0..copies-1``."""
    if copies < 1:
        raise ValueError("copies must be >= 1")
    return [np.asarray(x) / 2.0**k for k in range(copies)]


def _value_and_grad(objective: Objective, x: np.ndarray, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    xt = Tensor(x, requires_grad=True)
    inp = xt if scale == 1.0 else xt * scale
    values = objective(inp)
    values.sum().backward()
    grad = np.zeros_like(x) if xt.grad is None else xt.grad
    return values.data.copy(), grad


def _gradient(objective: Objective, x: np.ndarray, budget: ImageBudget) -> tuple[np.ndarray, np.ndarray]:
    """Objective at ``x`` and the ascent gradient (averaged over scale copies for SI)."""
    values, grad = _value_and_grad(objective, x)
    if budget.optimizer == SI:
        for k in range(1, budget.scale_copies):
            grad = grad + _value_and_grad(objective, x, 1.0 / 2.0**k)[1]
        grad = grad / budget.scale_copies
    return values, grad


def _per_sample(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1)


def maximize_linf(
    objective: Objective,
    x0: np.ndarray,
    budget: ImageBudget,
    rng: np.random.Generator | None = None,
) -> AscentResult:
    """Maximise ``objective`` over the L-inf ball around ``x0`` intersected with [0, 1].

    The walk starts at ``x0``. Where a sample's gradient is exactly zero (the
    KL objective is stationary at the clean image) the direction is taken
    from a probe point ``x + probe_sigma * noise`` instead.
    """
    rng = rng or np.random.default_rng(0)
    x0 = np.asarray(x0, dtype=float)
    eps = budget.eps_inf
    x = x0.copy()
    best = x0.copy()
    best_val = None
    trace: list[np.ndarray] = []
    momentum = np.zeros_like(x0)
    second = np.zeros_like(x0)

    def record(values, point):
        nonlocal best_val
        trace.append(values)
        if best_val is None:
            best_val = values.copy()
            return
        better = values > best_val
        best[better] = point[better]
        best_val[better] = values[better]

    for t in range(budget.n_iters):
        values, grad = _gradient(objective, x, budget)
        record(values, x)
        dead = ~_per_sample(grad).any(axis=1)
        if dead.any() and budget.probe_sigma > 0:
            noise = rng.standard_normal(x.shape)
            probe = np.clip(x + budget.probe_sigma * noise, 0.0, 1.0)
            _, probe_grad = _gradient(objective, probe, budget)
            grad[dead] = probe_grad[dead]
        if budget.optimizer == FGSM:
            x = project_linf(x0 + eps * np.sign(grad), x0, eps)
        elif budget.optimizer in (PGD, SI):
            x = project_linf(x + budget.step_size * np.sign(grad), x0, eps)
        elif budget.optimizer == MIM:
            l1 = np.abs(_per_sample(grad)).mean(axis=1)
            l1 = np.where(l1 > 0, l1, 1.0).reshape((-1,) + (1,) * (x.ndim - 1))
            momentum = budget.momentum * momentum + grad / l1
            x = project_linf(x + budget.step_size * np.sign(momentum), x0, eps)
        else:  # ADAM, ascent form
            b1, b2 = 0.9, 0.999
            momentum = b1 * momentum + (1 - b1) * grad
            second = b2 * second + (1 - b2) * grad * grad
            m_hat = momentum / (1 - b1 ** (t + 1))
            v_hat = second / (1 - b2 ** (t + 1))
            x = project_linf(x + (eps / 4.0) * m_hat / (np.sqrt(v_hat) + 1e-8), x0, eps)
    final = objective(Tensor(x)).data.copy()
    record(final, x)
    return AscentResult(images=best, objective=best_val, trace=trace)


# -- model-facing attacks --------------------------------------------------------


def _as_batch(model: VLPModel, x_i, x_t):
    x_i = np.asarray(x_i, dtype=float)
    single = x_i.ndim == 3
    if single:
        x_i = x_i[None]
    ids = None
    if x_t is not None:
        if isinstance(x_t, np.ndarray) and x_t.ndim == 2:
            ids = x_t
        elif single:
            ids = pad_tokens([x_t], model.config.max_len)
        else:
            ids = pad_tokens(x_t, model.config.max_len)
    return x_i, ids, single


def _unbatch(result: AscentResult, single: bool) -> AscentResult:
    if not single:
        return result
    return AscentResult(result.images[0], result.objective[0], [t[0:1] for t in result.trace])


def embedding_objective(
    model: VLPModel, x_ref: np.ndarray, target: TargetSpec, ids: np.ndarray | None = None
) -> Objective:
    """Per-sample KL between the target embedding of ``x`` and of ``x_ref``."""
    e_t = model.text_embedding(ids) if ids is not None and target.space != "unimodal" else None
    ref, mask = image_target(model, x_ref, target, ids, e_t)
    ref = Tensor(ref.data)

    def objective(x: Tensor) -> Tensor:
        e, _ = image_target(model, x, target, ids, e_t)
        return kl_embedding_loss(e, ref, mask=mask, batched=True)

    return objective


def embedding_image_attack(
    model: VLPModel,
    x_i,
    x_t,
    target: TargetSpec,
    budget: ImageBudget,
    rng: np.random.Generator | None = None,
) -> AscentResult:
    """Push the target embedding of the image away from the clean one (KL ascent).

    ``x_t`` (token lists or padded ids) is required for multimodal targets and
    stays fixed during the attack.
    """
    target.check(model)
    images, ids, single = _as_batch(model, x_i, x_t)
    if target.space == "multimodal" and ids is None:
        raise ValueError("a multimodal target needs the paired text")
    if budget.eps_inf == 0:
        zero = np.zeros(len(images))
        return _unbatch(AscentResult(images.copy(), zero, [zero]), single)
    objective = embedding_objective(model, images, target, ids)
    return _unbatch(maximize_linf(objective, images, budget, rng), single)


def label_objective(model: VLPModel, ids: np.ndarray, labels: np.ndarray) -> Objective:
    """Per-sample cross-entropy of the entailment head against ``labels``."""
    labels = np.asarray(labels, dtype=np.int64)
    e_t = model.text_embedding(ids)
    rows = np.arange(len(labels))

    def objective(x: Tensor) -> Tensor:
        e_m = model.multimodal_embedding(model.image_embedding(x), e_t, ids)
        lp = log_softmax(ve_logits(model.constants(), e_m), axis=-1)
        return -take_index(lp, (rows, labels))

    return objective


def label_image_attack(
    model: VLPModel,
    x_i,
    x_t,
    true_label,
    budget: ImageBudget,
    rng: np.random.Generator | None = None,
) -> AscentResult:
    """Cross-entropy ascent on the entailment head (the label-space baselines).

    ADAM reproduces Fooling VQA, PGD reproduces SSAP, MIM and SI the SSAP
    variants.
    """
    if model.kind != FUSED:
        raise TypeError("label attacks need a fused model with an entailment head")
    images, ids, single = _as_batch(model, x_i, x_t)
    labels = np.atleast_1d(np.asarray(true_label, dtype=np.int64))
    objective = label_objective(model, ids, labels)
    if budget.eps_inf == 0:
        values = objective(Tensor(images)).data.copy()
        return _unbatch(AscentResult(images.copy(), values, [values]), single)
    return _unbatch(maximize_linf(objective, images, budget, rng), single)
