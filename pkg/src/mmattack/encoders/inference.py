"""Single-sample encoders and downstream heads: retrieval and visual entailment."""

from __future__ import annotations

import numpy as np

from mmattack.diffcore import Tensor, constant

from .corpus import CLS, LABELS, ToyCorpus
from .model import FUSED, FusedVLPModel, VLPModel, itm_logits, normalize, pad_tokens, project

SHORTLIST_FACTOR = 4


def _check_image(image) -> np.ndarray:
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=float)
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValueError("image pixels must lie in [0, 1]")
    return data


def _check_tokens(model: VLPModel, tokens) -> list[int]:
    tokens = [int(t) for t in tokens]
    if len(tokens) < 2 or tokens[0] != CLS:
        raise ValueError("token sequence needs the CLS id first and at least one content token")
    if min(tokens) < 0 or max(tokens) >= model.config.vocab_size:
        raise ValueError("token id out of vocabulary")
    return tokens


def encode_image(model: VLPModel, image) -> Tensor:
    """``[C, H, W]`` image -> ``[1 + P, d]`` embedding, differentiable in the pixels."""
    _check_image(image)
    x = constant(image)
    return model.image_embedding(x.reshape((1,) + x.shape))[0]


def encode_text(model: VLPModel, tokens) -> Tensor:
    """Token list -> ``[len, d]`` embedding (padding rows dropped)."""
    tokens = _check_tokens(model, tokens)
    ids = pad_tokens([tokens], model.config.max_len)
    return model.text_embedding(ids)[0, : len(tokens)]


def encode_multimodal(model: FusedVLPModel, e_i, e_t) -> Tensor:
    """Fuse ``[Li, d]`` image and ``[Lt, d]`` text embeddings into ``[Lt, d]``."""
    if model.kind != FUSED:
        raise TypeError("multimodal encoding needs a fused model")
    e_i, e_t = constant(e_i), constant(e_t)
    if e_i.shape[-1] != e_t.shape[-1]:
        raise ValueError(f"embedding width mismatch {e_i.shape[-1]} vs {e_t.shape[-1]}")
    n = e_t.shape[0]
    ids = np.ones((1, n), dtype=np.int64)
    out = model.multimodal_embedding(e_i.reshape((1,) + e_i.shape), e_t.reshape((1,) + e_t.shape), ids)
    return out[0]


def itc_similarity(model: VLPModel, image, tokens) -> float:
    """Cosine similarity of the projected CLS embeddings."""
    _check_image(image)
    tokens = _check_tokens(model, tokens)
    img, txt = model.itc_features(images=np.asarray(image)[None], ids=pad_tokens([tokens], model.config.max_len))
    return float(np.clip((img.data * txt.data).sum(), -1.0, 1.0))


def predict_entailment(model: FusedVLPModel, image, tokens) -> str:
    tokens = _check_tokens(model, tokens)
    logits = model.entailment_logits(np.asarray(image)[None], pad_tokens([tokens], model.config.max_len))
    return LABELS[int(np.argmax(logits.data[0]))]


def predict_entailment_batch(model: FusedVLPModel, images: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Class indices; argmax picks the lowest index on ties."""
    return np.argmax(model.entailment_logits(images, ids).data, axis=-1)


def similarity_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs dot products, each one summed the same way.

    A BLAS product can round equal rows differently depending on where they
    sit in the block, which would break ties that should go to the lower id.
    """
    return (a[:, None, :] * b[None, :, :]).sum(-1)


def rank_order(scores: np.ndarray, ids: np.ndarray | None = None) -> np.ndarray:
    """Positions sorted by descending score, ties by lower id."""
    ids = np.arange(len(scores)) if ids is None else np.asarray(ids)
    return np.lexsort((ids, -np.asarray(scores)))


def _two_stage(itc: np.ndarray, itm_fn, k: int) -> np.ndarray:
    order = rank_order(itc)
    if itm_fn is None:
        return order[:k]
    shortlist = np.sort(order[: min(SHORTLIST_FACTOR * k, len(itc))])
    itm = itm_fn(shortlist)
    return shortlist[rank_order(itm, shortlist)][:k]


def retrieve(model: VLPModel, query, gallery, k: int) -> list[int]:
    """Top-``k`` gallery ids for an image query (texts gallery) or a text query (images gallery).

    Aligned models rank by ITC similarity. Fused models shortlist
    ``min(4k, len(gallery))`` candidates by ITC and re-rank them by ITM score.
    """
    if len(gallery) == 0:
        raise ValueError("empty gallery")
    if not 1 <= k <= len(gallery):
        raise ValueError("k must be between 1 and the gallery size")
    max_len = model.config.max_len
    image_query = np.asarray(query).ndim == 3
    if image_query:
        images = np.asarray(query, dtype=float)[None]
        texts = pad_tokens(gallery, max_len)
    else:
        images = np.asarray(gallery, dtype=float)
        texts = pad_tokens([query], max_len)
    img, txt = model.itc_features(images=images, ids=texts)
    itc = similarity_matrix(img.data, txt.data).reshape(-1)
    itm_fn = None
    if model.kind == FUSED:
        def itm_fn(cands):
            if image_query:
                return model.itm_score(np.repeat(images, len(cands), axis=0), texts[cands]).data
            return model.itm_score(images[cands], np.repeat(texts, len(cands), axis=0)).data
    return [int(i) for i in _two_stage(itc, itm_fn, k)]


def _shortlists(sims: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top ``min(4k, n)`` ids by ITC, ties by lower id, sorted by id."""
    n = sims.shape[1]
    size = min(SHORTLIST_FACTOR * k, n)
    return np.stack([np.sort(rank_order(row)[:size]) for row in sims])


def retrieval_hits(
    model: VLPModel,
    images: np.ndarray,
    ids: np.ndarray,
    k: int = 1,
    adv_images: np.ndarray | None = None,
    adv_ids: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-query top-``k`` hits for TR (image queries) and IR (text queries).

    Query ``q`` ranks the clean gallery in which its own ground-truth item is
    replaced by the adversarial version, and the query itself is adversarial.
    Without adversarial inputs this is the clean retrieval.
    """
    adv_images = images if adv_images is None else adv_images
    adv_ids = ids if adv_ids is None else adv_ids
    n = len(images)
    k = min(k, n)
    p = model.constants()
    e_ci, e_ct = model.image_embedding(images, p), model.text_embedding(ids, p)
    e_ai, e_at = model.image_embedding(adv_images, p), model.text_embedding(adv_ids, p)

    def feats(e, which):
        return normalize(project(p, which, e[:, 0])).data

    ci, ct, ai, at = feats(e_ci, "img"), feats(e_ct, "txt"), feats(e_ai, "img"), feats(e_at, "txt")
    diag = np.arange(n)
    tr_sims = similarity_matrix(ai, ct)
    tr_sims[diag, diag] = (ai * at).sum(-1)
    ir_sims = similarity_matrix(at, ci)
    ir_sims[diag, diag] = (at * ai).sum(-1)
    if model.kind != FUSED:
        tr_top = np.stack([rank_order(row)[:k] for row in tr_sims])
        ir_top = np.stack([rank_order(row)[:k] for row in ir_sims])
        return (tr_top == diag[:, None]).any(-1), (ir_top == diag[:, None]).any(-1)

    def rerank(short, query_emb, gallery_clean, gallery_adv, text_query):
        q_rows = np.repeat(diag, short.shape[1])
        cand = short.reshape(-1)
        own = cand == q_rows
        g_clean = gallery_clean.data[cand]
        g_adv = gallery_adv.data[q_rows]
        g = np.where(own[:, None, None], g_adv, g_clean)
        q = query_emb.data[q_rows]
        if text_query:
            e_img, e_txt, tok = g, q, adv_ids[q_rows]
        else:
            e_img, e_txt = q, g
            tok = np.where(own[:, None], adv_ids[q_rows], ids[cand])
        e_m = model.multimodal_embedding(Tensor(e_img), Tensor(e_txt), tok, p)
        logits = itm_logits(p, e_m).data
        scores = (logits[:, 1] - logits[:, 0]).reshape(short.shape)
        top = np.stack([s_row[rank_order(sc, s_row)][:k] for s_row, sc in zip(short, scores)])
        return (top == diag[:, None]).any(-1)

    tr = rerank(_shortlists(tr_sims, k), e_ai, e_ct, e_at, text_query=False)
    ir = rerank(_shortlists(ir_sims, k), e_at, e_ci, e_ai, text_query=True)
    return tr, ir


def evaluate_clean(model: VLPModel, corpus: ToyCorpus, indices) -> dict[str, float]:
    """Held-out R@1 in both directions and, for fused models, entailment accuracy."""
    indices = np.asarray(indices)
    images = corpus.images[indices]
    ids = pad_tokens([corpus.captions[i] for i in indices], model.config.max_len)
    tr, ir = retrieval_hits(model, images, ids, k=1)
    metrics = {"tr_r1": float(tr.mean()), "ir_r1": float(ir.mean())}
    if model.kind == FUSED:
        triples = corpus.entailment_triples(indices)
        tri_images = corpus.images[[t[0] for t in triples]]
        tri_ids = pad_tokens([t[1] for t in triples], model.config.max_len)
        labels = np.array([t[2] for t in triples])
        pred = predict_entailment_batch(model, tri_images, tri_ids)
        metrics["ve_acc"] = float((pred == labels).mean())
        metrics["ve_entail_recall"] = float((pred[labels == 0] == 0).mean())
    return metrics

