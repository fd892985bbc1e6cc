"""Synthetic image-caption corpus of colored shapes on a 3x3 grid.

Each scene holds one or two shapes, each inside its own grid cell. Every
scene yields three captions: the matched (entailed) one, a contradiction
with one color or shape swapped, and a neutral one claiming a material the
picture cannot show. Concepts have several surface forms; the alternates
are rarer in training text and make up the synonym lexicon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, CLS, UNK = 0, 1, 2
ENTAIL, NEUTRAL, CONTRADICT = 0, 1, 2
LABELS = ("entail", "neutral", "contradict")

COLORS = {
    "red": ((0.85, 0.15, 0.15), ("red", "crimson", "scarlet")),
    "blue": ((0.15, 0.30, 0.90), ("blue", "azure", "navy")),
    "green": ((0.15, 0.75, 0.20), ("green", "lime", "emerald")),
    "yellow": ((0.90, 0.85, 0.15), ("yellow", "golden", "amber")),
    "purple": ((0.60, 0.20, 0.75), ("purple", "violet", "magenta")),
    "white": ((0.92, 0.92, 0.92), ("white", "ivory", "pale")),
    "orange": ((0.95, 0.55, 0.10), ("orange", "tangerine", "apricot")),
    "cyan": ((0.15, 0.80, 0.85), ("cyan", "teal", "aqua")),
}
SHAPES = {
    "circle": ("circle", "disc", "round"),
    "square": ("square", "box", "block"),
    "triangle": ("triangle", "wedge", "pyramid"),
    "cross": ("cross", "plus", "star"),
    "diamond": ("diamond", "rhombus", "lozenge"),
}
ROWS = (("top", "upper"), ("middle", "central"), ("bottom", "lower"))
COLS = (("left", "leftmost"), ("center", "centre"), ("right", "rightmost"))
RELATIONS = {
    "above": ("above", "over"),
    "below": ("below", "under"),
    "left": ("left",),
    "right": ("right",),
}
ARTICLES = ("a", "one")
FILLERS = ("the", "in", "of", "is")
MATERIALS = ("wooden", "metal", "glass", "paper", "stone", "plastic")

IMAGE_SIZE = 24
GRID = 3
CELL = IMAGE_SIZE // GRID
SINGLE_SHAPE_RATE = 0.15


def _build_vocab() -> tuple[list[str], dict[str, list[str]]]:
    words = ["[PAD]", "[CLS]", "[UNK]"]
    groups: list[tuple[str, ...]] = [forms for _, forms in COLORS.values()]
    groups += list(SHAPES.values()) + list(ROWS) + list(COLS) + list(RELATIONS.values())
    groups.append(ARTICLES)
    synonyms: dict[str, list[str]] = {}
    for forms in groups:
        for w in forms:
            if w not in words:
                words.append(w)
        for w in forms:
            synonyms.setdefault(w, [])
            synonyms[w] += [o for o in forms if o != w and o not in synonyms[w]]
    for w in FILLERS + MATERIALS:
        if w not in words:
            words.append(w)
    return words, synonyms


VOCAB, _SYNONYM_WORDS = _build_vocab()
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}


def default_lexicon() -> dict[int, list[int]]:
    """Token id -> ids of the other surface forms of the same concept."""
    return {
        WORD_TO_ID[w]: [WORD_TO_ID[o] for o in others]
        for w, others in _SYNONYM_WORDS.items()
        if others
    }


def encode_words(words: list[str]) -> list[int]:
    return [CLS] + [WORD_TO_ID[w] for w in words]


def decode_ids(ids) -> str:
    return " ".join(VOCAB[i] for i in ids if i not in (PAD, CLS))


@dataclass(frozen=True)
class ShapeSpec:
    color: str
    shape: str
    row: int
    col: int


@dataclass
class ToyCorpus:
    """Images ``[N, 3, 24, 24]`` with matched, contradiction and neutral captions."""

    seed: int
    images: np.ndarray
    captions: list[list[int]]
    contradictions: list[list[int]]
    neutrals: list[list[int]]
    scenes: list[tuple[ShapeSpec, ...]]
    vocab: list[str] = field(default_factory=lambda: list(VOCAB))
    lexicon: dict[int, list[int]] = field(default_factory=default_lexicon)

    def __len__(self) -> int:
        return len(self.captions)

    def entailment_triples(self, indices=None) -> list[tuple[int, list[int], int]]:
        """(image index, caption, label) for every caption kind of the given scenes."""
        indices = range(len(self)) if indices is None else indices
        out = []
        for i in indices:
            out.append((i, self.captions[i], ENTAIL))
            out.append((i, self.neutrals[i], NEUTRAL))
            out.append((i, self.contradictions[i], CONTRADICT))
        return out

    def reviewed(self, indices, rng: np.random.Generator, p_primary: float = 0.7) -> ToyCorpus:
        """Copy in which the given scenes get a fresh rendering and fresh captions."""
        images = self.images.copy()
        caps, contras, neutrals = list(self.captions), list(self.contradictions), list(self.neutrals)
        for i in indices:
            images[i], caps[i], contras[i], neutrals[i] = scene_view(self.scenes[i], rng, p_primary)
        return ToyCorpus(self.seed, images, caps, contras, neutrals, self.scenes, self.vocab, self.lexicon)

    def split(self, n_eval: int) -> tuple[np.ndarray, np.ndarray]:
        """Train/held-out index arrays; the last ``n_eval`` scenes are held out."""
        n = len(self)
        n_eval = min(n_eval, n)
        return np.arange(n - n_eval), np.arange(n - n_eval, n)


def _surface(rng: np.random.Generator, forms: tuple[str, ...], p_primary: float) -> str:
    if len(forms) == 1 or rng.random() < p_primary:
        return forms[0]
    return forms[1 + int(rng.integers(len(forms) - 1))]


def _shape_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    if kind == "circle":
        return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2
    if kind == "square":
        return np.ones((size, size), dtype=bool)
    if kind == "triangle":
        return np.abs(xx - c) <= (yy + 1) / 2.0
    if kind == "cross":
        w = max(1, size // 3)
        lo = (size - w) // 2
        return ((xx >= lo) & (xx < lo + w)) | ((yy >= lo) & (yy < lo + w))
    if kind == "diamond":
        return np.abs(yy - c) + np.abs(xx - c) <= size / 2.0
    raise ValueError(kind)


def render_scene(scene: tuple[ShapeSpec, ...], rng: np.random.Generator) -> np.ndarray:
    background = rng.uniform(0.05, 0.35)
    img = np.full((3, IMAGE_SIZE, IMAGE_SIZE), background)
    img += rng.normal(0.0, 0.03, size=img.shape)
    for spec in scene:
        size = int(rng.integers(6, 8))
        oy = spec.row * CELL + int(rng.integers(0, CELL - size + 1))
        ox = spec.col * CELL + int(rng.integers(0, CELL - size + 1))
        rgb = np.asarray(COLORS[spec.color][0]) + rng.uniform(-0.06, 0.06, size=3)
        mask = _shape_mask(spec.shape, size, rng)
        for ch in range(3):
            patch = img[ch, oy : oy + size, ox : ox + size]
            patch[mask] = rgb[ch]
    return np.clip(img, 0.0, 1.0)


def _relation(a: ShapeSpec, b: ShapeSpec, rng: np.random.Generator) -> str:
    options = []
    if a.row < b.row:
        options.append("above")
    if a.row > b.row:
        options.append("below")
    if a.col < b.col:
        options.append("left")
    if a.col > b.col:
        options.append("right")
    return options[int(rng.integers(len(options)))]


def _caption_words(
    scene: tuple[ShapeSpec, ...], relation: str | None, rng: np.random.Generator, p: float
) -> list[str]:
    def obj(spec: ShapeSpec) -> list[str]:
        return [
            _surface(rng, ARTICLES, p),
            _surface(rng, COLORS[spec.color][1], p),
            _surface(rng, SHAPES[spec.shape], p),
        ]

    first = obj(scene[0])
    if len(scene) == 1:
        spec = scene[0]
        return first + ["in", "the", _surface(rng, ROWS[spec.row], p), _surface(rng, COLS[spec.col], p)]
    rel = [_surface(rng, RELATIONS[relation], p)]
    if relation in ("left", "right"):
        rel.append("of")
    return first + rel + obj(scene[1])


def _sample_scene(rng: np.random.Generator) -> tuple[ShapeSpec, ...]:
    n_obj = 1 if rng.random() < SINGLE_SHAPE_RATE else 2
    cells = rng.choice(GRID * GRID, size=n_obj, replace=False)
    colors = list(COLORS)
    shapes = list(SHAPES)
    return tuple(
        ShapeSpec(
            colors[int(rng.integers(len(colors)))],
            shapes[int(rng.integers(len(shapes)))],
            int(c) // GRID,
            int(c) % GRID,
        )
        for c in cells
    )


def _contradict(scene: tuple[ShapeSpec, ...], rng: np.random.Generator) -> tuple[ShapeSpec, ...]:
    target = int(rng.integers(len(scene)))
    spec = scene[target]
    if rng.random() < 0.5:
        colors = [c for c in COLORS if c != spec.color]
        spec = ShapeSpec(colors[int(rng.integers(len(colors)))], spec.shape, spec.row, spec.col)
    else:
        shapes = [s for s in SHAPES if s != spec.shape]
        spec = ShapeSpec(spec.color, shapes[int(rng.integers(len(shapes)))], spec.row, spec.col)
    return tuple(spec if i == target else s for i, s in enumerate(scene))


INVERSE = {"above": "below", "below": "above", "left": "right", "right": "left"}


def scene_view(
    scene: tuple[ShapeSpec, ...], rng: np.random.Generator, p_primary: float = 0.7
) -> tuple[np.ndarray, list[int], list[int], list[int]]:
    """One rendering of ``scene`` with its matched, contradicting and neutral captions.

    Repeated calls give new pixels and new wording for the same scene, which
    is what training uses as augmentation.
    """
    image = render_scene(scene, rng)
    ordered = scene
    relation = None
    if len(scene) == 2:
        relation = _relation(scene[0], scene[1], rng)
        if rng.random() < 0.5:
            ordered, relation = (scene[1], scene[0]), INVERSE[relation]
    caption = encode_words(_caption_words(ordered, relation, rng, p_primary))
    contradiction = encode_words(_caption_words(_contradict(ordered, rng), relation, rng, p_primary))
    spec = scene[int(rng.integers(len(scene)))]
    material = MATERIALS[int(rng.integers(len(MATERIALS)))]
    neutral = [
        "the",
        _surface(rng, COLORS[spec.color][1], p_primary),
        _surface(rng, SHAPES[spec.shape], p_primary),
        "is",
        material,
    ]
    return image, caption, contradiction, encode_words(neutral)


def synthesize_corpus(seed: int, n_pairs: int, p_primary: float = 0.7) -> ToyCorpus:
    """Deterministic corpus of ``n_pairs`` scenes generated from ``seed``."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng([seed, 0xC0])
    images, caps, contras, neutrals, scenes = [], [], [], [], []
    for _ in range(n_pairs):
        scene = _sample_scene(rng)
        image, caption, contradiction, neutral = scene_view(scene, rng, p_primary)
        images.append(image)
        caps.append(caption)
        contras.append(contradiction)
        neutrals.append(neutral)
        scenes.append(scene)
    return ToyCorpus(
        seed=seed,
        images=np.stack(images),
        captions=caps,
        contradictions=contras,
        neutrals=neutrals,
        scenes=scenes,
    )


def save_lexicon(lexicon: dict[int, list[int]], path) -> None:
    """One line per source id: ``src<TAB>c1,c2,...``."""
    lines = [f"{src}\t{','.join(str(c) for c in cands)}" for src, cands in sorted(lexicon.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_lexicon(path) -> dict[int, list[int]]:
    lexicon: dict[int, list[int]] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            src, cands = line.split("\t")
            lexicon[int(src)] = [int(c) for c in cands.split(",") if c]
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: malformed lexicon line") from exc
    return lexicon
