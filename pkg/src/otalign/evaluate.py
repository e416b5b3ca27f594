"""Lexicon-induction accuracy, cross-lingual similarity correlation, and a
synthetic rotated-pair benchmark for desk-scale verification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet, Lexicon, truncate, uniform_weights
from .transfer import LinearMap, apply_map

__all__ = [
    "BliResult",
    "SimResult",
    "SynthBenchmark",
    "EvaluationError",
    "topk_by_cosine",
    "accuracy_at_k",
    "pearson",
    "word_similarity_eval",
    "synth_pair",
    "random_orthogonal",
]


class EvaluationError(ValueError):
    """No evaluable items (all queries out of vocabulary, or too few scored pairs)."""


@dataclass(frozen=True)
class BliResult:
    """Lexicon-induction outcome: accuracy at the given k over evaluated queries."""

    accuracy: float
    k: int
    evaluated: int
    skipped: int


@dataclass(frozen=True)
class SimResult:
    """Similarity-prediction outcome: correlation and vocabulary coverage."""

    pearson: float
    coverage: float


def _topk_row(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken toward the lower index."""
    n = scores.shape[0]
    if k >= n:
        return np.argsort(-scores, kind="stable")[:n]
    part = np.argpartition(-scores, k - 1)[:k]
    floor = scores[part].min()
    candidates = np.flatnonzero(scores >= floor)
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order][:k]


def topk_by_cosine(query: np.ndarray, e: EmbeddingSet, k: int) -> np.ndarray:
    """Indices of the k rows most cosine-similar to the query, deterministically.

    Requires a normalized set; ties are broken toward the lower index, and the
    result is invariant to positive rescaling of the query.
    """
    if not e.normalized:
        raise ValueError("embedding set must be l2-normalized for retrieval")
    if not 1 <= k <= len(e):
        raise ValueError(f"k must be in [1, {len(e)}], got {k}")
    query = np.asarray(query, dtype=np.float64)
    norm = np.linalg.norm(query)
    if norm < 1e-12:
        raise ValueError("degenerate query vector")
    return _topk_row(e.vectors @ (query / norm), k)


def accuracy_at_k(
    mapping: LinearMap,
    src: EmbeddingSet,
    tgt: EmbeddingSet,
    lex: Lexicon,
    k: int,
    candidate_limit: int | None = None,
) -> BliResult:
    """Fraction of lexicon queries whose top-k retrieved words contain any gold target.

    Each unique query word present in the source vocabulary counts once;
    retrieval succeeds if any of its gold targets appears among the k nearest
    target words by cosine. Queries missing from the source vocabulary are
    skipped and reported. ``candidate_limit`` restricts the search space to
    the most frequent target words.
    """
    if not (src.normalized and tgt.normalized):
        raise ValueError("embedding sets must be l2-normalized for retrieval")
    space = tgt if candidate_limit is None else truncate(tgt, candidate_limit)
    if not 1 <= k <= len(space):
        raise ValueError(f"k must be in [1, {len(space)}], got {k}")
    gold = lex.targets_by_source
    queries = list(gold)
    present = [q for q in queries if q in src.index]
    skipped = len(queries) - len(present)
    if not present:
        raise EvaluationError("no lexicon query word is present in the source vocabulary")

    mapped = apply_map(mapping, src.vectors[[src.index[q] for q in present]])
    norms = np.linalg.norm(mapped, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError("a mapped query vector is degenerate")
    scores = (mapped / norms[:, None]) @ space.vectors.T
    hits = 0
    for row, q in enumerate(present):
        top = _topk_row(scores[row], k)
        wanted = set(gold[q])
        if any(space.words[i] in wanted for i in top):
            hits += 1
    return BliResult(accuracy=hits / len(present), k=k, evaluated=len(present), skipped=skipped)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Product-moment correlation; requires two or more points and nonzero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d arrays of equal length")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 points")
    xd = x - x.mean()
    yd = y - y.mean()
    vx = float(xd @ xd)
    vy = float(yd @ yd)
    if vx <= 0 or vy <= 0:
        raise ValueError("zero variance input")
    return float((xd @ yd) / np.sqrt(vx * vy))


def word_similarity_eval(
    mapping: LinearMap, src: EmbeddingSet, tgt: EmbeddingSet, ds
) -> SimResult:
    """Correlate model cosines with annotated scores over in-vocabulary pairs.

    The model's predicted similarity for (w1, w2) is the cosine between the
    mapped source vector of w1 and the target vector of w2. Pairs with either
    word out of vocabulary are skipped; coverage reports the evaluated share.
    """
    if not (src.normalized and tgt.normalized):
        raise ValueError("embedding sets must be l2-normalized")
    predicted: list[float] = []
    annotated: list[float] = []
    for w1, w2, score in ds.triples:
        i = src.index.get(w1)
        j = tgt.index.get(w2)
        if i is None or j is None:
            continue
        z = apply_map(mapping, src.vectors[i][None, :])[0]
        norm = np.linalg.norm(z)
        if norm < 1e-12:
            raise ValueError(f"mapped vector for {w1!r} is degenerate")
        predicted.append(float(z @ tgt.vectors[j] / norm))
        annotated.append(score)
    if len(predicted) < 2:
        raise EvaluationError("fewer than 2 similarity pairs are in vocabulary")
    return SimResult(
        pearson=pearson(np.array(predicted), np.array(annotated)),
        coverage=len(predicted) / len(ds.triples),
    )


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random orthogonal matrix: QR of a Gaussian with sign-fixed diagonal."""
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class SynthBenchmark:
    """A ground-truth-aligned pair: source set, rotated target set, identity
    lexicon over synthetic words, and the orthogonal map that generated it."""

    src: EmbeddingSet
    tgt: EmbeddingSet
    lexicon: Lexicon
    gold: LinearMap


def synth_pair(n: int, d: int, noise_sigma: float, seed: int) -> SynthBenchmark:
    """Generate a ground-truth-aligned pair of embedding sets for benchmarking.

    Samples n Gaussian d-vectors with a random nonzero mean and power-law axis
    scales (an isotropic cloud is rotation-invariant, so alignment would be
    unidentifiable from distributions alone), normalizes them into the source
    set, and builds the target set by applying a random orthogonal matrix plus
    Gaussian noise before renormalizing. The lexicon pairs each synthetic word
    ``w<i>`` with itself, and the generating matrix is returned as the gold
    map. Deterministic for a fixed seed; uniform weights.
    """
    if n < 2 or d < 2:
        raise ValueError("need n >= 2 and d >= 2")
    rng = np.random.default_rng(seed)
    axis_scales = np.arange(1, d + 1, dtype=np.float64) ** -0.5
    mean = rng.normal(size=d)
    mean /= np.linalg.norm(mean)
    raw = mean + rng.normal(size=(n, d)) * axis_scales
    q = random_orthogonal(d, rng)
    noisy = raw @ q.T + rng.normal(size=(n, d)) * noise_sigma

    src_vecs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    tgt_vecs = noisy / np.linalg.norm(noisy, axis=1, keepdims=True)
    words = tuple(f"w{i}" for i in range(n))
    weights = uniform_weights(n)
    src = EmbeddingSet(words, src_vecs, weights, normalized=True)
    tgt = EmbeddingSet(words, tgt_vecs, weights, normalized=True)
    lex = Lexicon(tuple((w, w) for w in words))
    return SynthBenchmark(src=src, tgt=tgt, lexicon=lex, gold=LinearMap(q))
