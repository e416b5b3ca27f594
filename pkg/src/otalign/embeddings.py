"""Loading, validation, and sampling of embedding files, lexicons, and similarity data.

File formats:
  * embedding file: text, first line ``n d``, then ``n`` lines ``word v1 ... vd``
    separated by single spaces (the common plain-text trainer output);
  * lexicon: two-column TSV ``source<TAB>target``;
  * similarity dataset: three-column TSV ``word1<TAB>word2<TAB>score`` with
    scores in [0, 4].
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

DEGENERATE_NORM = 1e-12

__all__ = [
    "ParseError",
    "EmbeddingSet",
    "Lexicon",
    "SimDataset",
    "load_embeddings",
    "save_embeddings",
    "load_lexicon",
    "load_sim_dataset",
    "load_counts",
    "l2_normalize",
    "zipf_weights",
    "uniform_weights",
    "weights_from_counts",
    "reweight",
    "truncate",
    "sample_batch",
]


class ParseError(ValueError):
    """An input file violates its expected format; the message names the line."""


@dataclass(frozen=True)
class EmbeddingSet:
    """An ordered vocabulary with row-major vectors and marginal weights.

    Immutable after construction: the arrays are stored as read-only copies,
    so instances can be shared freely across threads.
    """

    words: tuple[str, ...]
    vectors: np.ndarray
    weights: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=np.float64, order="C")
        weights = np.array(self.weights, dtype=np.float64)
        words = tuple(self.words)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be a 2-d matrix, got shape {vectors.shape}")
        if len(words) != vectors.shape[0]:
            raise ValueError(
                f"{len(words)} words but {vectors.shape[0]} vector rows"
            )
        if len(words) == 0:
            raise ValueError("empty embedding set")
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        if weights.shape != (len(words),):
            raise ValueError(f"weights shape {weights.shape} does not match vocabulary")
        if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if self.normalized:
            norms = np.linalg.norm(vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("normalized flag set but some row is not unit-norm")
        vectors.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @cached_property
    def index(self) -> dict[str, int]:
        """Word to row-index lookup."""
        return {w: i for i, w in enumerate(self.words)}


@dataclass(frozen=True)
class Lexicon:
    """Gold translation pairs; a source word may carry several valid targets."""

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        pairs = tuple((str(s), str(t)) for s, t in self.pairs)
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate (source, target) pairs")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @cached_property
    def targets_by_source(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {}
        for src, tgt in self.pairs:
            out.setdefault(src, []).append(tgt)
        return {s: tuple(ts) for s, ts in out.items()}


@dataclass(frozen=True)
class SimDataset:
    """Human similarity judgements: (word1, word2, score in [0, 4]) triples."""

    triples: tuple[tuple[str, str, float], ...]

    def __post_init__(self) -> None:
        triples = tuple((str(a), str(b), float(s)) for a, b, s in self.triples)
        for a, b, s in triples:
            if not 0.0 <= s <= 4.0:
                raise ValueError(f"similarity score {s} for ({a}, {b}) outside [0, 4]")
        object.__setattr__(self, "triples", triples)

    def __len__(self) -> int:
        return len(self.triples)


def zipf_weights(n: int, s: float = 1.0) -> np.ndarray:
    """Probability vector with mass proportional to rank**(-s), rank starting at 1.

    Serves as a frequency surrogate for embedding files, which are sorted by
    corpus frequency but carry no counts. ``s=0`` gives uniform weights.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if s < 0:
        raise ValueError("exponent must be nonnegative")
    w = np.arange(1, n + 1, dtype=np.float64) ** (-float(s))
    return w / w.sum()


def uniform_weights(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return np.full(n, 1.0 / n)


def weights_from_counts(words: tuple[str, ...], counts: dict[str, float]) -> np.ndarray:
    """Normalize external corpus counts over ``words``; every word must be covered."""
    missing = [w for w in words if w not in counts]
    if missing:
        raise ValueError(f"count file missing {len(missing)} words, first: {missing[0]!r}")
    w = np.array([counts[word] for word in words], dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("counts must be nonnegative with positive total")
    return w / w.sum()


def reweight(e: EmbeddingSet, weights: np.ndarray) -> EmbeddingSet:
    """Replace the marginal weights, revalidating the simplex invariant."""
    return EmbeddingSet(e.words, e.vectors, weights, e.normalized)


def truncate(e: EmbeddingSet, max_vocab: int) -> EmbeddingSet:
    """Keep the first ``max_vocab`` (most frequent) entries, renormalizing weights."""
    if max_vocab >= len(e):
        return e
    if max_vocab < 1:
        raise ValueError("max_vocab must be at least 1")
    w = e.weights[:max_vocab]
    return EmbeddingSet(e.words[:max_vocab], e.vectors[:max_vocab], w / w.sum(), e.normalized)


def load_embeddings(
    path: str | Path,
    max_vocab: int | None = None,
    zipf_exponent: float = 1.0,
) -> EmbeddingSet:
    """Parse a plain-text embedding file into an EmbeddingSet.

    Keeps the first ``min(n, max_vocab)`` entries in file order (files are
    assumed frequency-sorted) and initializes weights with
    ``zipf_weights(count, zipf_exponent)``. Raises :class:`ParseError` naming
    the offending line for malformed headers, rows of the wrong width,
    duplicate words, unparsable floats, and header/row-count mismatches.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header == "":
            raise ParseError("line 1: empty file, expected header 'n d'")
        tokens = header.rstrip("\n").split(" ")
        if len(tokens) != 2:
            raise ParseError(f"line 1: expected header 'n d', got {header.rstrip()!r}")
        try:
            n, d = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise ParseError(f"line 1: non-integer header {header.rstrip()!r}") from None
        if n < 1 or d < 1:
            raise ParseError(f"line 1: header counts must be positive, got {n} {d}")

        target = n if max_vocab is None else min(n, max_vocab)
        if target < 1:
            raise ValueError("max_vocab must be at least 1")
        words: list[str] = []
        seen: set[str] = set()
        vectors = np.empty((target, d), dtype=np.float64)
        lineno = 1
        for lineno, line in enumerate(fh, start=2):
            row = len(words)
            if row == target:
                if target == n and line.strip():
                    raise ParseError(f"line {lineno}: more than the {n} rows declared in the header")
                break
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d + 1:
                raise ParseError(
                    f"line {lineno}: expected {d} vector components, got {len(parts) - 1}"
                )
            word = parts[0]
            if not word:
                raise ParseError(f"line {lineno}: empty word")
            if word in seen:
                raise ParseError(f"line {lineno}: duplicate word {word!r}")
            try:
                vectors[row] = [float(x) for x in parts[1:]]
            except ValueError:
                bad = next(x for x in parts[1:] if not _is_float(x))
                raise ParseError(f"line {lineno}: unparsable float {bad!r}") from None
            seen.add(word)
            words.append(word)
        if len(words) < target:
            raise ParseError(
                f"line {lineno + 1}: expected {n} data rows, file ended after {len(words)}"
            )
    return EmbeddingSet(tuple(words), vectors, zipf_weights(target, zipf_exponent), normalized=False)


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def save_embeddings(e: EmbeddingSet, path: str | Path) -> None:
    """Write the standard text format; floats use repr so reloads are bit-identical."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(e)} {e.dim}\n")
        for word, row in zip(e.words, e.vectors):
            fh.write(word + " " + " ".join(repr(float(x)) for x in row) + "\n")


def l2_normalize(e: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit L2 norm, dropping rows with no direction.

    Rows with norm below 1e-12 are removed together with their words, and the
    remaining weights are renormalized. Idempotent.
    """
    norms = np.linalg.norm(e.vectors, axis=1)
    keep = norms >= DEGENERATE_NORM
    if not np.any(keep):
        raise ValueError("all rows are degenerate (near-zero norm)")
    vectors = e.vectors[keep] / norms[keep, None]
    weights = e.weights[keep]
    total = weights.sum()
    if total <= 0:
        raise ValueError("surviving rows carry zero total weight")
    words = tuple(w for w, k in zip(e.words, keep) if k)
    return EmbeddingSet(words, vectors, weights / total, normalized=True)


def load_lexicon(path: str | Path) -> Lexicon:
    """Parse a two-column TSV of translation pairs, deduplicating repeats."""
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError(f"line {lineno}: expected 2 tab-separated columns, got {len(cols)}")
            pair = (cols[0], cols[1])
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)
    return Lexicon(tuple(pairs))


def load_sim_dataset(path: str | Path) -> SimDataset:
    """Parse a three-column TSV of (word1, word2, score) with scores in [0, 4]."""
    triples: list[tuple[str, str, float]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ParseError(f"line {lineno}: expected 3 tab-separated columns, got {len(cols)}")
            try:
                score = float(cols[2])
            except ValueError:
                raise ParseError(f"line {lineno}: unparsable score {cols[2]!r}") from None
            if not 0.0 <= score <= 4.0:
                raise ParseError(f"line {lineno}: score {score} outside [0, 4]")
            triples.append((cols[0], cols[1], score))
    return SimDataset(tuple(triples))


def load_counts(path: str | Path) -> dict[str, float]:
    """Parse a two-column TSV of word counts for external frequency weighting."""
    counts: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ParseError(f"line {lineno}: expected 2 tab-separated columns, got {len(cols)}")
            try:
                counts[cols[0]] = float(cols[1])
            except ValueError:
                raise ParseError(f"line {lineno}: unparsable count {cols[1]!r}") from None
    return counts


def sample_batch(e: EmbeddingSet, b: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``b`` row indices with replacement, proportionally to ``e.weights``."""
    if b < 1:
        raise ValueError("batch size must be at least 1")
    return rng.choice(len(e), size=b, replace=True, p=e.weights)
