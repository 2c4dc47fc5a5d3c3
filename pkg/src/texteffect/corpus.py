"""Text data model: documents, tokenization, featurization, lexicons, matching.

Documents carry a covariate, optional true/proxy/boosted treatment labels and
a binary outcome. Everything here is a pure function over immutable inputs.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

__all__ = [
    "Document",
    "Vocabulary",
    "FeatureVector",
    "Lexicon",
    "tokenize",
    "build_vocabulary",
    "document_frequencies",
    "featurize",
    "cosine_similarity",
    "lexicon_proxy",
    "match_pairs",
    "match_pairs_scored",
    "threshold_proxy_scores",
    "read_corpus",
    "write_corpus",
    "read_lexicon",
    "write_lexicon",
    "read_scores",
    "write_scores",
]

# Maximal runs of unicode alphanumerics; underscore counts as a separator.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_BINARY_FIELDS = ("treatment_true", "proxy", "proxy_boosted", "outcome")


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase and split on any maximal run of non-alphanumeric characters."""
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Document:
    """One text unit. `tokens` is always derived from `text` via tokenize()."""

    id: str
    text: str
    covariate: int = 0
    treatment_true: int | None = None
    proxy: int | None = None
    proxy_boosted: int | None = None
    outcome: int | None = None
    embedding: tuple[float, ...] | None = None
    tokens: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be nonempty")
        if self.covariate < 0:
            raise ValueError(f"document {self.id!r}: covariate must be >= 0")
        for name in _BINARY_FIELDS:
            v = getattr(self, name)
            if v is not None and v not in (0, 1):
                raise ValueError(f"document {self.id!r}: {name} must be 0/1, got {v!r}")
        object.__setattr__(self, "tokens", tokenize(self.text))

    def with_fields(self, **kwargs) -> "Document":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    index: Mapping[str, int] = field(repr=False)

    def __post_init__(self) -> None:
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("vocabulary terms must be distinct")

    def __len__(self) -> int:
        return len(self.terms)

    @classmethod
    def from_terms(cls, terms: Iterable[str]) -> "Vocabulary":
        terms = tuple(terms)
        return cls(terms=terms, index={t: i for i, t in enumerate(terms)})


@dataclass(frozen=True)
class FeatureVector:
    """Sparse vector: strictly increasing indices with parallel values."""

    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values must be parallel")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("indices must be strictly increasing")
        if any(not math.isfinite(v) for v in self.values):
            raise ValueError("feature values must be finite")

    def to_dense(self, size: int) -> list[float]:
        dense = [0.0] * size
        for i, v in zip(self.indices, self.values):
            dense[i] = v
        return dense


@dataclass(frozen=True)
class Lexicon:
    words: frozenset[str]

    def __post_init__(self) -> None:
        for w in self.words:
            if not w or w != w.lower():
                raise ValueError(f"lexicon words must be nonempty lowercase: {w!r}")

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Lexicon":
        return cls(words=frozenset(words))


def build_vocabulary(corpus: Sequence[Document], max_size: int) -> Vocabulary:
    """Most frequent `max_size` tokens, ties broken lexicographically."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    if max_size <= 0:
        raise ValueError("max_size must be positive")
    counts: Counter[str] = Counter()
    for doc in corpus:
        counts.update(doc.tokens)
    if not counts:
        raise ValueError("corpus has no tokens")
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocabulary.from_terms(ranked[:max_size])


def document_frequencies(corpus: Sequence[Document], vocab: Vocabulary) -> dict[str, int]:
    """Number of documents containing each vocabulary term."""
    df = dict.fromkeys(vocab.terms, 0)
    for doc in corpus:
        for term in set(doc.tokens):
            if term in df:
                df[term] += 1
    return df


def featurize(
    doc: Document,
    vocab: Vocabulary,
    scheme: str = "counts",
    doc_freq: Mapping[str, int] | None = None,
    n_docs: int | None = None,
) -> FeatureVector:
    """Map a document onto vocabulary features.

    Schemes: "counts" (raw term counts), "binary" (term presence), and
    "tfidf" (count * ln(N / df), requiring `doc_freq` and `n_docs`).
    Out-of-vocabulary tokens contribute nothing.
    """
    if len(vocab) == 0:
        raise ValueError("vocabulary must be nonempty")
    counts: Counter[int] = Counter()
    for tok in doc.tokens:
        j = vocab.index.get(tok)
        if j is not None:
            counts[j] += 1
    indices = sorted(counts)
    if scheme == "counts":
        values = [float(counts[j]) for j in indices]
    elif scheme == "binary":
        values = [1.0 for _ in indices]
    elif scheme == "tfidf":
        if doc_freq is None or n_docs is None:
            raise ValueError("tfidf scheme requires doc_freq and n_docs")
        values = []
        kept = []
        for j in indices:
            df = doc_freq.get(vocab.terms[j], 0)
            if df <= 0:
                continue  # term unseen in the stats corpus carries no weight
            kept.append(j)
            values.append(counts[j] * math.log(n_docs / df))
        indices = kept
    else:
        raise ValueError(f"unknown featurization scheme: {scheme!r}")
    return FeatureVector(indices=tuple(indices), values=tuple(values))


def cosine_similarity(a: FeatureVector, b: FeatureVector) -> float:
    """Cosine of two sparse vectors; zero vectors have similarity 0."""
    dot = 0.0
    bmap = dict(zip(b.indices, b.values))
    for i, v in zip(a.indices, a.values):
        w = bmap.get(i)
        if w is not None:
            dot += v * w
    na = math.sqrt(sum(v * v for v in a.values))
    nb = math.sqrt(sum(v * v for v in b.values))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def lexicon_proxy(doc: Document, lexicon: Lexicon) -> int:
    """1 iff any token of the document appears in the lexicon."""
    return int(any(tok in lexicon.words for tok in doc.tokens))


def match_pairs_scored(corpus: Sequence[Document]) -> list[tuple[str, str, float]]:
    """Pair each outcome-1 document with its most TF-IDF-cosine-similar
    outcome-0 document.

    Returns (id_y1, id_y0, similarity) triples sorted by descending
    similarity so callers can keep the top-k pairs. Similarity ties break
    toward the smaller candidate id; output-order ties break by id_y1.
    Outcome-0 documents may be reused across pairs.
    """
    for doc in corpus:
        if doc.outcome is None:
            raise ValueError(f"document {doc.id!r} has no outcome")
    pos = sorted((d for d in corpus if d.outcome == 1), key=lambda d: d.id)
    neg = sorted((d for d in corpus if d.outcome == 0), key=lambda d: d.id)
    if not pos or not neg:
        raise ValueError("both outcome classes must be nonempty")
    vocab = build_vocabulary(corpus, max_size=sum(len(d.tokens) for d in corpus) or 1)
    df = document_frequencies(corpus, vocab)
    n = len(corpus)
    vecs = {d.id: featurize(d, vocab, "tfidf", doc_freq=df, n_docs=n) for d in corpus}
    out = []
    for p in pos:
        best_id, best_sim = None, -1.0
        for q in neg:
            sim = cosine_similarity(vecs[p.id], vecs[q.id])
            if sim > best_sim or (sim == best_sim and (best_id is None or q.id < best_id)):
                best_id, best_sim = q.id, sim
        out.append((p.id, best_id, best_sim))
    out.sort(key=lambda row: (-row[2], row[0]))
    return out


def match_pairs(corpus: Sequence[Document]) -> list[tuple[str, str]]:
    return [(a, b) for a, b, _ in match_pairs_scored(corpus)]


def threshold_proxy_scores(scores: Mapping[str, float], quantile: float) -> dict[str, int]:
    """Label the top `quantile` fraction of ids 1 and the bottom fraction 0.

    Exactly floor(quantile * n) ids receive each label; everything in the
    middle is dropped from the result. Rank ties break by id.
    """
    if not scores:
        raise ValueError("scores must be nonempty")
    if not 0.0 < quantile <= 0.5:
        raise ValueError("quantile must lie in (0, 0.5]")
    order = sorted(scores, key=lambda i: (-scores[i], i))
    k = int(len(order) * quantile)
    labels: dict[str, int] = {}
    for i in order[:k]:
        labels[i] = 1
    for i in order[len(order) - k :]:
        labels[i] = 0
    return labels


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_JSON_KEYS = {
    "t_true": "treatment_true",
    "t_proxy": "proxy",
    "t_boost": "proxy_boosted",
    "y": "outcome",
}


def read_corpus(path: str | Path) -> list[Document]:
    """Read a JSON Lines corpus (keys: id, text, c, t_true, t_proxy, t_boost, y, embedding)."""
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            kwargs = {
                "id": str(obj["id"]),
                "text": obj["text"],
                "covariate": int(obj.get("c", 0)),
            }
            for key, attr in _JSON_KEYS.items():
                if obj.get(key) is not None:
                    kwargs[attr] = int(obj[key])
            if obj.get("embedding") is not None:
                kwargs["embedding"] = tuple(float(v) for v in obj["embedding"])
            doc = Document(**kwargs)
            if doc.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate document id {doc.id!r}")
            seen.add(doc.id)
            docs.append(doc)
    return docs


def write_corpus(corpus: Sequence[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            obj: dict = {"id": doc.id, "text": doc.text, "c": doc.covariate}
            for key, attr in _JSON_KEYS.items():
                v = getattr(doc, attr)
                if v is not None:
                    obj[key] = v
            if doc.embedding is not None:
                obj["embedding"] = list(doc.embedding)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_lexicon(path: str | Path) -> Lexicon:
    """Read a lexicon file: one lowercase word per line, '#' comments ignored."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.split("#", 1)[0].strip()
            if word:
                words.add(word.lower())
    return Lexicon.from_words(words)


def write_lexicon(lexicon: Lexicon, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(lexicon.words):
            fh.write(word + "\n")


def read_scores(path: str | Path) -> dict[str, float]:
    """Read a proxy-score CSV with header id,score."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "score"]:
            raise ValueError(f"{path}: expected header 'id,score'")
        return {row["id"]: float(row["score"]) for row in reader}


def write_scores(scores: Mapping[str, float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score"])
        for key in sorted(scores):
            writer.writerow([key, repr(float(scores[key]))])
