"""Proxy-treatment construction and recall-boosting relabeling.

The relabeler trains a logistic regression on the noisy proxy labels and
flips proxy-0 documents whose predicted probability clears the threshold.
The optimizer is deterministic full-batch gradient descent with backtracking
line search; no library solver, so runs are reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document, FeatureVector, Vocabulary, featurize
from .simulate import sigmoid

__all__ = [
    "ProxyClassifier",
    "BoostConfig",
    "noised_proxy",
    "train_proxy_classifier",
    "predict_proxy_proba",
    "boost",
    "pointbiserial_restrict",
    "proxy_accuracy",
    "save_classifier",
    "load_classifier",
]


@dataclass(frozen=True)
class BoostConfig:
    relabel_mode: str = "t0_only"  # or "all"
    l2_strength: float = 1e-4
    threshold: float = 0.5
    feature_scheme: str = "binary"  # bag-of-words presence; "counts" also accepted
    max_iter: int = 1000
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.relabel_mode not in ("t0_only", "all"):
            raise ValueError(f"unknown relabel mode {self.relabel_mode!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0,1)")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be non-negative")
        if self.feature_scheme not in ("binary", "counts"):
            raise ValueError(f"unknown feature scheme {self.feature_scheme!r}")


@dataclass(frozen=True)
class ProxyClassifier:
    weights: tuple[float, ...]
    bias: float
    feature_subset: tuple[int, ...] | None = None
    vocab: Vocabulary | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if any(not math.isfinite(w) for w in self.weights) or not math.isfinite(self.bias):
            raise ValueError("classifier parameters must be finite")
        if self.feature_subset is not None:
            bad = [j for j in self.feature_subset if not 0 <= j < len(self.weights)]
            if bad:
                raise ValueError(f"feature_subset indices out of range: {bad}")


def noised_proxy(treatments: Sequence[int], accuracy: float, seed: int) -> list[int]:
    """Flip each label independently with probability 1 - accuracy."""
    if not 0.5 <= accuracy <= 1.0:
        raise ValueError("accuracy must be in [0.5, 1]")
    rng = np.random.default_rng(seed)
    flips = rng.random(len(treatments)) < (1.0 - accuracy)
    return [int(t) ^ int(f) for t, f in zip(treatments, flips)]


def _dense_matrix(features: Sequence[FeatureVector], n_features: int) -> np.ndarray:
    x = np.zeros((len(features), n_features))
    for i, fv in enumerate(features):
        for j, v in zip(fv.indices, fv.values):
            x[i, j] = v
    return x


def _nll_and_grad(x, y, w, b, l2):
    z = x @ w + b
    p = sigmoid(z)
    eps = 1e-12
    nll = -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)) + l2 * np.sum(w * w)
    resid = (p - y) / len(y)
    gw = x.T @ resid + 2.0 * l2 * w
    gb = float(np.sum(resid))
    return nll, gw, gb


def train_proxy_classifier(
    features: Sequence[FeatureVector],
    labels: Sequence[int],
    config: BoostConfig,
    n_features: int | None = None,
    feature_subset: Sequence[int] | None = None,
    vocab: Vocabulary | None = None,
) -> ProxyClassifier:
    """L2-penalized logistic regression fit by backtracking gradient descent.

    Runs to gradient-norm tolerance `config.tol` or `config.max_iter`
    iterations, whichever comes first.
    """
    if len(features) != len(labels):
        raise ValueError("features and labels must be aligned")
    y = np.array(labels, dtype=float)
    if not (np.any(y == 1.0) and np.any(y == 0.0)):
        raise ValueError("both proxy classes must be present to train")
    if n_features is None:
        n_features = max((max(fv.indices, default=-1) for fv in features), default=-1) + 1
        if vocab is not None:
            n_features = max(n_features, len(vocab))
    x = _dense_matrix(features, n_features)
    mask = np.ones(n_features, dtype=bool)
    if feature_subset is not None:
        mask[:] = False
        mask[list(feature_subset)] = True
        x = x * mask  # off-subset columns contribute nothing
    w = np.zeros(n_features)
    b = 0.0
    step = 1.0
    nll, gw, gb = _nll_and_grad(x, y, w, b, config.l2_strength)
    for _ in range(config.max_iter):
        gnorm2 = float(gw @ gw + gb * gb)
        if math.sqrt(gnorm2) <= config.tol:
            break
        step = min(step * 2.0, 1e4)  # allow the step to grow back after backtracks
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            w_new *= mask
            nll_new, gw_new, gb_new = _nll_and_grad(x, y, w_new, b_new, config.l2_strength)
            if nll_new <= nll - 1e-4 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        w, b, nll, gw, gb = w_new, b_new, nll_new, gw_new, gb_new
    subset = tuple(sorted(feature_subset)) if feature_subset is not None else None
    return ProxyClassifier(
        weights=tuple(float(v) for v in w), bias=float(b), feature_subset=subset, vocab=vocab
    )


def predict_proxy_proba(clf: ProxyClassifier, features: Sequence[FeatureVector]) -> np.ndarray:
    x = _dense_matrix(features, len(clf.weights))
    return sigmoid(x @ np.array(clf.weights) + clf.bias)


def _doc_features(corpus: Sequence[Document], clf: ProxyClassifier, config: BoostConfig):
    if clf.vocab is None:
        raise ValueError("classifier has no vocabulary attached; pass features explicitly")
    return [featurize(d, clf.vocab, config.feature_scheme) for d in corpus]


def boost(
    corpus: Sequence[Document],
    classifier: ProxyClassifier,
    config: BoostConfig,
    features: Sequence[FeatureVector] | None = None,
) -> list[Document]:
    """Fill proxy_boosted labels.

    t0_only mode keeps every proxy-1 label and relabels proxy-0 documents the
    classifier scores above the threshold; "all" mode ignores the existing
    labels and takes the classifier's prediction everywhere.
    """
    for doc in corpus:
        if doc.proxy is None:
            raise ValueError(f"document {doc.id!r} has no proxy label")
    if features is None:
        features = _doc_features(corpus, classifier, config)
    probs = predict_proxy_proba(classifier, features)
    out = []
    for doc, p in zip(corpus, probs):
        pred = int(p > config.threshold)
        if config.relabel_mode == "t0_only":
            boosted = 1 if doc.proxy == 1 else pred
        else:
            boosted = pred
        out.append(doc.with_fields(proxy_boosted=boosted))
    return out


def pointbiserial_restrict(
    features: Sequence[FeatureVector],
    covariates: Sequence[int],
    k: int,
    n_features: int | None = None,
) -> list[int]:
    """Indices of the k features most point-biserially correlated with a
    binary covariate.

    r_j = (mean1 - mean0) / s_j * sqrt(n1 * n0 / n^2), with s_j the population
    standard deviation of feature j; constant features get r_j = 0. Ties break
    by feature index.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    c = np.array(covariates, dtype=int)
    if set(np.unique(c)) - {0, 1}:
        raise ValueError("covariate must be binary for point-biserial restriction")
    n1 = int(np.sum(c == 1))
    n0 = int(np.sum(c == 0))
    if n1 == 0 or n0 == 0:
        raise ValueError("covariate is constant; correlation undefined")
    if n_features is None:
        n_features = max((max(fv.indices, default=-1) for fv in features), default=-1) + 1
    x = _dense_matrix(features, n_features)
    n = len(c)
    mean1 = x[c == 1].mean(axis=0)
    mean0 = x[c == 0].mean(axis=0)
    s = x.std(axis=0)  # population std
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(s > 0, (mean1 - mean0) / np.where(s > 0, s, 1.0), 0.0)
    r = r * math.sqrt(n1 * n0 / (n * n))
    order = sorted(range(n_features), key=lambda j: (-abs(r[j]), j))
    return sorted(order[: min(k, n_features)])


def proxy_accuracy(proxy: Sequence[int], truth: Sequence[int]) -> dict[str, float]:
    """Accuracy plus precision/recall of the positive class; 0/0 counts as 0."""
    if len(proxy) != len(truth) or not proxy:
        raise ValueError("proxy and truth must be aligned and nonempty")
    p = np.array(proxy, dtype=int)
    t = np.array(truth, dtype=int)
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    acc = float(np.mean(p == t))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return {"accuracy": acc, "precision": precision, "recall": recall}


def save_classifier(clf: ProxyClassifier, path: str | Path) -> None:
    obj: dict = {
        "weights": {str(j): w for j, w in enumerate(clf.weights) if w != 0.0},
        "n_features": len(clf.weights),
        "bias": clf.bias,
    }
    if clf.feature_subset is not None:
        obj["feature_subset"] = list(clf.feature_subset)
    if clf.vocab is not None:
        obj["vocab"] = list(clf.vocab.terms)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_classifier(path: str | Path) -> ProxyClassifier:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    n = int(obj.get("n_features", 1 + max((int(j) for j in obj["weights"]), default=-1)))
    weights = [0.0] * n
    for j, w in obj["weights"].items():
        weights[int(j)] = float(w)
    subset = tuple(obj["feature_subset"]) if "feature_subset" in obj else None
    vocab = Vocabulary.from_terms(obj["vocab"]) if "vocab" in obj else None
    return ProxyClassifier(
        weights=tuple(weights), bias=float(obj["bias"]), feature_subset=subset, vocab=vocab
    )
