"""Text adjustment: a learned representation feeding two per-treatment heads.

The outcome model is
    q(t, doc) = sigmoid(head_b[t] . b(W) + head_c[t] . onehot(C) + bias)
with b(W) either a trainable tanh bag-of-words encoder or an externally
supplied per-document embedding. Head t only ever receives gradient from
examples whose (boosted) proxy label equals t; the encoder is shared. The
treatment-effect estimate is the sample average of q(1, .) - q(0, .).

Training is plain minibatch SGD with a fixed shuffling schedule, so identical
(corpus, config, seed) inputs reproduce identical parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Document, Vocabulary, build_vocabulary
from .estimators import AteEstimate
from .simulate import sigmoid

__all__ = [
    "TextRepresentation",
    "OutcomeModel",
    "TrainConfig",
    "encode",
    "q_predict",
    "train",
    "estimate_psi_proxy",
    "cross_validated_ate",
    "loss_and_grads",
    "save_model",
    "load_model",
    "load_embeddings",
    "attach_embeddings",
    "stratified_folds",
]

TRAINED_BOW = "trained-bow"
EXTERNAL = "external-embedding"


@dataclass(frozen=True)
class TextRepresentation:
    kind: str
    dim: int
    encoder_weights: np.ndarray | None = None  # (dim, n_features)
    encoder_bias: np.ndarray | None = None  # (dim,)
    vocab: Vocabulary | None = None

    def __post_init__(self) -> None:
        if self.kind not in (TRAINED_BOW, EXTERNAL):
            raise ValueError(f"unknown representation kind {self.kind!r}")
        if self.dim <= 0:
            raise ValueError("representation dim must be positive")
        if self.kind == TRAINED_BOW:
            if self.encoder_weights is None or self.encoder_bias is None or self.vocab is None:
                raise ValueError("trained-bow representation needs weights, bias and vocab")
            if not np.all(np.isfinite(self.encoder_weights)):
                raise ValueError("encoder weights must be finite")


@dataclass(frozen=True)
class OutcomeModel:
    representation: TextRepresentation
    head_b: np.ndarray  # (2, dim)
    head_c: np.ndarray  # (2, n_covariates)
    bias: float
    alpha: float

    def __post_init__(self) -> None:
        if self.head_b.shape != (2, self.representation.dim):
            raise ValueError("head_b must be two vectors of the representation dim")
        if self.head_c.ndim != 2 or self.head_c.shape[0] != 2:
            raise ValueError("head_c must be two vectors over covariate levels")
        if not (np.all(np.isfinite(self.head_b)) and np.all(np.isfinite(self.head_c))):
            raise ValueError("heads must be finite")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    @property
    def n_covariates(self) -> int:
        return self.head_c.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 0.1
    folds: int | tuple[int, int, int] = 2
    seed: int = 0
    dim: int = 32
    head_weight: float = 1.0
    reg_weight: float = 1.0
    val_fraction: float = 1.0 / 6.0  # carved from each fold's training part
    init_scale: float = 0.05

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if isinstance(self.folds, tuple):
            if len(self.folds) != 3 or any(v < 0 for v in self.folds):
                raise ValueError("folds triple must be (train, validation, test) sizes")
        elif self.folds < 1:
            raise ValueError("fold count must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


# ---------------------------------------------------------------------------
# Features and forward pass
# ---------------------------------------------------------------------------


def _bow_matrix(corpus: Sequence[Document], vocab: Vocabulary) -> np.ndarray:
    x = np.zeros((len(corpus), len(vocab)))
    for i, doc in enumerate(corpus):
        for tok in set(doc.tokens):
            j = vocab.index.get(tok)
            if j is not None:
                x[i, j] = 1.0
    return x


def _embedding_matrix(corpus: Sequence[Document], dim: int) -> np.ndarray:
    rows = []
    for doc in corpus:
        if doc.embedding is None:
            raise ValueError(f"document {doc.id!r} has no embedding")
        if len(doc.embedding) != dim:
            raise ValueError(
                f"document {doc.id!r}: embedding dim {len(doc.embedding)} != model dim {dim}"
            )
        rows.append(doc.embedding)
    return np.array(rows, dtype=float)


def _encode_batch(rep: TextRepresentation, x: np.ndarray) -> np.ndarray:
    if rep.kind == TRAINED_BOW:
        return np.tanh(x @ rep.encoder_weights.T + rep.encoder_bias)
    return x


def encode(model: OutcomeModel, doc: Document) -> np.ndarray:
    """Representation b(W) for one document."""
    rep = model.representation
    if rep.kind == TRAINED_BOW:
        x = _bow_matrix([doc], rep.vocab)
    else:
        x = _embedding_matrix([doc], rep.dim)
    return _encode_batch(rep, x)[0]


def q_predict(model: OutcomeModel, t: int, doc: Document) -> float:
    """Predicted outcome probability under head t."""
    if t not in (0, 1):
        raise ValueError("t must be 0 or 1")
    if not 0 <= doc.covariate < model.n_covariates:
        raise ValueError(
            f"document {doc.id!r}: covariate {doc.covariate} outside model arity "
            f"{model.n_covariates}"
        )
    h = encode(model, doc)
    logit = float(model.head_b[t] @ h + model.head_c[t, doc.covariate] + model.bias)
    return float(sigmoid(logit))


def _q_batch(params: Mapping[str, np.ndarray], rep_kind: str, x, c_idx, t) -> tuple:
    if rep_kind == TRAINED_BOW:
        h = np.tanh(x @ params["W_enc"].T + params["b_enc"])
    else:
        h = x
    mb = params["head_b"][t]  # (n, dim)
    logit = np.sum(mb * h, axis=1) + params["head_c"][t, c_idx] + params["bias"]
    return sigmoid(logit), h


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def loss_and_grads(
    params: Mapping[str, np.ndarray],
    rep_kind: str,
    x: np.ndarray,
    c_idx: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
    alpha: float,
    head_weight: float = 1.0,
    reg_weight: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Exact value and gradient of head_weight * CE + reg_weight * alpha * ||W_enc||^2.

    Head t only accumulates gradient from rows with t_i = t; the encoder
    accumulates from every row.
    """
    n = len(y)
    p, h = _q_batch(params, rep_kind, x, c_idx, t)
    eps = 1e-12
    ce = -float(np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
    dlogit = head_weight * (p - y) / n
    n_c = params["head_c"].shape[1]
    g_head_b = np.zeros_like(params["head_b"])
    g_head_c = np.zeros_like(params["head_c"])
    for tv in (0, 1):
        rows = t == tv
        g_head_b[tv] = dlogit[rows] @ h[rows]
        g_head_c[tv] = np.bincount(c_idx[rows], weights=dlogit[rows], minlength=n_c)
    grads = {
        "head_b": g_head_b,
        "head_c": g_head_c,
        "bias": np.array(float(np.sum(dlogit))),
    }
    loss = head_weight * ce
    if rep_kind == TRAINED_BOW:
        dh = dlogit[:, None] * params["head_b"][t]
        du = dh * (1.0 - h * h)
        g_w = du.T @ x + reg_weight * alpha * 2.0 * params["W_enc"]
        grads["W_enc"] = g_w
        grads["b_enc"] = du.sum(axis=0)
        loss += reg_weight * alpha * float(np.sum(params["W_enc"] ** 2))
    return loss, grads


def _init_params(rng, rep_kind, dim, n_features, n_c, scale=0.05):
    params = {
        "head_b": rng.normal(0.0, scale, size=(2, dim)),
        "head_c": np.zeros((2, n_c)),
        "bias": np.array(0.0),
    }
    if rep_kind == TRAINED_BOW:
        params["W_enc"] = rng.normal(0.0, scale, size=(dim, n_features))
        params["b_enc"] = np.zeros(dim)
    return params


def _sgd_epoch(params, rep_kind, x, c_idx, t, y, order, config, alpha):
    lr = config.learning_rate
    # Decay factor for the encoder penalty; clamped so huge alpha stays stable.
    decay = max(0.0, 1.0 - 2.0 * lr * alpha * config.reg_weight)
    for start in range(0, len(order), config.batch_size):
        batch = order[start : start + config.batch_size]
        _, grads = loss_and_grads(
            params, rep_kind, x[batch], c_idx[batch], t[batch], y[batch],
            alpha=0.0, head_weight=config.head_weight,
        )
        for key, g in grads.items():
            params[key] = params[key] - lr * g
        if rep_kind == TRAINED_BOW and alpha > 0.0:
            params["W_enc"] = params["W_enc"] * decay


def _mean_ce(params, rep_kind, x, c_idx, t, y, config):
    loss, _ = loss_and_grads(params, rep_kind, x, c_idx, t, y, alpha=0.0,
                             head_weight=1.0, reg_weight=0.0)
    return loss


def _prepare(corpus, rep_kind, vocab, dim, n_covariates=None):
    if rep_kind == TRAINED_BOW:
        if vocab is None:
            vocab = build_vocabulary(corpus, max_size=2000)
        x = _bow_matrix(corpus, vocab)
    elif rep_kind == EXTERNAL:
        dims = {len(d.embedding) for d in corpus if d.embedding is not None}
        if not dims:
            raise ValueError("external-embedding mode requires document embeddings")
        dim = dims.pop()
        x = _embedding_matrix(corpus, dim)
    else:
        raise ValueError(f"unknown representation kind {rep_kind!r}")
    c_idx = np.array([d.covariate for d in corpus], dtype=int)
    n_c = n_covariates if n_covariates is not None else int(c_idx.max()) + 1
    t = []
    y = []
    for doc in corpus:
        if doc.proxy_boosted is None:
            raise ValueError(f"document {doc.id!r} has no proxy_boosted label")
        if doc.outcome is None:
            raise ValueError(f"document {doc.id!r} has no outcome")
        t.append(doc.proxy_boosted)
        y.append(doc.outcome)
    return x, c_idx, n_c, np.array(t, dtype=int), np.array(y, dtype=float), vocab, dim


def _params_to_model(params, rep_kind, vocab, dim, alpha) -> OutcomeModel:
    if rep_kind == TRAINED_BOW:
        rep = TextRepresentation(
            kind=TRAINED_BOW, dim=dim,
            encoder_weights=params["W_enc"].copy(), encoder_bias=params["b_enc"].copy(),
            vocab=vocab,
        )
    else:
        rep = TextRepresentation(kind=EXTERNAL, dim=dim)
    return OutcomeModel(
        representation=rep,
        head_b=params["head_b"].copy(),
        head_c=params["head_c"].copy(),
        bias=float(params["bias"]),
        alpha=alpha,
    )


def train(
    corpus: Sequence[Document],
    config: TrainConfig,
    rep_kind: str = TRAINED_BOW,
    alpha: float = 0.01,
    vocab: Vocabulary | None = None,
    validation: Sequence[Document] | None = None,
) -> OutcomeModel:
    """Fit the two-headed outcome model on (W, boosted proxy, C, Y).

    Runs `config.epochs` epochs of SGD and returns tail-averaged parameters.
    When a validation corpus is given, the averaged iterate with the lowest
    validation cross-entropy wins (epoch selection); otherwise the final
    average does.
    """
    if not corpus:
        raise ValueError("training corpus must be nonempty")
    x, c_idx, n_c, t, y, vocab, dim = _prepare(corpus, rep_kind, vocab, config.dim)
    if not (np.any(t == 1) and np.any(t == 0)):
        raise ValueError("both boosted-proxy classes must be present in the training split")
    rng = np.random.default_rng(config.seed)
    params = _init_params(rng, rep_kind, dim, x.shape[1], n_c, scale=config.init_scale)
    val = None
    if validation:
        xv, cv, _, tv, yv, _, _ = _prepare(validation, rep_kind, vocab, dim, n_covariates=n_c)
        val = (xv, cv, tv, yv)
    # Tail-averaged SGD: iterates from the second half of training are
    # averaged, which damps minibatch oscillation around the optimum.
    tail_start = config.epochs // 2
    avg: dict[str, np.ndarray] | None = None
    n_avg = 0
    best = None
    for epoch in range(config.epochs):
        order = rng.permutation(len(corpus))
        _sgd_epoch(params, rep_kind, x, c_idx, t, y, order, config, alpha)
        if epoch < tail_start:
            continue
        if avg is None:
            avg = {k: np.array(v, copy=True) for k, v in params.items()}
            n_avg = 1
        else:
            n_avg += 1
            for k in avg:
                avg[k] += (params[k] - avg[k]) / n_avg
        if val is not None:
            ce = _mean_ce(avg, rep_kind, *val, config)
            if best is None or ce < best[0]:
                best = (ce, {k: np.array(v, copy=True) for k, v in avg.items()})
    params = best[1] if best is not None else avg
    return _params_to_model(params, rep_kind, vocab, dim, alpha)


def estimate_psi_proxy(model: OutcomeModel, corpus: Sequence[Document]) -> float:
    """Sample average of q(1, doc) - q(0, doc) over the corpus."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    rep = model.representation
    if rep.kind == TRAINED_BOW:
        x = _bow_matrix(corpus, rep.vocab)
    else:
        x = _embedding_matrix(corpus, rep.dim)
    c_idx = np.array([d.covariate for d in corpus], dtype=int)
    if c_idx.max() >= model.n_covariates:
        raise ValueError("corpus covariate outside model arity")
    params = {
        "head_b": model.head_b,
        "head_c": model.head_c,
        "bias": np.array(model.bias),
    }
    if rep.kind == TRAINED_BOW:
        params["W_enc"] = rep.encoder_weights
        params["b_enc"] = rep.encoder_bias
    ones = np.ones(len(corpus), dtype=int)
    p1, _ = _q_batch(params, rep.kind, x, c_idx, ones)
    p0, _ = _q_batch(params, rep.kind, x, c_idx, 1 - ones)
    return float(np.mean(p1 - p0))


# ---------------------------------------------------------------------------
# Cross-validated estimation
# ---------------------------------------------------------------------------


def stratified_folds(corpus: Sequence[Document], k: int) -> list[list[int]]:
    """Deterministic round-robin fold assignment stratified by (proxy_boosted, C)."""
    strata: dict[tuple, list[int]] = {}
    order = sorted(range(len(corpus)), key=lambda i: corpus[i].id)
    for i in order:
        doc = corpus[i]
        strata.setdefault((doc.proxy_boosted, doc.covariate), []).append(i)
    folds: list[list[int]] = [[] for _ in range(k)]
    for key in sorted(strata):
        for pos, i in enumerate(strata[key]):
            folds[pos % k].append(i)
    return [sorted(f) for f in folds]


def _split_validation(corpus: Sequence[Document], idx: list[int], fraction: float):
    if fraction <= 0.0:
        return idx, []
    every = max(2, round(1.0 / fraction))
    strata: dict[tuple, list[int]] = {}
    for i in idx:
        doc = corpus[i]
        strata.setdefault((doc.proxy_boosted, doc.covariate), []).append(i)
    train, val = [], []
    for key in sorted(strata):
        for pos, i in enumerate(strata[key]):
            (val if pos % every == every - 1 else train).append(i)
    return sorted(train), sorted(val)


def cross_validated_ate(
    corpus: Sequence[Document],
    config: TrainConfig,
    rep_kind: str = TRAINED_BOW,
    alpha: float = 0.01,
    vocab: Vocabulary | None = None,
) -> AteEstimate:
    """Per-fold training with held-out estimation, averaged across folds.

    Each fold trains on the remaining data (with a validation slice carved
    out for epoch selection) and evaluates the effect estimate on its test
    fold. The standard error is the across-fold standard deviation divided
    by sqrt(#folds); replicate seeds aggregate one level up.
    """
    if len(corpus) < 3 * config.batch_size:
        raise ValueError("corpus must hold at least 3 batches for cross-validated estimation")
    if isinstance(config.folds, tuple):
        n_tr, n_va, n_te = config.folds
        total = n_tr + n_va + n_te
        splits = []
        test_frac = n_te / total
        k_pseudo = max(2, round(1.0 / test_frac)) if test_frac > 0 else 1
        folds = stratified_folds(corpus, k_pseudo)
        test_idx = folds[0]
        rest = sorted(i for f in folds[1:] for i in f)
        train_idx, val_idx = _split_validation(corpus, rest, n_va / (n_tr + n_va))
        splits.append((train_idx, val_idx, test_idx))
    else:
        folds = stratified_folds(corpus, config.folds)
        splits = []
        for k in range(config.folds):
            test_idx = folds[k]
            rest = sorted(i for j, f in enumerate(folds) if j != k for i in f)
            train_idx, val_idx = _split_validation(corpus, rest, config.val_fraction)
            splits.append((train_idx, val_idx, test_idx))
    estimates = []
    for train_idx, val_idx, test_idx in splits:
        train_docs = [corpus[i] for i in train_idx]
        val_docs = [corpus[i] for i in val_idx]
        test_docs = [corpus[i] for i in test_idx]
        model = train(train_docs, config, rep_kind, alpha, vocab=vocab,
                      validation=val_docs or None)
        estimates.append(estimate_psi_proxy(model, test_docs))
    value = float(np.mean(estimates))
    se = float(np.std(estimates, ddof=1) / math.sqrt(len(estimates))) if len(estimates) > 1 else None
    return AteEstimate(estimand="proxy", value=value, standard_error=se, n=len(corpus))


# ---------------------------------------------------------------------------
# Persistence and embedding files
# ---------------------------------------------------------------------------


def save_model(model: OutcomeModel, path: str | Path) -> None:
    rep = model.representation
    obj: dict = {
        "kind": rep.kind,
        "dim": rep.dim,
        "head_b_0": list(model.head_b[0]),
        "head_b_1": list(model.head_b[1]),
        "head_c_0": list(model.head_c[0]),
        "head_c_1": list(model.head_c[1]),
        "bias": model.bias,
        "alpha": model.alpha,
    }
    if rep.kind == TRAINED_BOW:
        obj["encoder_weights"] = [list(row) for row in rep.encoder_weights]
        obj["encoder_bias"] = list(rep.encoder_bias)
        obj["vocab"] = list(rep.vocab.terms)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> OutcomeModel:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    kind = obj["kind"]
    if kind == TRAINED_BOW:
        rep = TextRepresentation(
            kind=kind,
            dim=int(obj["dim"]),
            encoder_weights=np.array(obj["encoder_weights"], dtype=float),
            encoder_bias=np.array(obj["encoder_bias"], dtype=float),
            vocab=Vocabulary.from_terms(obj["vocab"]),
        )
    else:
        rep = TextRepresentation(kind=kind, dim=int(obj["dim"]))
    return OutcomeModel(
        representation=rep,
        head_b=np.array([obj["head_b_0"], obj["head_b_1"]], dtype=float),
        head_c=np.array([obj["head_c_0"], obj["head_c_1"]], dtype=float),
        bias=float(obj["bias"]),
        alpha=float(obj["alpha"]),
    )


def load_embeddings(path: str | Path) -> tuple[int, dict[str, tuple[float, ...]]]:
    """Read an embedding file: header `dim=<d>`, then `<id> <v1> ... <vd>` lines."""
    table: dict[str, tuple[float, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise ValueError(f"{path}: expected 'dim=<d>' header, got {header!r}")
        dim = int(header[4:])
        if dim <= 0:
            raise ValueError(f"{path}: dimension must be positive")
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            doc_id, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} values for {doc_id!r}, got {len(values)}"
                )
            vec = tuple(float(v) for v in values)
            if any(not math.isfinite(v) for v in vec):
                raise ValueError(f"{path}:{lineno}: non-finite value for {doc_id!r}")
            if doc_id in table:
                raise ValueError(f"{path}:{lineno}: duplicate embedding for {doc_id!r}")
            table[doc_id] = vec
    return dim, table


def attach_embeddings(corpus: Sequence[Document], path: str | Path) -> list[Document]:
    """Validate id coverage and attach file embeddings to the corpus."""
    dim, table = load_embeddings(path)
    missing = [d.id for d in corpus if d.id not in table]
    if missing:
        raise ValueError(f"embedding file {path} missing ids: {missing[:5]}")
    extra = set(table) - {d.id for d in corpus}
    if extra:
        raise ValueError(f"embedding file {path} has {len(extra)} ids not in the corpus")
    return [doc.with_fields(embedding=table[doc.id]) for doc in corpus]
