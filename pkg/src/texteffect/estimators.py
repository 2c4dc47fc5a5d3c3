"""Tabular treatment-effect estimators and the misclassification repair.

Covers the unadjusted contrast, the covariate-stratified contrast, and the
measurement-model inversion that de-biases a joint observed with a noisy
treatment label (the 2x2 matrix adjustment), plus replicate aggregation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Document

__all__ = [
    "JointTable",
    "MeasurementModel",
    "AteEstimate",
    "psi_naive",
    "psi_naive_c",
    "psi_matrix",
    "forward_corrupt",
    "estimate_measurement_model",
    "aggregate_replicates",
    "read_joint_csv",
    "write_joint_csv",
    "read_measurement_csv",
    "write_measurement_csv",
    "write_estimates_csv",
]

SINGULARITY_TOL = 1e-9


@dataclass(frozen=True)
class JointTable:
    """Probabilities (or counts) indexed by (y, c, t); shape (2, n_c, 2)."""

    table: np.ndarray

    def __post_init__(self) -> None:
        if self.table.ndim != 3 or self.table.shape[0] != 2 or self.table.shape[2] != 2:
            raise ValueError("joint table must have shape (2, n_covariates, 2)")
        if np.any(self.table < 0):
            raise ValueError("joint table entries must be non-negative")

    @property
    def n_covariates(self) -> int:
        return self.table.shape[1]

    def normalized(self) -> "JointTable":
        total = float(self.table.sum())
        if total <= 0:
            raise ValueError("joint table has no mass")
        return JointTable(self.table / total)

    def is_normalized(self) -> bool:
        return abs(float(self.table.sum()) - 1.0) <= 1e-12

    @classmethod
    def from_corpus(
        cls, corpus: Sequence[Document], treatment_field: str = "proxy"
    ) -> "JointTable":
        if not corpus:
            raise ValueError("corpus must be nonempty")
        n_c = max(d.covariate for d in corpus) + 1
        table = np.zeros((2, n_c, 2))
        for doc in corpus:
            t = getattr(doc, treatment_field)
            if t is None or doc.outcome is None:
                raise ValueError(f"document {doc.id!r} missing outcome or {treatment_field}")
            table[doc.outcome, doc.covariate, t] += 1.0
        return cls(table)


@dataclass(frozen=True)
class MeasurementModel:
    """Stratified misclassification rates of the proxy label.

    epsilon[(c, y)] = P(That=0 | T=1, C=c, Y=y)
    delta[(c, y)]   = P(That=1 | T=0, C=c, Y=y)
    """

    epsilon: Mapping[tuple[int, int], float]
    delta: Mapping[tuple[int, int], float]

    def __post_init__(self) -> None:
        if set(self.epsilon) != set(self.delta):
            raise ValueError("epsilon and delta must cover the same (c, y) cells")
        for key in self.epsilon:
            e, d = self.epsilon[key], self.delta[key]
            if not (0.0 <= e <= 1.0 and 0.0 <= d <= 1.0):
                raise ValueError(f"rates at {key} must be probabilities")
            if e + d >= 1.0:
                raise ValueError(f"rates at {key} must satisfy epsilon + delta < 1")

    @classmethod
    def constant(cls, epsilon: float, delta: float, n_covariates: int) -> "MeasurementModel":
        cells = [(c, y) for c in range(n_covariates) for y in (0, 1)]
        return cls({k: epsilon for k in cells}, {k: delta for k in cells})


@dataclass(frozen=True)
class AteEstimate:
    estimand: str
    value: float
    standard_error: float | None
    n: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError("estimate must be finite")
        if self.standard_error is not None and self.standard_error < 0:
            raise ValueError("standard error must be non-negative")


def _arrays(corpus: Sequence[Document], treatment_field: str):
    t, y = [], []
    for doc in corpus:
        tv = getattr(doc, treatment_field)
        if tv is None:
            raise ValueError(f"document {doc.id!r} missing {treatment_field}")
        if doc.outcome is None:
            raise ValueError(f"document {doc.id!r} missing outcome")
        t.append(tv)
        y.append(doc.outcome)
    return np.array(t), np.array(y, dtype=float)


def psi_naive(corpus: Sequence[Document], treatment_field: str = "proxy") -> AteEstimate:
    """Unadjusted contrast mean(Y | T=1) - mean(Y | T=0)."""
    t, y = _arrays(corpus, treatment_field)
    if not np.any(t == 1) or not np.any(t == 0):
        raise ValueError("both treatment arms must be nonempty")
    value = float(y[t == 1].mean() - y[t == 0].mean())
    return AteEstimate(estimand="naive", value=value, standard_error=None, n=len(corpus))


def psi_naive_c(corpus: Sequence[Document], treatment_field: str = "proxy") -> AteEstimate:
    """Backdoor-adjusted contrast, stratified on the observed covariate.

    sum_c [mean(Y|T=1,C=c) - mean(Y|T=0,C=c)] * Phat(C=c), with Phat the
    empirical covariate distribution. Any empty (c, t) cell is an error.
    """
    t, y = _arrays(corpus, treatment_field)
    c = np.array([d.covariate for d in corpus])
    value = 0.0
    n = len(corpus)
    for level in sorted(set(c.tolist())):
        sel = c == level
        for arm in (0, 1):
            if not np.any(sel & (t == arm)):
                raise ValueError(f"empty cell: covariate={level}, treatment={arm}")
        diff = y[sel & (t == 1)].mean() - y[sel & (t == 0)].mean()
        value += diff * (sel.sum() / n)
    return AteEstimate(estimand="naive_c", value=float(value), standard_error=None, n=n)


def _inverse_2x2(epsilon: float, delta: float) -> np.ndarray:
    """Analytic inverse of [[1-delta, epsilon], [delta, 1-epsilon]]."""
    det = 1.0 - epsilon - delta
    if det <= SINGULARITY_TOL:
        raise ValueError(
            f"measurement matrix is singular: 1 - epsilon - delta = {det:g}"
        )
    return np.array([[1.0 - epsilon, -epsilon], [-delta, 1.0 - delta]]) / det


def psi_matrix(joint: JointTable, mm: MeasurementModel) -> AteEstimate:
    """Recover the treatment-stratified contrast from a proxy-labeled joint.

    For each (c, y) cell the observed vector over the proxy label is
    multiplied by the inverse misclassification matrix to recover
    P(Y, C, T). Small negative recovered masses are clipped to zero, and
    conditional outcome rates renormalize within each (t, c) slice.
    """
    p = joint.normalized().table
    n_c = joint.n_covariates
    recovered = np.zeros_like(p)  # (y, c, t) with t the true label
    for c in range(n_c):
        for y in (0, 1):
            key = (c, y)
            if key not in mm.epsilon:
                raise ValueError(f"measurement model missing cell (c={c}, y={y})")
            inv = _inverse_2x2(mm.epsilon[key], mm.delta[key])
            v_obs = np.array([p[y, c, 0], p[y, c, 1]])
            recovered[y, c, :] = inv @ v_obs
    recovered = np.clip(recovered, 0.0, None)
    p_c = p.sum(axis=(0, 2))
    value = 0.0
    for c in range(n_c):
        rates = []
        for t in (0, 1):
            mass = recovered[:, c, t].sum()
            if mass <= 0.0:
                raise ValueError(f"recovered treatment arm t={t} has zero mass at c={c}")
            rates.append(recovered[1, c, t] / mass)
        value += (rates[1] - rates[0]) * p_c[c]
    return AteEstimate(estimand="matrix", value=float(value), standard_error=None, n=0)


def forward_corrupt(joint_true: JointTable, mm: MeasurementModel) -> JointTable:
    """Apply the misclassification matrix to a true-treatment joint.

    P(y, c, that) = sum_t P(that | t, c, y) P(y, c, t); exact inverse of the
    matrix adjustment on population tables.
    """
    p = joint_true.table
    out = np.zeros_like(p)
    for c in range(joint_true.n_covariates):
        for y in (0, 1):
            e, d = mm.epsilon[(c, y)], mm.delta[(c, y)]
            m = np.array([[1.0 - d, e], [d, 1.0 - e]])  # rows: that, cols: t
            out[y, c, :] = m @ p[y, c, :]
    return JointTable(out)


def estimate_measurement_model(
    corpus: Sequence[Document],
    truth_field: str = "treatment_true",
    proxy_field: str = "proxy",
) -> MeasurementModel:
    """Empirical misclassification rates per (c, y), using the true labels."""
    n_c = max(d.covariate for d in corpus) + 1
    counts = np.zeros((n_c, 2, 2, 2))  # (c, y, t, that)
    for doc in corpus:
        t = getattr(doc, truth_field)
        that = getattr(doc, proxy_field)
        if t is None or that is None or doc.outcome is None:
            raise ValueError(f"document {doc.id!r} missing labels for measurement model")
        counts[doc.covariate, doc.outcome, t, that] += 1.0
    epsilon, delta = {}, {}
    for c in range(n_c):
        for y in (0, 1):
            n1 = counts[c, y, 1].sum()
            n0 = counts[c, y, 0].sum()
            if n1 == 0 or n0 == 0:
                raise ValueError(f"cannot estimate rates: empty T arm in cell (c={c}, y={y})")
            epsilon[(c, y)] = counts[c, y, 1, 0] / n1
            delta[(c, y)] = counts[c, y, 0, 1] / n0
    return MeasurementModel(epsilon=epsilon, delta=delta)


def aggregate_replicates(estimates: Sequence[AteEstimate]) -> AteEstimate:
    """Mean across replicates; SE is the across-replicate sd / sqrt(count)."""
    if not estimates:
        raise ValueError("need at least one estimate")
    kinds = {e.estimand for e in estimates}
    if len(kinds) > 1:
        raise ValueError(f"cannot aggregate mixed estimands: {sorted(kinds)}")
    values = np.array([e.value for e in estimates])
    if len(values) > 1:
        se = 0.0 if np.all(values == values[0]) else float(values.std(ddof=1) / math.sqrt(len(values)))
    else:
        se = None
    return AteEstimate(
        estimand=estimates[0].estimand,
        value=float(values.mean()),
        standard_error=se,
        n=sum(e.n for e in estimates),
    )


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------


def read_joint_csv(path: str | Path) -> JointTable:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["y", "c", "t", "count"]:
            raise ValueError(f"{path}: expected header 'y,c,t,count'")
        for row in reader:
            rows.append((int(row["y"]), int(row["c"]), int(row["t"]), float(row["count"])))
    if not rows:
        raise ValueError(f"{path}: empty joint table")
    n_c = max(r[1] for r in rows) + 1
    table = np.zeros((2, n_c, 2))
    for y, c, t, count in rows:
        table[y, c, t] += count
    return JointTable(table)


def write_joint_csv(joint: JointTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "c", "t", "count"])
        for y in (0, 1):
            for c in range(joint.n_covariates):
                for t in (0, 1):
                    writer.writerow([y, c, t, repr(float(joint.table[y, c, t]))])


def read_measurement_csv(path: str | Path) -> MeasurementModel:
    epsilon, delta = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["c", "y", "epsilon", "delta"]:
            raise ValueError(f"{path}: expected header 'c,y,epsilon,delta'")
        for row in reader:
            key = (int(row["c"]), int(row["y"]))
            epsilon[key] = float(row["epsilon"])
            delta[key] = float(row["delta"])
    return MeasurementModel(epsilon=epsilon, delta=delta)


def write_measurement_csv(mm: MeasurementModel, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["c", "y", "epsilon", "delta"])
        for c, y in sorted(mm.epsilon):
            writer.writerow([c, y, repr(float(mm.epsilon[(c, y)])), repr(float(mm.delta[(c, y)]))])


def write_estimates_csv(estimates: Sequence[AteEstimate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimand", "value", "se", "n"])
        for e in estimates:
            se = "" if e.standard_error is None else repr(float(e.standard_error))
            writer.writerow([e.estimand, repr(float(e.value)), se, e.n])
