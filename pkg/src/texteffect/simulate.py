"""Outcome simulation, propensity estimation, and enumerable generative worlds.

The simulator fills binary outcomes via
    Y ~ Bernoulli(sigmoid(beta_c * (pi(C) - beta_o) + beta_t * T + Normal(0, gamma)))
with gamma read as the standard deviation of the noise. Enumerable worlds are
small generative models over (T, Z, W, That, Y) whose full joint can be
computed exactly; they back the brute-force verification in `theory`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import Document, Lexicon

__all__ = [
    "SimulationParams",
    "PropensityTable",
    "WorldSpec",
    "EnumeratedWorld",
    "CorpusRecipe",
    "estimate_propensity",
    "simulate_outcomes",
    "oracle_ate",
    "enumerate_world",
    "sample_world",
    "load_world",
    "save_world",
    "make_review_corpus",
    "sigmoid",
    "WORLD_SUPPORT_CAP",
]

WORLD_SUPPORT_CAP = 10_000  # distinct text sequences


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class SimulationParams:
    beta_c: float
    beta_t: float
    beta_o: float
    gamma: float
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("beta_c", "beta_t", "beta_o", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass(frozen=True)
class PropensityTable:
    """pi[c] = P(T=1 | C=c); strictly inside (0,1) so overlap holds."""

    pi: Mapping[int, float]

    def __post_init__(self) -> None:
        for c, p in self.pi.items():
            if not 0.0 < p < 1.0:
                raise ValueError(f"propensity for covariate {c} must be in (0,1), got {p}")

    def __getitem__(self, c: int) -> float:
        return self.pi[c]


def _treatment(doc: Document, treatment_field: str) -> int | None:
    if treatment_field not in ("treatment_true", "proxy", "proxy_boosted"):
        raise ValueError(f"unknown treatment field {treatment_field!r}")
    return getattr(doc, treatment_field)


def estimate_propensity(
    corpus: Sequence[Document], treatment_field: str = "treatment_true"
) -> PropensityTable:
    """Laplace-smoothed per-covariate treatment frequency: (n1 + 1) / (n + 2)."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    totals: dict[int, int] = {}
    treated: dict[int, int] = {}
    for doc in corpus:
        t = _treatment(doc, treatment_field)
        if t is None:
            raise ValueError(f"document {doc.id!r} is missing {treatment_field}")
        totals[doc.covariate] = totals.get(doc.covariate, 0) + 1
        treated[doc.covariate] = treated.get(doc.covariate, 0) + t
    pi = {c: (treated[c] + 1) / (totals[c] + 2) for c in totals}
    return PropensityTable(pi=pi)


def _logit_base(corpus, params, propensity):
    try:
        return np.array(
            [params.beta_c * (propensity[d.covariate] - params.beta_o) for d in corpus]
        )
    except KeyError as exc:
        raise ValueError(f"covariate {exc.args[0]} missing from propensity table") from exc


def _true_treatments(corpus) -> np.ndarray:
    ts = []
    for doc in corpus:
        if doc.treatment_true is None:
            raise ValueError(f"document {doc.id!r} is missing treatment_true")
        ts.append(doc.treatment_true)
    return np.array(ts, dtype=float)


def simulate_outcomes(
    corpus: Sequence[Document], params: SimulationParams, propensity: PropensityTable
) -> list[Document]:
    """Draw one outcome per document; deterministic given the params seed."""
    base = _logit_base(corpus, params, propensity)
    t = _true_treatments(corpus)
    rng = np.random.default_rng(params.seed)
    noise = rng.normal(0.0, params.gamma, size=len(corpus))
    p = sigmoid(base + params.beta_t * t + noise)
    y = rng.binomial(1, p)
    return [doc.with_fields(outcome=int(yi)) for doc, yi in zip(corpus, y)]


def oracle_ate(
    corpus: Sequence[Document], params: SimulationParams, propensity: PropensityTable
) -> float:
    """Mean unit-level contrast of the two potential-outcome probabilities.

    Each unit's noise draw is shared between the two arms, so the contrast
    isolates the treatment term. Uses the same noise stream as
    simulate_outcomes for the same seed.
    """
    base = _logit_base(corpus, params, propensity)
    _true_treatments(corpus)  # same precondition as simulate_outcomes
    rng = np.random.default_rng(params.seed)
    noise = rng.normal(0.0, params.gamma, size=len(corpus))
    p1 = sigmoid(base + params.beta_t + noise)
    p0 = sigmoid(base + noise)
    return float(np.mean(p1 - p0))


# ---------------------------------------------------------------------------
# Enumerable worlds
# ---------------------------------------------------------------------------


def _parse_feature(spec: str) -> Callable[[tuple[str, ...]], int]:
    """Named deterministic text features used as the adjustment target."""
    kind, _, arg = spec.partition(":")
    if kind == "contains-token":
        return lambda tokens: int(arg in tokens)
    if kind == "contains-any":
        wanted = set(arg.split("|"))
        return lambda tokens: int(any(t in wanted for t in tokens))
    if kind == "count-token":
        return lambda tokens: sum(1 for t in tokens if t == arg)
    raise ValueError(f"unknown feature rule {spec!r}")


@dataclass(frozen=True)
class ProxyRule:
    """How the proxy label is produced.

    kinds:
      lexicon    -- That = 1 iff any token is in `words`
      table      -- explicit P(That=1 | W=w), keyed by the space-joined text
      flip_true  -- unit-level label noise: That keeps the unit's true T with
                    probability `accuracy`, else flips it (the construction
                    behind randomly noised proxy baselines)
    """

    kind: str
    words: frozenset[str] = frozenset()
    table: Mapping[str, float] = field(default_factory=dict)
    accuracy: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("lexicon", "table", "flip_true"):
            raise ValueError(f"unknown proxy rule kind {self.kind!r}")
        if self.kind == "flip_true" and not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("flip_true accuracy must be in [0,1]")
        for p in self.table.values():
            if not 0.0 <= p <= 1.0:
                raise ValueError("proxy table probabilities must be in [0,1]")


@dataclass(frozen=True)
class WorldSpec:
    """Fully enumerable generative model over (T, Z, W, That, Y).

    p_tz[t][z] is the joint over binary (T, Z). text_model maps (t, z) to a
    distribution over token tuples (vocabulary <= 8 tokens, length <= 4).
    The outcome depends on (T, ztilde) only, where ztilde = f(tokens).
    """

    p_tz: tuple[tuple[float, float], tuple[float, float]]
    text_model: Mapping[tuple[int, int], tuple[tuple[tuple[str, ...], float], ...]]
    proxy_rule: ProxyRule
    outcome_model: Mapping[tuple[int, int], float]
    feature: str = "contains-token:cf"
    covariate_mode: str = "z"  # "z" or "constant"

    def __post_init__(self) -> None:
        total = sum(self.p_tz[t][z] for t in (0, 1) for z in (0, 1))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"p_tz must sum to 1, got {total}")
        if any(self.p_tz[t][z] < 0 for t in (0, 1) for z in (0, 1)):
            raise ValueError("p_tz entries must be non-negative")
        vocab: set[str] = set()
        support: set[tuple[str, ...]] = set()
        for key, rows in self.text_model.items():
            row_total = sum(p for _, p in rows)
            if abs(row_total - 1.0) > 1e-9:
                raise ValueError(f"text_model row {key} must sum to 1, got {row_total}")
            for tokens, p in rows:
                if p < 0:
                    raise ValueError("text probabilities must be non-negative")
                if len(tokens) > 4:
                    raise ValueError("world texts are capped at 4 tokens")
                vocab.update(tokens)
                support.add(tuple(tokens))
        if len(vocab) > 8:
            raise ValueError("world vocabulary is capped at 8 tokens")
        if len(support) > WORLD_SUPPORT_CAP:
            raise ValueError("world text support exceeds the enumerability cap")
        for p in self.outcome_model.values():
            if not 0.0 <= p <= 1.0:
                raise ValueError("outcome probabilities must be in [0,1]")
        if self.covariate_mode not in ("z", "constant"):
            raise ValueError(f"unknown covariate mode {self.covariate_mode!r}")
        _parse_feature(self.feature)

    def feature_fn(self) -> Callable[[tuple[str, ...]], int]:
        return _parse_feature(self.feature)

    def proxy_prob(self, tokens: tuple[str, ...], t: int) -> float:
        """P(That = 1 | T = t, W = tokens)."""
        rule = self.proxy_rule
        if rule.kind == "lexicon":
            return float(any(tok in rule.words for tok in tokens))
        if rule.kind == "table":
            key = " ".join(tokens)
            if key not in rule.table:
                raise ValueError(f"proxy table has no entry for text {key!r}")
            return float(rule.table[key])
        return rule.accuracy if t == 1 else 1.0 - rule.accuracy

    def outcome_prob(self, t: int, ztilde: int) -> float:
        key = (t, ztilde)
        if key not in self.outcome_model:
            raise ValueError(f"outcome_model has no entry for (t, ztilde) = {key}")
        return float(self.outcome_model[key])


@dataclass(frozen=True)
class EnumeratedWorld:
    """Exact joint over (t, z, tokens, that, y) plus the source spec."""

    spec: WorldSpec
    entries: tuple[tuple[int, int, tuple[str, ...], int, int, float], ...]

    def total_mass(self) -> float:
        return sum(e[-1] for e in self.entries)

    def marginal_w(self) -> dict[tuple[str, ...], float]:
        out: dict[tuple[str, ...], float] = {}
        for _, _, w, _, _, p in self.entries:
            out[w] = out.get(w, 0.0) + p
        return out

    def joint_tw(self) -> dict[tuple[int, tuple[str, ...]], float]:
        out: dict[tuple[int, tuple[str, ...]], float] = {}
        for t, _, w, _, _, p in self.entries:
            out[(t, w)] = out.get((t, w), 0.0) + p
        return out


def enumerate_world(spec: WorldSpec) -> EnumeratedWorld:
    """Exhaustively enumerate the joint; masses sum to 1 within 1e-12."""
    f = spec.feature_fn()
    entries = []
    w_mass: dict[tuple[str, ...], float] = {}
    cells = []
    for t in (0, 1):
        for z in (0, 1):
            p_cell = spec.p_tz[t][z]
            if p_cell == 0.0:
                continue
            if (t, z) not in spec.text_model:
                raise ValueError(f"text_model has no row for reachable cell (t,z)={(t, z)}")
            for tokens, p_w in spec.text_model[(t, z)]:
                if p_w == 0.0:
                    continue
                mass = p_cell * p_w
                cells.append((t, z, tuple(tokens), mass))
                w_mass[tuple(tokens)] = w_mass.get(tuple(tokens), 0.0) + mass
    if len(w_mass) > WORLD_SUPPORT_CAP:
        raise ValueError("world text support exceeds the enumerability cap")
    for t, z, tokens, mass in cells:
        q = spec.proxy_prob(tokens, t)
        p_y1 = spec.outcome_prob(t, f(tokens))
        for that, p_that in ((0, 1.0 - q), (1, q)):
            if p_that == 0.0:
                continue
            for y, p_y in ((0, 1.0 - p_y1), (1, p_y1)):
                if p_y == 0.0:
                    continue
                entries.append((t, z, tokens, that, y, mass * p_that * p_y))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3], e[4]))
    world = EnumeratedWorld(spec=spec, entries=tuple(entries))
    if abs(world.total_mass() - 1.0) > 1e-12:
        raise AssertionError(f"enumerated mass {world.total_mass()} != 1")
    return world


def sample_world(spec: WorldSpec, n: int, seed: int) -> list[Document]:
    """Draw n i.i.d. documents from the world joint; deterministic given seed."""
    if n < 0:
        raise ValueError("n must be non-negative")
    world = enumerate_world(spec)
    if n == 0:
        return []
    probs = np.array([e[-1] for e in world.entries])
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(world.entries), size=n, p=probs / probs.sum())
    docs = []
    for i, k in enumerate(picks):
        t, z, tokens, that, y, _ = world.entries[k]
        docs.append(
            Document(
                id=f"w{i:06d}",
                text=" ".join(tokens),
                covariate=z if spec.covariate_mode == "z" else 0,
                treatment_true=t,
                proxy=that,
                outcome=y,
            )
        )
    return docs


# ---------------------------------------------------------------------------
# World file format
# ---------------------------------------------------------------------------


def load_world(path: str | Path) -> WorldSpec:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return world_from_dict(obj)


def world_from_dict(obj: Mapping) -> WorldSpec:
    p_tz = tuple(tuple(float(v) for v in row) for row in obj["p_tz"])
    text_model = {}
    for key, rows in obj["text_model"].items():
        t_s, z_s = key.split(",")
        text_model[(int(t_s), int(z_s))] = tuple(
            (tuple(r["tokens"]), float(r["prob"])) for r in rows
        )
    pr = obj["proxy_rule"]
    rule = ProxyRule(
        kind=pr["type"],
        words=frozenset(pr.get("words", ())),
        table={k: float(v) for k, v in pr.get("probs", {}).items()},
        accuracy=float(pr.get("accuracy", 1.0)),
    )
    outcome_model = {}
    for key, p in obj["outcome_model"].items():
        t_s, zt_s = key.split(",")
        outcome_model[(int(t_s), int(zt_s))] = float(p)
    return WorldSpec(
        p_tz=p_tz,
        text_model=text_model,
        proxy_rule=rule,
        outcome_model=outcome_model,
        feature=obj.get("f", "contains-token:cf"),
        covariate_mode=obj.get("covariate", "z"),
    )


def world_to_dict(spec: WorldSpec) -> dict:
    pr: dict = {"type": spec.proxy_rule.kind}
    if spec.proxy_rule.kind == "lexicon":
        pr["words"] = sorted(spec.proxy_rule.words)
    elif spec.proxy_rule.kind == "table":
        pr["probs"] = {k: spec.proxy_rule.table[k] for k in sorted(spec.proxy_rule.table)}
    else:
        pr["accuracy"] = spec.proxy_rule.accuracy
    return {
        "p_tz": [list(row) for row in spec.p_tz],
        "text_model": {
            f"{t},{z}": [{"tokens": list(w), "prob": p} for w, p in rows]
            for (t, z), rows in sorted(spec.text_model.items())
        },
        "proxy_rule": pr,
        "outcome_model": {f"{t},{zt}": p for (t, zt), p in sorted(spec.outcome_model.items())},
        "f": spec.feature,
        "covariate": spec.covariate_mode,
    }


def save_world(spec: WorldSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic review corpus (semi-synthetic recipe)
# ---------------------------------------------------------------------------

COMMON_LEXICON_WORDS = ("great", "excellent", "perfect", "love", "amazing")
# Long tail of sentiment vocabulary; individually too rare to clear a
# frequency-ranked feature vocabulary, which is what makes the proxy label
# only partially predictable from bag-of-words features.
RARE_LEXICON_WORDS = tuple(f"rave{i:03d}" for i in range(600))
LATENT_POSITIVE_WORDS = (
    "fantastic", "superb", "wonderful", "stellar", "delightful", "brilliant",
    "gorgeous", "catchy", "memorable", "soulful", "vibrant", "polished",
)
NEGATIVE_WORDS = (
    "terrible", "awful", "boring", "refund", "waste", "broken", "dull", "skip",
)
COVARIATE_WORDS = (
    ("mp3", "download", "vinyl", "stream"),
    ("cd", "disc", "album", "booklet"),
)
FILLER_WORDS = ("the", "music", "sound", "quality", "this", "band", "song", "track")
N_NOISE_WORDS = 6000  # per-corpus pool of one-off tokens keeping rare words OOV


def default_lexicon() -> Lexicon:
    return Lexicon.from_words(COMMON_LEXICON_WORDS + RARE_LEXICON_WORDS)


@dataclass(frozen=True)
class CorpusRecipe:
    """Token-level recipe for review-like synthetic corpora.

    Treated documents carry 1..`pos_words_max` positive expressions; each is
    independently a rare lexicon word (prob `lex_rare`), a common lexicon
    word (prob `lex_common`) or a latent positive marker. The lexicon proxy
    fires on any lexicon word, so its recall grows with the expression count
    while most of its trigger words stay out of a frequency-capped feature
    vocabulary. That combination is what a relabeling classifier can exploit.
    """

    n: int = 4000
    p_c1: float = 0.5
    pi0: float = 0.35
    pi1: float = 0.75
    pos_words_max: int = 5
    lex_rare: float = 0.50
    lex_common: float = 0.05
    lex_hit_t0: float = 0.04
    latent_t0: float = 0.02
    n_filler: int = 4
    n_noise: int = 2
    expression_profile: str = "uniform"  # or "bimodal": expressive vs terse writers

    def __post_init__(self) -> None:
        for name in ("p_c1", "pi0", "pi1", "lex_rare", "lex_common", "lex_hit_t0", "latent_t0"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.lex_rare + self.lex_common > 1.0:
            raise ValueError("lex_rare + lex_common must be at most 1")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if self.pos_words_max < 1:
            raise ValueError("pos_words_max must be at least 1")
        if self.expression_profile not in ("uniform", "bimodal"):
            raise ValueError(f"unknown expression profile {self.expression_profile!r}")

    def _expression_counts(self) -> tuple[tuple[int, ...], tuple[float, ...]]:
        if self.expression_profile == "uniform":
            ks = tuple(range(1, self.pos_words_max + 1))
            return ks, tuple(1.0 / len(ks) for _ in ks)
        # Bimodal: half the writers are expressive (4..7 expressions), half
        # terse (1..2); expressiveness is visible through latent markers while
        # lexicon coverage per expression stays partial.
        ks = (1, 2, 4, 5, 6, 7)
        return ks, (0.25, 0.25, 0.125, 0.125, 0.125, 0.125)


def expected_lexicon_recall(recipe: CorpusRecipe) -> float:
    """Population recall of the lexicon proxy under the recipe."""
    miss = 1.0 - recipe.lex_rare - recipe.lex_common
    ks, probs = recipe._expression_counts()
    return 1.0 - sum(p * miss**k for k, p in zip(ks, probs))


def make_review_corpus(recipe: CorpusRecipe, seed: int) -> list[Document]:
    """Generate documents with covariate and true treatment set; outcomes unset."""
    rng = np.random.default_rng(seed)
    ks, k_probs = recipe._expression_counts()
    docs = []
    for i in range(recipe.n):
        c = int(rng.random() < recipe.p_c1)
        pi = recipe.pi1 if c == 1 else recipe.pi0
        t = int(rng.random() < pi)
        words = list(rng.choice(COVARIATE_WORDS[c], size=2))
        words += list(rng.choice(FILLER_WORDS, size=recipe.n_filler))
        words += [f"n{v:04d}" for v in rng.integers(0, N_NOISE_WORDS, size=recipe.n_noise)]
        k = int(rng.choice(ks, p=k_probs))
        if t == 1:
            for _ in range(k):
                u = rng.random()
                if u < recipe.lex_rare:
                    words.append(str(rng.choice(RARE_LEXICON_WORDS)))
                elif u < recipe.lex_rare + recipe.lex_common:
                    words.append(str(rng.choice(COMMON_LEXICON_WORDS)))
                else:
                    words.append(str(rng.choice(LATENT_POSITIVE_WORDS)))
        else:
            words += list(rng.choice(NEGATIVE_WORDS, size=k))
            if rng.random() < recipe.lex_hit_t0:
                words.append(str(rng.choice(COMMON_LEXICON_WORDS)))
            if rng.random() < recipe.latent_t0:
                words.append(str(rng.choice(LATENT_POSITIVE_WORDS)))
        order = rng.permutation(len(words))
        text = " ".join(words[j] for j in order)
        docs.append(Document(id=f"r{i:06d}", text=text, covariate=c, treatment_true=t))
    return docs
