"""Exact verification of the estimand identities on enumerable worlds.

Every quantity here is a population value computed by brute-force
enumeration of a WorldSpec joint, so the identities can be checked to
floating-point accuracy:

  * identification: the writer-intervention contrast equals the
    feature-stratified contrast (residual `identification`),
  * attenuation: the proxy-stratified contrast equals the true contrast
    minus a misclassification bias term (residual `attenuation`),
  * naive bias: the unstratified proxy contrast decomposes through the
    per-text reweighting terms alpha(W), beta(W) (residual `naive_bias`),
  * the total-probability identity behind both (residual `outcome_mixture`).

Worlds are only admissible for the identification identity when the
treatment is determined by the text (intent and perception agree) and the
confound feature's distribution does not shift under the treatment
intervention; `check_world` reports violations of either, plus overlap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .simulate import (
    EnumeratedWorld,
    ProxyRule,
    WorldSpec,
    enumerate_world,
    sample_world,
)

__all__ = [
    "TheoryReport",
    "WorldTables",
    "analyze_world",
    "check_world",
    "psi_wri_exact",
    "psi_rea_exact",
    "psi_proxy_exact",
    "psi_naive_exact",
    "verify_attenuation",
    "verify_naive_bias",
    "verify_outcome_mixture",
    "attenuation_bias_term",
    "theory_report",
    "attenuation_sweep",
    "build_world_suite",
    "make_world",
    "accuracy_family",
    "latent_treatment_world",
    "IDENTITY_TOL",
    "MIXTURE_TOL",
]

IDENTITY_TOL = 1e-10
MIXTURE_TOL = 1e-12


class WorldTables:
    """Aggregated population tables for one enumerated world."""

    def __init__(self, world: EnumeratedWorld):
        spec = world.spec
        f = spec.feature_fn()
        self.spec = spec
        self.p_w: dict[tuple[str, ...], float] = {}
        self.ztilde: dict[tuple[str, ...], int] = {}
        p_tw: dict[tuple[int, tuple[str, ...]], float] = {}
        p_ttw: dict[tuple[int, int, tuple[str, ...]], float] = {}
        p_wty: dict = {}
        self.p_that = {0: 0.0, 1: 0.0}
        p_tz_tilde: dict[tuple[int, int], float] = {}
        p_that_z: dict[tuple[int, int], float] = {}
        y_t_z: dict[tuple[int, int], float] = {}
        y_that_z: dict[tuple[int, int], float] = {}
        y_that: dict[int, float] = {0: 0.0, 1: 0.0}
        y_w_that: dict[tuple[tuple[str, ...], int], float] = {}
        p_w_that: dict[tuple[tuple[str, ...], int], float] = {}
        for t, z, w, that, y, p in world.entries:
            zt = f(w)
            self.ztilde[w] = zt
            self.p_w[w] = self.p_w.get(w, 0.0) + p
            p_tw[(t, w)] = p_tw.get((t, w), 0.0) + p
            p_ttw[(t, that, w)] = p_ttw.get((t, that, w), 0.0) + p
            self.p_that[that] += p
            p_tz_tilde[(t, zt)] = p_tz_tilde.get((t, zt), 0.0) + p
            p_that_z[(that, zt)] = p_that_z.get((that, zt), 0.0) + p
            y_t_z[(t, zt)] = y_t_z.get((t, zt), 0.0) + p * y
            y_that_z[(that, zt)] = y_that_z.get((that, zt), 0.0) + p * y
            y_that[that] += p * y
            y_w_that[(w, that)] = y_w_that.get((w, that), 0.0) + p * y
            p_w_that[(w, that)] = p_w_that.get((w, that), 0.0) + p
        self.p_tw = p_tw
        self.p_ttw = p_ttw
        self.p_tz_tilde = p_tz_tilde
        self.p_that_z = p_that_z
        self._y_t_z = y_t_z
        self._y_that_z = y_that_z
        self._y_that = y_that
        self._y_w_that = y_w_that
        self._p_w_that = p_w_that
        self._eps_cache: dict[int, tuple[float, float]] = {}
        self.strata = sorted({zt for (_, zt) in p_tz_tilde})

    def p_z_stratum(self, zt: int) -> float:
        return sum(p for w, p in self.p_w.items() if self.ztilde[w] == zt)

    def p_t_given_z(self, t: int, zt: int) -> float:
        mass = self.p_z_stratum(zt)
        return self.p_tz_tilde.get((t, zt), 0.0) / mass

    def e_y_given_t_z(self, t: int, zt: int) -> float:
        mass = self.p_tz_tilde.get((t, zt), 0.0)
        if mass <= 0.0:
            raise ValueError(f"no mass for (t={t}, ztilde={zt})")
        return self._y_t_z.get((t, zt), 0.0) / mass

    def e_y_given_that_z(self, that: int, zt: int) -> float:
        mass = self.p_that_z.get((that, zt), 0.0)
        if mass <= 0.0:
            raise ValueError(f"empty proxy stratum: that={that}, ztilde={zt}")
        return self._y_that_z.get((that, zt), 0.0) / mass

    def e_y_given_that(self, that: int) -> float:
        if self.p_that[that] <= 0.0:
            raise ValueError(f"degenerate proxy marginal: P(that={that}) = 0")
        return self._y_that[that] / self.p_that[that]

    def e_y_given_w_that(self, w: tuple[str, ...], that: int) -> float | None:
        mass = self._p_w_that.get((w, that), 0.0)
        if mass <= 0.0:
            return None
        return self._y_w_that[(w, that)] / mass

    def p_t_given_w_that(self, t: int, w: tuple[str, ...], that: int) -> float:
        mass = self._p_w_that.get((w, that), 0.0)
        if mass <= 0.0:
            return 0.0
        return self.p_ttw.get((t, that, w), 0.0) / mass

    def epsilons(self, zt: int) -> tuple[float, float]:
        """(epsilon0, epsilon1) = (P(T=0|that=1, zt), P(T=1|that=0, zt))."""
        if zt not in self._eps_cache:
            eps0 = 1.0 - self._p_t_given_that_z(1, 1, zt)
            eps1 = self._p_t_given_that_z(1, 0, zt)
            self._eps_cache[zt] = (eps0, eps1)
        return self._eps_cache[zt]

    def _p_t_given_that_z(self, t: int, that: int, zt: int) -> float:
        num = 0.0
        for (tv, tv_hat, w), p in self.p_ttw.items():
            if tv == t and tv_hat == that and self.ztilde[w] == zt:
                num += p
        den = self.p_that_z.get((that, zt), 0.0)
        if den <= 0.0:
            raise ValueError(f"empty proxy stratum: that={that}, ztilde={zt}")
        return num / den


def analyze_world(spec: WorldSpec) -> WorldTables:
    return WorldTables(enumerate_world(spec))


def check_world(spec: WorldSpec) -> list[str]:
    """Diagnostics for the assumptions behind the identification identity.

    Returns an empty list when the world is admissible: treatment readable
    from the text, overlap in every feature stratum, both proxy values
    reachable in every stratum, and a confound feature whose distribution is
    invariant under the treatment intervention.
    """
    problems = []
    try:
        tables = analyze_world(spec)
    except ValueError as exc:
        return [f"enumeration failed: {exc}"]
    for w, p in tables.p_w.items():
        frac = tables.p_tw.get((1, w), 0.0) / p
        if 1e-12 < frac < 1.0 - 1e-12:
            problems.append(
                f"intent-perception agreement fails at text {' '.join(w)!r}: "
                f"P(T=1|W) = {frac:.6g}"
            )
            break
    for zt in tables.strata:
        p1 = tables.p_t_given_z(1, zt)
        if not 0.0 < p1 < 1.0:
            problems.append(f"overlap violated at ztilde={zt}: P(T=1|ztilde) = {p1:g}")
        for that in (0, 1):
            if tables.p_that_z.get((that, zt), 0.0) <= 0.0:
                problems.append(f"empty proxy stratum: that={that}, ztilde={zt}")
    f = spec.feature_fn()
    p_z = [sum(spec.p_tz[t][z] for t in (0, 1)) for z in (0, 1)]
    obs = {zt: tables.p_z_stratum(zt) for zt in tables.strata}
    for t in (0, 1):
        dist: dict[int, float] = {}
        for z in (0, 1):
            if p_z[z] == 0.0:
                continue
            if (t, z) not in spec.text_model:
                problems.append(f"text model lacks row (t={t}, z={z}) needed under intervention")
                continue
            for tokens, p in spec.text_model[(t, z)]:
                dist[f(tokens)] = dist.get(f(tokens), 0.0) + p_z[z] * p
        for zt in sorted(set(dist) | set(obs)):
            if abs(dist.get(zt, 0.0) - obs.get(zt, 0.0)) > 1e-9:
                problems.append(
                    f"confound feature shifts under do(T={t}): "
                    f"P(ztilde={zt}) {obs.get(zt, 0.0):.6g} -> {dist.get(zt, 0.0):.6g}"
                )
                break
    return problems


def psi_wri_exact(spec: WorldSpec) -> float:
    """Writer-intervention contrast: set T, draw Z from its marginal, enumerate."""
    f = spec.feature_fn()
    p_z = [sum(spec.p_tz[t][z] for t in (0, 1)) for z in (0, 1)]
    arms = []
    for t in (0, 1):
        total = 0.0
        for z in (0, 1):
            if p_z[z] == 0.0:
                continue
            if (t, z) not in spec.text_model:
                raise ValueError(f"text model lacks row (t={t}, z={z}) needed under intervention")
            for tokens, p in spec.text_model[(t, z)]:
                total += p_z[z] * p * spec.outcome_prob(t, f(tokens))
        arms.append(total)
    return arms[1] - arms[0]


def psi_rea_exact(spec: WorldSpec, tables: WorldTables | None = None) -> float:
    """Feature-stratified contrast E_W[E[Y|T=1, zt(W)] - E[Y|T=0, zt(W)]]."""
    tables = tables or analyze_world(spec)
    for zt in tables.strata:
        p1 = tables.p_t_given_z(1, zt)
        if not 0.0 < p1 < 1.0:
            raise ValueError(f"overlap violated at ztilde={zt}: P(T=1|ztilde) = {p1:g}")
    total = 0.0
    for w, p in tables.p_w.items():
        zt = tables.ztilde[w]
        total += p * (tables.e_y_given_t_z(1, zt) - tables.e_y_given_t_z(0, zt))
    return total


def psi_proxy_exact(spec: WorldSpec, tables: WorldTables | None = None) -> float:
    """Proxy-stratified contrast E_W[E[Y|that=1, zt(W)] - E[Y|that=0, zt(W)]]."""
    tables = tables or analyze_world(spec)
    total = 0.0
    for w, p in tables.p_w.items():
        zt = tables.ztilde[w]
        total += p * (tables.e_y_given_that_z(1, zt) - tables.e_y_given_that_z(0, zt))
    return total


def psi_naive_exact(spec: WorldSpec, tables: WorldTables | None = None) -> float:
    """Unstratified proxy contrast E[Y|that=1] - E[Y|that=0]."""
    tables = tables or analyze_world(spec)
    return tables.e_y_given_that(1) - tables.e_y_given_that(0)


def verify_attenuation(spec: WorldSpec, tables: WorldTables | None = None) -> float:
    """Residual of: psi_proxy = psi_rea - E_W[(E1 - E0)(eps0 + eps1)]."""
    tables = tables or analyze_world(spec)
    bias = 0.0
    for w, p in tables.p_w.items():
        zt = tables.ztilde[w]
        eps0, eps1 = tables.epsilons(zt)
        e1 = tables.e_y_given_t_z(1, zt)
        e0 = tables.e_y_given_t_z(0, zt)
        bias += p * (e1 - e0) * (eps0 + eps1)
    lhs = psi_proxy_exact(spec, tables)
    rhs = psi_rea_exact(spec, tables) - bias
    return abs(lhs - rhs)


def attenuation_bias_term(spec: WorldSpec, tables: WorldTables | None = None) -> float:
    tables = tables or analyze_world(spec)
    bias = 0.0
    for w, p in tables.p_w.items():
        zt = tables.ztilde[w]
        eps0, eps1 = tables.epsilons(zt)
        bias += p * (tables.e_y_given_t_z(1, zt) - tables.e_y_given_t_z(0, zt)) * (eps0 + eps1)
    return bias


def _alpha_beta(tables: WorldTables, w: tuple[str, ...]) -> tuple[float, float]:
    p = tables.p_w[w]
    p_that = tables.p_that
    if p_that[0] <= 0.0 or p_that[1] <= 0.0:
        raise ValueError("degenerate proxy marginal")
    joint = {
        (t, that): tables.p_ttw.get((t, that, w), 0.0) / p for t in (0, 1) for that in (0, 1)
    }
    alpha = joint[(1, 1)] / p_that[1] - joint[(1, 0)] / p_that[0]
    beta = joint[(0, 0)] / p_that[0] - joint[(0, 1)] / p_that[1]
    return alpha, beta


def verify_naive_bias(spec: WorldSpec, tables: WorldTables | None = None) -> float:
    """Residual of the naive-contrast decomposition through alpha(W), beta(W).

    The conditional outcomes given (T, W) are taken from the structural
    outcome model, which extends them to off-support (T, W) combinations.
    """
    tables = tables or analyze_world(spec)
    f = spec.feature_fn()
    lhs = psi_naive_exact(spec, tables)
    rhs = 0.0
    for w, p in tables.p_w.items():
        alpha, beta = _alpha_beta(tables, w)
        rhs += p * (
            spec.outcome_prob(1, f(w)) * alpha - spec.outcome_prob(0, f(w)) * beta
        )
    return abs(lhs - rhs)


def verify_outcome_mixture(spec: WorldSpec, tables: WorldTables | None = None) -> float:
    """Max residual of E[Y|W,that] = sum_t E[Y|W,T=t] P(T=t|W,that)."""
    tables = tables or analyze_world(spec)
    f = spec.feature_fn()
    worst = 0.0
    for w in tables.p_w:
        for that in (0, 1):
            lhs = tables.e_y_given_w_that(w, that)
            if lhs is None:
                continue  # proxy value unreachable for this text
            rhs = sum(
                spec.outcome_prob(t, f(w)) * tables.p_t_given_w_that(t, w, that)
                for t in (0, 1)
            )
            worst = max(worst, abs(lhs - rhs))
    return worst


@dataclass(frozen=True)
class TheoryReport:
    psi_wri: float
    psi_rea: float
    psi_proxy_exact: float
    psi_naive_exact: float
    attenuation_bias: float
    per_w_terms: Mapping[str, Mapping[str, float]]
    residuals: Mapping[str, float]

    def passed(self) -> bool:
        r = self.residuals
        return (
            r["identification"] < IDENTITY_TOL
            and r["attenuation"] < IDENTITY_TOL
            and r["naive_bias"] < IDENTITY_TOL
            and r["outcome_mixture"] < MIXTURE_TOL
        )

    def to_dict(self) -> dict:
        return {
            "psi_wri": self.psi_wri,
            "psi_rea": self.psi_rea,
            "psi_proxy_exact": self.psi_proxy_exact,
            "psi_naive_exact": self.psi_naive_exact,
            "attenuation_bias": self.attenuation_bias,
            "per_w_terms": {k: dict(v) for k, v in self.per_w_terms.items()},
            "residuals": dict(self.residuals),
        }


def theory_report(spec: WorldSpec) -> TheoryReport:
    """All exact estimands, per-text terms, and identity residuals for a world."""
    tables = analyze_world(spec)
    wri = psi_wri_exact(spec)
    rea = psi_rea_exact(spec, tables)
    proxy = psi_proxy_exact(spec, tables)
    naive = psi_naive_exact(spec, tables)
    per_w = {}
    for w in sorted(tables.p_w):
        zt = tables.ztilde[w]
        eps0, eps1 = tables.epsilons(zt)
        alpha, beta = _alpha_beta(tables, w)
        per_w[" ".join(w)] = {
            "epsilon0": eps0,
            "epsilon1": eps1,
            "p0": 1.0 - eps1,
            "p1": 1.0 - eps0,
            "E0": tables.e_y_given_t_z(0, zt),
            "E1": tables.e_y_given_t_z(1, zt),
            "alpha_w": alpha,
            "beta_w": beta,
        }
    residuals = {
        "identification": abs(rea - wri),
        "attenuation": verify_attenuation(spec, tables),
        "naive_bias": verify_naive_bias(spec, tables),
        "outcome_mixture": verify_outcome_mixture(spec, tables),
    }
    return TheoryReport(
        psi_wri=wri,
        psi_rea=rea,
        psi_proxy_exact=proxy,
        psi_naive_exact=naive,
        attenuation_bias=attenuation_bias_term(spec, tables),
        per_w_terms=per_w,
        residuals=residuals,
    )


# ---------------------------------------------------------------------------
# World families
# ---------------------------------------------------------------------------

_POS_TOKENS = ("pos1", "pos2")
_NEG_TOKENS = ("neg1", "neg2")
_CONFOUND_TOKEN = "cf"


def _product_text_model(u1: float, u0: float, g: tuple[float, float]):
    """Treatment token (disjoint by T) crossed with confound-token presence.

    The confound-token rate g[z] depends only on Z, so the feature
    distribution cannot shift under a treatment intervention.
    """
    model = {}
    for t, (tokens, u) in enumerate((( _NEG_TOKENS, u0), (_POS_TOKENS, u1))):
        probs = (u, 1.0 - u)
        for z in (0, 1):
            rows = []
            for tok, pt in zip(tokens, probs):
                rows.append(((tok, _CONFOUND_TOKEN), pt * g[z]))
                rows.append(((tok,), pt * (1.0 - g[z])))
            model[(t, z)] = tuple(rows)
    return model


def make_world(
    p_t1: float,
    p_z1_given_t: tuple[float, float],
    confound_rates: tuple[float, float],
    outcome_base: float,
    outcome_effect: float,
    outcome_confound: float,
    proxy_rule: ProxyRule,
    token_mix: tuple[float, float] = (0.6, 0.6),
    covariate_mode: str = "z",
) -> WorldSpec:
    """A clean-split world: treatment readable from disjoint token sets,
    confound feature driven by Z alone, outcome linear in (t, ztilde)."""
    p_tz = (
        ((1 - p_t1) * (1 - p_z1_given_t[0]), (1 - p_t1) * p_z1_given_t[0]),
        (p_t1 * (1 - p_z1_given_t[1]), p_t1 * p_z1_given_t[1]),
    )
    outcome = {
        (t, zt): outcome_base + outcome_effect * t + outcome_confound * zt
        for t in (0, 1)
        for zt in (0, 1)
    }
    for v in outcome.values():
        if not 0.0 < v < 1.0:
            raise ValueError(f"outcome probability {v} out of range; adjust coefficients")
    return WorldSpec(
        p_tz=p_tz,
        text_model=_product_text_model(token_mix[1], token_mix[0], confound_rates),
        proxy_rule=proxy_rule,
        outcome_model=outcome,
        feature=f"contains-token:{_CONFOUND_TOKEN}",
        covariate_mode=covariate_mode,
    )


def _suite_proxy(i: int, rng) -> ProxyRule:
    kind = i % 3
    if kind == 0:
        return ProxyRule(kind="lexicon", words=frozenset({"pos1"}))
    if kind == 1:
        return ProxyRule(kind="flip_true", accuracy=float(rng.uniform(0.7, 0.95)))
    hi = float(rng.uniform(0.7, 0.85))
    lo = float(rng.uniform(0.1, 0.25))
    table = {}
    for tok in _POS_TOKENS + _NEG_TOKENS:
        base = hi if tok in _POS_TOKENS else lo
        table[tok] = base
        table[f"{tok} {_CONFOUND_TOKEN}"] = base
    return ProxyRule(kind="table", table=table)


def build_world_suite(n_worlds: int = 20, seed: int = 20240808) -> list[WorldSpec]:
    """Randomized admissible worlds with homogeneous positive effects and
    better-than-chance proxies; fixed seed makes the suite reproducible."""
    rng = np.random.default_rng(seed)
    worlds = []
    for i in range(n_worlds):
        world = make_world(
            p_t1=float(rng.uniform(0.3, 0.7)),
            p_z1_given_t=(float(rng.uniform(0.25, 0.75)), float(rng.uniform(0.25, 0.75))),
            confound_rates=(float(rng.uniform(0.05, 0.4)), float(rng.uniform(0.6, 0.95))),
            outcome_base=float(rng.uniform(0.15, 0.3)),
            outcome_effect=float(rng.uniform(0.1, 0.4)),
            outcome_confound=float(rng.uniform(-0.1, 0.2)),
            proxy_rule=_suite_proxy(i, rng),
            token_mix=(float(rng.uniform(0.3, 0.9)), float(rng.uniform(0.3, 0.9))),
        )
        worlds.append(world)
    return worlds


def accuracy_family(accuracy: float, confound: float = 0.15) -> WorldSpec:
    """One-parameter world family whose proxy is a symmetric flip of the
    truth; accuracy 1.0 recovers the true label, 0.5 is chance."""
    return make_world(
        p_t1=0.5,
        p_z1_given_t=(0.35, 0.65),
        confound_rates=(0.0, 1.0),  # feature reveals Z exactly
        outcome_base=0.25,
        outcome_effect=0.3,
        outcome_confound=confound,
        proxy_rule=ProxyRule(kind="flip_true", accuracy=accuracy),
    )


def latent_treatment_world(
    accuracy: float = 0.85,
    outcome_effect: float = 0.3,
    outcome_confound: float = 0.15,
) -> WorldSpec:
    """World whose text reveals exactly the confound feature and nothing else.

    The treatment is latent: both treatment values emit the same texts, so
    E[Y | proxy, W] = E[Y | proxy, ztilde] holds exactly and a trained
    adjustment model has nothing to overfit; its estimate is consistent for
    the exact proxy contrast. Not admissible for the identification identity
    (perception is not determined by the text), only for proxy estimands.
    """
    p_t1 = 0.5
    p_z1_given_t = (0.3, 0.7)
    p_tz = (
        ((1 - p_t1) * (1 - p_z1_given_t[0]), (1 - p_t1) * p_z1_given_t[0]),
        (p_t1 * (1 - p_z1_given_t[1]), p_t1 * p_z1_given_t[1]),
    )
    rows_by_z = {
        0: ((("base",), 1.0),),
        1: (((_CONFOUND_TOKEN,), 1.0),),
    }
    text_model = {(t, z): rows_by_z[z] for t in (0, 1) for z in (0, 1)}
    outcome = {
        (t, zt): 0.25 + outcome_effect * t + outcome_confound * zt
        for t in (0, 1)
        for zt in (0, 1)
    }
    return WorldSpec(
        p_tz=p_tz,
        text_model=text_model,
        proxy_rule=ProxyRule(kind="flip_true", accuracy=accuracy),
        outcome_model=outcome,
        feature=f"contains-token:{_CONFOUND_TOKEN}",
        covariate_mode="z",
    )


def attenuation_sweep(
    world_family: Callable[[float], WorldSpec],
    error_grid: Sequence[float],
    sample_n: int = 0,
    seed: int = 0,
    train_config=None,
) -> list[dict[str, float]]:
    """Exact proxy-contrast across a proxy-quality grid, optionally paired
    with full-pipeline estimates on sampled corpora."""
    rows = []
    for level in error_grid:
        spec = world_family(level)
        tables = analyze_world(spec)
        row: dict[str, float] = {
            "accuracy": float(level),
            "psi_rea_exact": psi_rea_exact(spec, tables),
            "psi_proxy_exact": psi_proxy_exact(spec, tables),
        }
        if sample_n > 0:
            from . import adjust  # local import keeps module load light

            config = train_config or adjust.TrainConfig(seed=seed)
            corpus = sample_world(spec, sample_n, seed=seed)
            corpus = [d.with_fields(proxy_boosted=d.proxy) for d in corpus]
            est = adjust.cross_validated_ate(corpus, config)
            row["psi_hat_adjust"] = est.value
            row["psi_hat_se"] = est.standard_error if est.standard_error is not None else 0.0
        rows.append(row)
    return rows
