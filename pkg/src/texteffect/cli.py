"""Experiment orchestration CLI.

Subcommands: generate, boost, adjust, estimate, benchmark, crossing,
sensitivity, verify. Every run is keyed by a master seed; replicates and
grid cells derive independent RNG streams from (master seed, cell,
replicate), so reruns with identical configuration are byte-identical.

Reported effect values are scaled by 100 (percentage points) in benchmark,
crossing and sensitivity outputs; library-level values are raw probability
differences.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 runtime estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import adjust as adjust_mod
from . import corpus as corpus_mod
from . import estimators as est_mod
from . import proxy as proxy_mod
from . import simulate as sim_mod
from . import theory as theory_mod

PCT = 100.0

BENCHMARK_ESTIMATORS = (
    "oracle",
    "matrix",
    "unadjusted",
    "proxy_lex",
    "proxy_noised",
    "boost",
    "adjust",
    "boost_adjust",
)
CROSSING_ESTIMATORS = ("oracle", "proxy_lex", "boost", "boost_adjust")
SENSITIVITY_ESTIMATORS = ("oracle", "unadjusted", "proxy_noised", "boost", "adjust", "boost_adjust")


class ConfigError(Exception):
    pass


class VerificationFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def load_config(path: str | Path) -> dict:
    """JSON object or key=value lines."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    stripped = raw.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        return obj
    out = {}
    for lineno, line in enumerate(raw.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        out[key.strip()] = _parse_scalar(value.strip())
    return out


def _merged(defaults: Mapping, config_path: str | None, overrides: Mapping) -> dict:
    merged = dict(defaults)
    if config_path:
        file_cfg = load_config(config_path)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _recipe_from(cfg: Mapping) -> sim_mod.CorpusRecipe:
    try:
        return sim_mod.CorpusRecipe(
            n=int(cfg["n"]),
            p_c1=float(cfg["p_c1"]),
            pi0=float(cfg["pi0"]),
            pi1=float(cfg["pi1"]),
            lex_rare=float(cfg["lex_rare"]),
            lex_common=float(cfg["lex_common"]),
            lex_hit_t0=float(cfg["lex_hit_t0"]),
            latent_t0=float(cfg["latent_t0"]),
            expression_profile=str(cfg.get("expression_profile", "uniform")),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad recipe parameters: {exc}") from exc


def _seeds(master: int, *path: int) -> list[int]:
    ss = np.random.SeedSequence([int(master)] + [int(p) for p in path])
    return [int(v) for v in ss.generate_state(6)]


def _fmt(value: float) -> str:
    return repr(round(float(value), 12))


# ---------------------------------------------------------------------------
# Shared pipeline pieces
# ---------------------------------------------------------------------------


def _with_boost_source(corpus, field: str):
    return [d.with_fields(proxy_boosted=getattr(d, field)) for d in corpus]


def _run_boost(corpus, vocab_size=2000, l2=0.01, threshold=0.5, mode="t0_only"):
    config = proxy_mod.BoostConfig(relabel_mode=mode, l2_strength=l2, threshold=threshold)
    vocab = corpus_mod.build_vocabulary(corpus, vocab_size)
    feats = [corpus_mod.featurize(d, vocab, config.feature_scheme) for d in corpus]
    labels = [d.proxy for d in corpus]
    clf = proxy_mod.train_proxy_classifier(feats, labels, config, n_features=len(vocab), vocab=vocab)
    return proxy_mod.boost(corpus, clf, config, features=feats), clf


def _train_config(cfg: Mapping, seed: int) -> adjust_mod.TrainConfig:
    return adjust_mod.TrainConfig(
        epochs=int(cfg.get("epochs", 10)),
        batch_size=int(cfg.get("batch_size", 32)),
        learning_rate=float(cfg.get("learning_rate", 0.2)),
        folds=int(cfg.get("folds", 2)),
        seed=seed,
        dim=int(cfg.get("dim", 32)),
        init_scale=float(cfg.get("init_scale", 0.05)),
    )


def _replicate_estimates(
    recipe: sim_mod.CorpusRecipe,
    sim: Mapping[str, float],
    estimators: Sequence[str],
    cfg: Mapping,
    master: int,
    cell: int,
    rep: int,
    proxy_accuracy: float | None = None,
) -> dict[str, est_mod.AteEstimate]:
    """Generate one replicate corpus and run the requested estimators on it."""
    s_gen, s_sim, s_noise, s_train, s_train2, _ = _seeds(master, cell, rep)
    base = sim_mod.make_review_corpus(recipe, seed=s_gen)
    propensity = sim_mod.estimate_propensity(base)
    params = sim_mod.SimulationParams(
        beta_c=float(sim["beta_c"]),
        beta_t=float(sim["beta_t"]),
        beta_o=float(sim["beta_o"]),
        gamma=float(sim["gamma"]),
        seed=s_sim,
    )
    corpus = sim_mod.simulate_outcomes(base, params, propensity)
    lexicon = sim_mod.default_lexicon()
    corpus = [d.with_fields(proxy=corpus_mod.lexicon_proxy(d, lexicon)) for d in corpus]
    if proxy_accuracy is not None:
        noised = proxy_mod.noised_proxy(
            [d.treatment_true for d in corpus], proxy_accuracy, seed=s_noise
        )
        corpus = [d.with_fields(proxy=p) for d, p in zip(corpus, noised)]
    oracle = sim_mod.oracle_ate(corpus, params, propensity)
    out: dict[str, est_mod.AteEstimate] = {}
    boosted = None
    for name in estimators:
        if name == "oracle":
            out[name] = est_mod.AteEstimate("oracle", oracle, None, len(corpus))
        elif name == "matrix":
            mm = est_mod.estimate_measurement_model(corpus)
            joint = est_mod.JointTable.from_corpus(corpus, "proxy")
            value = est_mod.psi_matrix(joint, mm).value
            out[name] = est_mod.AteEstimate("matrix", value, None, len(corpus))
        elif name == "unadjusted":
            out[name] = est_mod.psi_naive(corpus, "proxy")
        elif name in ("proxy_lex", "proxy_noised"):
            if name == "proxy_noised" and proxy_accuracy is None:
                noised = proxy_mod.noised_proxy(
                    [d.treatment_true for d in corpus], 0.93, seed=s_noise
                )
                noised_corpus = [d.with_fields(proxy=p) for d, p in zip(corpus, noised)]
                est = est_mod.psi_naive_c(noised_corpus, "proxy")
            else:
                est = est_mod.psi_naive_c(corpus, "proxy")
            out[name] = est_mod.AteEstimate(name, est.value, None, est.n)
        elif name == "boost":
            if boosted is None:
                boosted, _ = _run_boost(
                    corpus,
                    vocab_size=int(cfg.get("vocab_size", 2000)),
                    l2=float(cfg.get("boost_l2", 0.01)),
                )
            est = est_mod.psi_naive_c(boosted, "proxy_boosted")
            out[name] = est_mod.AteEstimate("boost", est.value, None, est.n)
        elif name == "adjust":
            work = _with_boost_source(corpus, "proxy")
            est = adjust_mod.cross_validated_ate(
                work, _train_config(cfg, s_train), alpha=float(cfg.get("alpha", 0.01))
            )
            out[name] = est_mod.AteEstimate("adjust", est.value, est.standard_error, est.n)
        elif name == "boost_adjust":
            if boosted is None:
                boosted, _ = _run_boost(
                    corpus,
                    vocab_size=int(cfg.get("vocab_size", 2000)),
                    l2=float(cfg.get("boost_l2", 0.01)),
                )
            est = adjust_mod.cross_validated_ate(
                boosted, _train_config(cfg, s_train2), alpha=float(cfg.get("alpha", 0.01))
            )
            out[name] = est_mod.AteEstimate("boost_adjust", est.value, est.standard_error, est.n)
        else:
            raise ConfigError(f"unknown estimator {name!r}")
    return out


def _benchmark_task(args) -> tuple:
    cell_idx, scenario, sim, recipe_cfg, estimators, cfg, master, replicates, accuracy = args
    recipe = _recipe_from(recipe_cfg)
    per_est: dict[str, list] = {name: [] for name in estimators}
    try:
        for rep in range(replicates):
            ests = _replicate_estimates(
                recipe, sim, estimators, cfg, master, cell_idx, rep, proxy_accuracy=accuracy
            )
            for name, e in ests.items():
                per_est[name].append(e)
    except ValueError as exc:
        return scenario, sim, None, str(exc)
    agg = {name: est_mod.aggregate_replicates(vals) for name, vals in per_est.items()}
    return scenario, sim, agg, None


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _grid_run(cells, estimators, cfg, out_path: Path, workers: int) -> list[dict]:
    tasks = []
    for idx, (scenario, sim, accuracy) in enumerate(cells):
        tasks.append(
            (
                idx,
                scenario,
                sim,
                cfg["recipe"],
                estimators,
                cfg["train"],
                cfg["seed"],
                cfg["replicates"],
                accuracy,
            )
        )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_benchmark_task, tasks))
    else:
        results = [_benchmark_task(t) for t in tasks]
    header = [
        "scenario", "estimator", "mean", "se", "n", "delta_from_oracle",
        "gamma", "beta_t", "beta_c", "beta_o", "n_docs", "replicates", "seed", "error",
    ]
    rows = []
    summaries = []
    for scenario, sim, agg, error in results:
        params_cols = [
            _fmt(sim["gamma"]), _fmt(sim["beta_t"]), _fmt(sim["beta_c"]), _fmt(sim["beta_o"]),
            cfg["recipe"]["n"], cfg["replicates"], cfg["seed"],
        ]
        if agg is None:
            rows.append([scenario, "cell-error", "", "", 0, ""] + params_cols + [error])
            continue
        oracle_mean = agg["oracle"].value if "oracle" in agg else float("nan")
        for name in sorted(agg):
            e = agg[name]
            delta = abs(e.value - oracle_mean)
            rows.append(
                [
                    scenario,
                    name,
                    _fmt(e.value * PCT),
                    _fmt((e.standard_error or 0.0) * PCT),
                    e.n,
                    _fmt(delta * PCT),
                ]
                + params_cols
                + [""]
            )
            summaries.append(
                {
                    "scenario": scenario,
                    "estimator": name,
                    "mean": e.value,
                    "se": e.standard_error or 0.0,
                    "delta_from_oracle": delta,
                }
            )
    rows.sort(key=lambda r: (r[0], r[1]))
    _write_rows(out_path, header, rows)
    return summaries


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

GENERATE_DEFAULTS = {
    "n": 4000,
    "seed": 0,
    "p_c1": 0.5,
    "pi0": 0.35,
    "pi1": 0.75,
    "lex_rare": 0.40,
    "lex_common": 0.05,
    "lex_hit_t0": 0.04,
    "latent_t0": 0.02,
    "expression_profile": "uniform",
    "beta_c": -0.4,
    "beta_t": 0.8,
    "beta_o": 0.9,
    "gamma": 0.0,
    "proxy": "lexicon",  # lexicon | noised
    "noised_accuracy": 0.93,
}


def cmd_generate(args) -> int:
    cfg = _merged(
        GENERATE_DEFAULTS,
        args.config,
        {
            "n": args.n,
            "seed": args.seed,
            "beta_c": args.beta_c,
            "beta_t": args.beta_t,
            "beta_o": args.beta_o,
            "gamma": args.gamma,
            "proxy": args.proxy,
        },
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.world:
        spec = sim_mod.load_world(args.world)
        corpus = sim_mod.sample_world(spec, int(cfg["n"]), seed=int(cfg["seed"]))
        meta = {"source": "world", "world": str(args.world), "n": int(cfg["n"]), "seed": int(cfg["seed"])}
    else:
        recipe_keys = ("n", "p_c1", "pi0", "pi1", "lex_rare", "lex_common",
                       "lex_hit_t0", "latent_t0", "expression_profile")
        recipe_cfg = {k: cfg[k] for k in recipe_keys}
        recipe = _recipe_from(recipe_cfg)
        s_gen, s_sim, s_noise, _, _, _ = _seeds(int(cfg["seed"]), 0, 0)
        base = sim_mod.make_review_corpus(recipe, seed=s_gen)
        propensity = sim_mod.estimate_propensity(base)
        params = sim_mod.SimulationParams(
            beta_c=float(cfg["beta_c"]),
            beta_t=float(cfg["beta_t"]),
            beta_o=float(cfg["beta_o"]),
            gamma=float(cfg["gamma"]),
            seed=s_sim,
        )
        corpus = sim_mod.simulate_outcomes(base, params, propensity)
        if cfg["proxy"] == "lexicon":
            lexicon = sim_mod.default_lexicon()
            corpus = [d.with_fields(proxy=corpus_mod.lexicon_proxy(d, lexicon)) for d in corpus]
        elif cfg["proxy"] == "noised":
            noised = proxy_mod.noised_proxy(
                [d.treatment_true for d in corpus], float(cfg["noised_accuracy"]), seed=s_noise
            )
            corpus = [d.with_fields(proxy=p) for d, p in zip(corpus, noised)]
        else:
            raise ConfigError(f"unknown proxy kind {cfg['proxy']!r}")
        meta = {
            "source": "recipe",
            "oracle_ate": sim_mod.oracle_ate(corpus, params, propensity),
            "propensity": {str(c): p for c, p in sorted(propensity.pi.items())},
            "params": {k: cfg[k] for k in sorted(cfg)},
        }
    corpus_mod.write_corpus(corpus, out_dir / "corpus.jsonl")
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(corpus)} documents to {out_dir / 'corpus.jsonl'}")
    return 0


BOOST_DEFAULTS = {"vocab_size": 2000, "l2": 0.01, "threshold": 0.5, "mode": "t0_only"}


def cmd_boost(args) -> int:
    cfg = _merged(BOOST_DEFAULTS, args.config, {"mode": args.mode, "l2": args.l2})
    corpus = corpus_mod.read_corpus(args.corpus)
    try:
        boosted, clf = _run_boost(
            corpus,
            vocab_size=int(cfg["vocab_size"]),
            l2=float(cfg["l2"]),
            threshold=float(cfg["threshold"]),
            mode=str(cfg["mode"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_corpus(boosted, out_dir / "corpus.jsonl")
    proxy_mod.save_classifier(clf, out_dir / "classifier.json")
    n_flipped = sum(1 for d in boosted if d.proxy == 0 and d.proxy_boosted == 1)
    print(f"relabeled {n_flipped} proxy-0 documents; wrote {out_dir / 'corpus.jsonl'}")
    return 0


ADJUST_DEFAULTS = {
    "epochs": 10,
    "batch_size": 32,
    "learning_rate": 0.2,
    "folds": 2,
    "dim": 32,
    "alpha": 0.01,
    "seed": 0,
    "treatment_field": "boost",
    "rep": "bow",
}


def cmd_adjust(args) -> int:
    cfg = _merged(
        ADJUST_DEFAULTS,
        args.config,
        {
            "treatment_field": args.treatment_field,
            "rep": args.rep,
            "alpha": args.alpha,
            "epochs": args.epochs,
            "folds": args.folds,
            "seed": args.seed,
        },
    )
    corpus = corpus_mod.read_corpus(args.corpus)
    field = {"proxy": "proxy", "boost": "proxy_boosted"}.get(str(cfg["treatment_field"]))
    if field is None:
        raise ConfigError(f"treatment_field must be proxy or boost, got {cfg['treatment_field']!r}")
    if field == "proxy_boosted" and all(d.proxy_boosted is None for d in corpus):
        field = "proxy"  # fall back to the raw proxy when no boosted labels exist
    work = _with_boost_source(corpus, field)
    rep_kind = {"bow": adjust_mod.TRAINED_BOW, "external": adjust_mod.EXTERNAL}.get(str(cfg["rep"]))
    if rep_kind is None:
        raise ConfigError(f"rep must be bow or external, got {cfg['rep']!r}")
    if rep_kind == adjust_mod.EXTERNAL:
        if not args.embeddings:
            raise ConfigError("external representation requires --embeddings")
        work = adjust_mod.attach_embeddings(work, args.embeddings)
    config = _train_config(cfg, int(cfg["seed"]))
    est = adjust_mod.cross_validated_ate(work, config, rep_kind=rep_kind, alpha=float(cfg["alpha"]))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    est_mod.write_estimates_csv([est], out_dir / "estimate.csv")
    with open(out_dir / "estimate.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "estimand": est.estimand,
                "estimate": est.value,
                "standard_error": est.standard_error,
                "n": est.n,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"psi_hat_proxy = {est.value:.6f} (n={est.n})")
    return 0


ESTIMATE_DEFAULTS = {"estimators": "naive,naive_c", "treatment_field": "proxy"}


def cmd_estimate(args) -> int:
    cfg = _merged(
        ESTIMATE_DEFAULTS,
        args.config,
        {"estimators": args.estimators, "treatment_field": args.treatment_field},
    )
    corpus = corpus_mod.read_corpus(args.corpus)
    field = str(cfg["treatment_field"])
    if field not in ("proxy", "proxy_boosted", "treatment_true"):
        raise ConfigError(f"bad treatment_field {field!r}")
    names = [s.strip() for s in str(cfg["estimators"]).split(",") if s.strip()]
    results = []
    for name in names:
        if name == "naive":
            results.append(est_mod.psi_naive(corpus, field))
        elif name == "naive_c":
            results.append(est_mod.psi_naive_c(corpus, field))
        elif name == "true_naive_c":
            est = est_mod.psi_naive_c(corpus, "treatment_true")
            results.append(est_mod.AteEstimate("true_naive_c", est.value, None, est.n))
        elif name == "matrix":
            if args.measurement:
                mm = est_mod.read_measurement_csv(args.measurement)
            else:
                mm = est_mod.estimate_measurement_model(corpus, proxy_field=field)
            joint = est_mod.JointTable.from_corpus(corpus, field)
            results.append(est_mod.psi_matrix(joint, mm))
        else:
            raise ConfigError(f"unknown estimator {name!r}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    est_mod.write_estimates_csv(results, out_dir / "estimates.csv")
    for e in results:
        print(f"{e.estimand}: {e.value:.6f}")
    return 0


BENCHMARK_DEFAULTS = {
    "replicates": 10,
    "seed": 0,
    "recipe": GENERATE_DEFAULTS,
    "train": ADJUST_DEFAULTS,
    "beta_o": 0.9,
    "gammas": (0.0, 1.0),
    "beta_ts": (0.4, 0.8),
    "beta_cs": (-0.4, 4.0),
    "estimators": ",".join(BENCHMARK_ESTIMATORS),
}


def _nested_cfg(args, n, replicates, seed) -> dict:
    cfg = {
        "replicates": BENCHMARK_DEFAULTS["replicates"],
        "seed": BENCHMARK_DEFAULTS["seed"],
        "recipe": dict(GENERATE_DEFAULTS),
        "train": dict(ADJUST_DEFAULTS),
    }
    if args.config:
        file_cfg = load_config(args.config)
        for key in ("replicates", "seed"):
            if key in file_cfg:
                cfg[key] = file_cfg[key]
        for key in ("recipe", "train"):
            if key in file_cfg:
                if not isinstance(file_cfg[key], dict):
                    raise ConfigError(f"config key {key!r} must be an object")
                cfg[key].update(file_cfg[key])
        flat = {k: v for k, v in file_cfg.items() if k in GENERATE_DEFAULTS}
        cfg["recipe"].update(flat)
    if n is not None:
        cfg["recipe"]["n"] = n
    if replicates is not None:
        cfg["replicates"] = replicates
    if seed is not None:
        cfg["seed"] = seed
    cfg["replicates"] = int(cfg["replicates"])
    cfg["seed"] = int(cfg["seed"])
    return cfg


def cmd_benchmark(args) -> int:
    cfg = _nested_cfg(args, args.n, args.replicates, args.seed)
    beta_o = 0.9
    cells = []
    for gamma in (0.0, 1.0):
        for beta_t in (0.4, 0.8):
            for beta_c in (-0.4, 4.0):
                scenario = f"g{gamma:g}_t{beta_t:g}_c{beta_c:g}"
                sim = {"gamma": gamma, "beta_t": beta_t, "beta_c": beta_c, "beta_o": beta_o}
                cells.append((scenario, sim, None))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    estimators = tuple(args.estimators.split(",")) if args.estimators else BENCHMARK_ESTIMATORS
    summaries = _grid_run(cells, estimators, cfg, out_dir / "benchmark.csv", args.workers)
    deltas: dict[str, list[float]] = {}
    for row in summaries:
        deltas.setdefault(row["estimator"], []).append(row["delta_from_oracle"])
    print(f"wrote {out_dir / 'benchmark.csv'}")
    for name in sorted(deltas):
        print(f"mean |delta from oracle| {name}: {np.mean(deltas[name]) * PCT:.3f}")
    return 0


CROSSING_DEFAULTS = {
    "replicates": 10,
    "seed": 0,
    "n": 4000,
    "beta_c": 0.8,
    "beta_t": -1.0,
    "pi": 0.8,
    "beta_o": 0.6,
    "gamma": 1.0,
    "lex_rare": 0.16,
    "lex_common": 0.06,
    "lex_hit_t0": 0.75,
    "epochs": 16,
    "learning_rate": 0.3,
    "alpha": 0.001,
    "init_scale": 0.3,
    "boost_l2": 0.05,
}


def cmd_crossing(args) -> int:
    cfg_flat = _merged(
        CROSSING_DEFAULTS,
        args.config,
        {"replicates": args.replicates, "seed": args.seed, "n": args.n, "beta_t": args.beta_t},
    )
    recipe_cfg = dict(GENERATE_DEFAULTS)
    recipe_cfg.update(
        {
            "n": int(cfg_flat["n"]),
            "pi0": float(cfg_flat["pi"]),
            "pi1": float(cfg_flat["pi"]),
            "lex_rare": float(cfg_flat["lex_rare"]),
            "lex_common": float(cfg_flat["lex_common"]),
            "lex_hit_t0": float(cfg_flat["lex_hit_t0"]),
        }
    )
    train_cfg = dict(ADJUST_DEFAULTS)
    train_cfg.update(
        {
            "epochs": int(cfg_flat["epochs"]),
            "learning_rate": float(cfg_flat["learning_rate"]),
            "alpha": float(cfg_flat["alpha"]),
            "init_scale": float(cfg_flat["init_scale"]),
            "boost_l2": float(cfg_flat["boost_l2"]),
        }
    )
    cfg = {
        "replicates": int(cfg_flat["replicates"]),
        "seed": int(cfg_flat["seed"]),
        "recipe": recipe_cfg,
        "train": train_cfg,
    }
    sim = {
        "gamma": float(cfg_flat["gamma"]),
        "beta_t": float(cfg_flat["beta_t"]),
        "beta_c": float(cfg_flat["beta_c"]),
        "beta_o": float(cfg_flat["beta_o"]),
    }
    cells = [("crossing", sim, None)]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = _grid_run(cells, CROSSING_ESTIMATORS, cfg, out_dir / "crossing.csv", args.workers)
    by_name = {row["estimator"]: row for row in summaries}
    oracle = by_name["oracle"]["mean"]
    naive_c = by_name["proxy_lex"]["mean"]
    flipped = oracle < 0 < naive_c or naive_c < 0 < oracle
    print(f"wrote {out_dir / 'crossing.csv'}")
    print(f"oracle={oracle * PCT:.2f} proxy_lex={naive_c * PCT:.2f} sign_flip={flipped}")
    return 0


SENSITIVITY_DEFAULTS = {
    "replicates": 5,
    "seed": 0,
    "n": 4000,
    "accuracies": "0.5,0.6,0.7,0.8,0.9,1.0",
    "beta_c": -0.4,
    "beta_t": 0.8,
    "beta_o": 0.9,
    "gamma": 0.0,
}


def cmd_sensitivity(args) -> int:
    cfg_flat = _merged(
        SENSITIVITY_DEFAULTS,
        args.config,
        {
            "replicates": args.replicates,
            "seed": args.seed,
            "n": args.n,
            "accuracies": args.accuracies,
        },
    )
    try:
        accuracies = sorted(float(v) for v in str(cfg_flat["accuracies"]).split(","))
    except ValueError as exc:
        raise ConfigError(f"bad accuracy grid: {exc}") from exc
    if any(not 0.5 <= a <= 1.0 for a in accuracies):
        raise ConfigError("accuracies must lie in [0.5, 1]")
    recipe_cfg = dict(GENERATE_DEFAULTS)
    recipe_cfg["n"] = int(cfg_flat["n"])
    cfg = {
        "replicates": int(cfg_flat["replicates"]),
        "seed": int(cfg_flat["seed"]),
        "recipe": recipe_cfg,
        "train": dict(ADJUST_DEFAULTS),
    }
    sim = {k: float(cfg_flat[k]) for k in ("gamma", "beta_t", "beta_c", "beta_o")}
    cells = [(f"acc{acc:g}", sim, acc) for acc in accuracies]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _grid_run(cells, SENSITIVITY_ESTIMATORS, cfg, out_dir / "sensitivity.csv", args.workers)
    print(f"wrote {out_dir / 'sensitivity.csv'}")
    return 0


def cmd_verify(args) -> int:
    worlds: list[tuple[str, sim_mod.WorldSpec | None, str | None]] = []
    if args.bundled or not args.worlds:
        for i, spec in enumerate(theory_mod.build_world_suite()):
            worlds.append((f"bundled-{i:02d}", spec, None))
    for path in args.worlds:
        try:
            worlds.append((str(path), sim_mod.load_world(path), None))
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            worlds.append((str(path), None, f"parse error: {exc}"))
    report = []
    all_ok = True
    for name, spec, error in worlds:
        if spec is None:
            report.append({"world": name, "passed": False, "error": error})
            print(f"FAIL {name}: {error}")
            all_ok = False
            continue
        problems = theory_mod.check_world(spec)
        if problems:
            report.append({"world": name, "passed": False, "diagnostics": problems})
            print(f"FAIL {name}: {problems[0]}")
            all_ok = False
            continue
        tr = theory_mod.theory_report(spec)
        ok = tr.passed()
        all_ok = all_ok and ok
        entry = {"world": name, "passed": ok}
        entry.update(tr.to_dict())
        report.append(entry)
        residuals = " ".join(f"{k}={v:.2e}" for k, v in sorted(tr.residuals.items()))
        print(f"{'PASS' if ok else 'FAIL'} {name}: {residuals}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "verify.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not all_ok:
        raise VerificationFailure("one or more worlds failed verification")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="texteffect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus with simulated outcomes")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--world", help="sample from a world spec instead of the review recipe")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta-c", dest="beta_c", type=float)
    p.add_argument("--beta-t", dest="beta_t", type=float)
    p.add_argument("--beta-o", dest="beta_o", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--proxy", choices=["lexicon", "noised"])
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("boost", help="train a proxy classifier and relabel proxy-0 documents")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["t0_only", "all"])
    p.add_argument("--l2", type=float)
    p.set_defaults(func=cmd_boost)

    p = sub.add_parser("adjust", help="train the text-adjusted outcome model and estimate the effect")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--treatment-field", dest="treatment_field", choices=["proxy", "boost"])
    p.add_argument("--rep", choices=["bow", "external"])
    p.add_argument("--embeddings")
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("estimate", help="run tabular estimators on a corpus file")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--estimators")
    p.add_argument("--treatment-field", dest="treatment_field")
    p.add_argument("--measurement", help="measurement model CSV for the matrix estimator")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("benchmark", help="run the 8-cell simulation grid")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--estimators")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("crossing", help="run the sign-flip scenario")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta-t", dest="beta_t", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_crossing)

    p = sub.add_parser("sensitivity", help="sweep proxy accuracy and re-run the estimators")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--accuracies")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("verify", help="check the estimand identities on enumerable worlds")
    p.add_argument("worlds", nargs="*", help="world spec JSON files")
    p.add_argument("--bundled", action="store_true", help="include the bundled world suite")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
