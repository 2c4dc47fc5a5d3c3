import csv
import json

import pytest

from texteffect import cli
from texteffect.corpus import read_corpus
from texteffect.simulate import save_world
from texteffect.theory import build_world_suite, latent_treatment_world, make_world
from texteffect.simulate import ProxyRule


def run(argv):
    return cli.main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert run(["generate", "--out", out, "--n", 400, "--seed", 3]) == 0
    return out


@pytest.fixture(scope="module")
def boosted(generated, tmp_path_factory):
    out = tmp_path_factory.mktemp("boost")
    assert run(["boost", "--corpus", generated / "corpus.jsonl", "--out", out]) == 0
    return out


class TestConfigLoading:
    def test_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"n": 10, "seed": 4}')
        assert cli.load_config(path) == {"n": 10, "seed": 4}

    def test_key_value(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("n = 10\nseed=4  # comment\ngamma=0.5\nname=abc\n")
        assert cli.load_config(path) == {"n": 10, "seed": 4, "gamma": 0.5, "name": "abc"}

    def test_bad_line(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("nonsense\n")
        with pytest.raises(cli.ConfigError):
            cli.load_config(path)

    def test_unknown_key_rejected(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text('{"not_a_key": 1}')
        code = run(["generate", "--out", tmp_path / "o", "--config", path])
        assert code == 1


class TestGenerate:
    def test_outputs(self, generated):
        corpus = read_corpus(generated / "corpus.jsonl")
        assert len(corpus) == 400
        assert all(d.treatment_true is not None for d in corpus)
        assert all(d.proxy is not None for d in corpus)
        assert all(d.outcome is not None for d in corpus)
        meta = json.loads((generated / "meta.json").read_text())
        assert "oracle_ate" in meta and "propensity" in meta

    def test_deterministic(self, tmp_path):
        for name in ("r1", "r2"):
            assert run(["generate", "--out", tmp_path / name, "--n", 150, "--seed", 9]) == 0
        a = (tmp_path / "r1" / "corpus.jsonl").read_bytes()
        b = (tmp_path / "r2" / "corpus.jsonl").read_bytes()
        assert a == b
        assert (tmp_path / "r1" / "meta.json").read_bytes() == (
            tmp_path / "r2" / "meta.json"
        ).read_bytes()

    def test_noised_proxy_mode(self, tmp_path):
        assert run(
            ["generate", "--out", tmp_path / "o", "--n", 200, "--seed", 1, "--proxy", "noised"]
        ) == 0
        corpus = read_corpus(tmp_path / "o" / "corpus.jsonl")
        agree = sum(d.proxy == d.treatment_true for d in corpus) / len(corpus)
        assert agree > 0.85

    def test_world_sampling(self, tmp_path):
        world_path = tmp_path / "w.json"
        save_world(latent_treatment_world(), world_path)
        assert run(
            ["generate", "--out", tmp_path / "o", "--world", world_path, "--n", 50, "--seed", 2]
        ) == 0
        assert len(read_corpus(tmp_path / "o" / "corpus.jsonl")) == 50


class TestKeyValueConfig:
    def test_generate_with_kv_config(self, tmp_path):
        cfg = tmp_path / "sim.cfg"
        cfg.write_text("n=120\nbeta_t=0.5\ngamma=1.0\nseed=6\n")
        assert run(["generate", "--out", tmp_path / "o", "--config", cfg]) == 0
        meta = json.loads((tmp_path / "o" / "meta.json").read_text())
        assert meta["params"]["beta_t"] == 0.5
        assert meta["params"]["gamma"] == 1.0
        assert len(read_corpus(tmp_path / "o" / "corpus.jsonl")) == 120


class TestBoost:
    def test_outputs(self, boosted):
        corpus = read_corpus(boosted / "corpus.jsonl")
        assert all(d.proxy_boosted is not None for d in corpus)
        assert all(d.proxy_boosted >= d.proxy for d in corpus)
        assert (boosted / "classifier.json").exists()

    def test_deterministic(self, generated, tmp_path):
        for name in ("b1", "b2"):
            assert run(["boost", "--corpus", generated / "corpus.jsonl", "--out", tmp_path / name]) == 0
        assert (tmp_path / "b1" / "corpus.jsonl").read_bytes() == (
            tmp_path / "b2" / "corpus.jsonl"
        ).read_bytes()
        assert (tmp_path / "b1" / "classifier.json").read_bytes() == (
            tmp_path / "b2" / "classifier.json"
        ).read_bytes()


class TestAdjust:
    def test_estimate_and_determinism(self, boosted, tmp_path):
        for name in ("a1", "a2"):
            assert run(
                [
                    "adjust", "--corpus", boosted / "corpus.jsonl", "--out", tmp_path / name,
                    "--epochs", 3, "--seed", 5,
                ]
            ) == 0
        a = (tmp_path / "a1" / "estimate.csv").read_bytes()
        assert a == (tmp_path / "a2" / "estimate.csv").read_bytes()
        est = json.loads((tmp_path / "a1" / "estimate.json").read_text())
        assert est["estimand"] == "proxy"
        assert -1.0 < est["estimate"] < 1.0

    def test_unboosted_corpus_falls_back_to_proxy(self, generated, tmp_path):
        assert run(
            ["adjust", "--corpus", generated / "corpus.jsonl", "--out", tmp_path / "fb",
             "--epochs", 2, "--seed", 1]
        ) == 0

    def test_missing_embeddings_flag(self, boosted, tmp_path):
        code = run(
            ["adjust", "--corpus", boosted / "corpus.jsonl", "--out", tmp_path / "o",
             "--rep", "external"]
        )
        assert code == 1


class TestEstimate:
    def test_runs_all(self, boosted, tmp_path):
        assert run(
            [
                "estimate", "--corpus", boosted / "corpus.jsonl", "--out", tmp_path / "e",
                "--estimators", "naive,naive_c,true_naive_c,matrix",
            ]
        ) == 0
        rows = read_rows(tmp_path / "e" / "estimates.csv")
        assert [r["estimand"] for r in rows] == ["naive", "naive_c", "true_naive_c", "matrix"]

    def test_unknown_estimator(self, boosted, tmp_path):
        assert run(
            ["estimate", "--corpus", boosted / "corpus.jsonl", "--out", tmp_path / "e",
             "--estimators", "wat"]
        ) == 1

    def test_estimation_failure_exit_code(self, tmp_path):
        # corpus without outcomes -> runtime estimation failure (exit 3)
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "text": "x", "c": 0, "t_proxy": 1}\n'
                        '{"id": "b", "text": "y", "c": 0, "t_proxy": 0}\n')
        assert run(["estimate", "--corpus", path, "--out", tmp_path / "e"]) == 3


class TestBenchmarkSmoke:
    def test_structure_and_determinism(self, tmp_path):
        args = [
            "benchmark", "--out", None, "--n", 300, "--replicates", 1, "--seed", 11,
            "--estimators", "oracle,unadjusted,proxy_lex,matrix",
        ]
        for name in ("k1", "k2"):
            args[2] = tmp_path / name
            assert run(args) == 0
        a = (tmp_path / "k1" / "benchmark.csv").read_bytes()
        assert a == (tmp_path / "k2" / "benchmark.csv").read_bytes()
        rows = read_rows(tmp_path / "k1" / "benchmark.csv")
        assert len(rows) == 8 * 4  # 8 grid cells x 4 estimators
        scenarios = {r["scenario"] for r in rows}
        assert len(scenarios) == 8
        for r in rows:
            assert float(r["mean"]) == float(r["mean"])  # finite
            assert r["beta_o"] == "0.9"
        oracle_rows = [r for r in rows if r["estimator"] == "oracle"]
        assert all(float(r["delta_from_oracle"]) == 0.0 for r in oracle_rows)

    def test_rows_sorted(self, tmp_path):
        assert run(
            ["benchmark", "--out", tmp_path / "k", "--n", 300, "--replicates", 1,
             "--seed", 1, "--estimators", "oracle,unadjusted"]
        ) == 0
        rows = read_rows(tmp_path / "k" / "benchmark.csv")
        keys = [(r["scenario"], r["estimator"]) for r in rows]
        assert keys == sorted(keys)


class TestCrossingSmoke:
    def test_four_rows(self, tmp_path):
        assert run(
            ["crossing", "--out", tmp_path / "x", "--n", 400, "--replicates", 2, "--seed", 2]
        ) == 0
        rows = read_rows(tmp_path / "x" / "crossing.csv")
        assert sorted(r["estimator"] for r in rows) == sorted(cli.CROSSING_ESTIMATORS)

    def test_null_treatment_variant(self, tmp_path):
        assert run(
            ["crossing", "--out", tmp_path / "x0", "--n", 1200, "--replicates", 3,
             "--seed", 3, "--beta-t", 0.0]
        ) == 0
        rows = read_rows(tmp_path / "x0" / "crossing.csv")
        for r in rows:
            mean = float(r["mean"])
            se = float(r["se"])
            assert abs(mean) <= max(2 * se, 2.0), r["estimator"]  # percentage points


class TestSensitivitySmoke:
    def test_rows_ordered_by_accuracy(self, tmp_path):
        assert run(
            ["sensitivity", "--out", tmp_path / "s", "--n", 300, "--replicates", 1,
             "--seed", 4, "--accuracies", "1.0,0.6"]
        ) == 0
        rows = read_rows(tmp_path / "s" / "sensitivity.csv")
        scenarios = [r["scenario"] for r in rows]
        assert scenarios == sorted(scenarios)
        assert {r["scenario"] for r in rows} == {"acc0.6", "acc1"}

    def test_bad_accuracy_rejected(self, tmp_path):
        assert run(
            ["sensitivity", "--out", tmp_path / "s", "--accuracies", "0.3,1.0"]
        ) == 1


class TestVerify:
    def test_bundled_pass(self, tmp_path):
        assert run(["verify", "--bundled", "--out", tmp_path / "v"]) == 0
        report = json.loads((tmp_path / "v" / "verify.json").read_text())
        assert len(report) == 20
        assert all(entry["passed"] for entry in report)
        assert all("residuals" in entry for entry in report)

    def test_broken_world_nonzero_exit(self, tmp_path):
        bad = make_world(
            p_t1=0.5, p_z1_given_t=(0.0, 1.0), confound_rates=(0.0, 1.0),
            outcome_base=0.2, outcome_effect=0.1, outcome_confound=0.2,
            proxy_rule=ProxyRule(kind="flip_true", accuracy=0.9),
        )
        path = tmp_path / "bad.json"
        save_world(bad, path)
        assert run(["verify", path, "--out", tmp_path / "v"]) == 2
        report = json.loads((tmp_path / "v" / "verify.json").read_text())
        assert not report[0]["passed"]
        assert any("overlap" in d for d in report[0]["diagnostics"])

    def test_parse_error_nonzero_exit(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("{not json")
        assert run(["verify", path, "--out", tmp_path / "v"]) == 2

    def test_single_file_pass(self, tmp_path):
        path = tmp_path / "good.json"
        save_world(build_world_suite(1)[0], path)
        assert run(["verify", path, "--out", tmp_path / "v"]) == 0


class TestCellErrorMarkers:
    def test_failing_cell_recorded_not_fatal(self, tmp_path):
        # n=40 is below the cross-validation minimum, so every cell's
        # boost_adjust estimate fails; the grid still completes with markers.
        code = run(
            ["benchmark", "--out", tmp_path / "k", "--n", 40, "--replicates", 1,
             "--seed", 1, "--estimators", "oracle,boost_adjust"]
        )
        assert code == 0
        rows = read_rows(tmp_path / "k" / "benchmark.csv")
        assert len(rows) == 8
        assert all(r["estimator"] == "cell-error" for r in rows)
        assert all(r["error"] for r in rows)
