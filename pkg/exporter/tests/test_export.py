import json
import math
import subprocess
import sys

import pytest

from embed_export import ExportJob, InputError, export_embeddings
from embed_export.cli import main as cli_main


def read_embedding_file(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("dim=")
    dim = int(lines[0][4:])
    table = {}
    for line in lines[1:]:
        parts = line.split()
        table[parts[0]] = [float(v) for v in parts[1:]]
        assert len(parts) - 1 == dim
    return dim, table


class TestExport:
    def test_writes_header_and_rows(self, tiny_model_dir, corpus_file, tmp_path):
        out = tmp_path / "emb.txt"
        result = export_embeddings(
            ExportJob(str(corpus_file), str(out), tiny_model_dir, max_len=16)
        )
        assert result.n_documents == 100
        dim, table = read_embedding_file(out)
        assert dim == result.dim == 32
        assert len(table) == 100
        assert all(math.isfinite(v) for vec in table.values() for v in vec)

    def test_identical_texts_identical_vectors(self, tiny_model_dir, tmp_path):
        path = tmp_path / "two.jsonl"
        with open(path, "w") as fh:
            for i in range(2):
                fh.write(json.dumps({"id": f"d{i}", "text": "great music"}) + "\n")
        out = tmp_path / "emb.txt"
        export_embeddings(ExportJob(str(path), str(out), tiny_model_dir))
        _, table = read_embedding_file(out)
        assert table["d0"] == table["d1"]

    def test_deterministic_across_runs(self, tiny_model_dir, corpus_file, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        export_embeddings(ExportJob(str(corpus_file), str(a), tiny_model_dir))
        export_embeddings(ExportJob(str(corpus_file), str(b), tiny_model_dir))
        assert a.read_bytes() == b.read_bytes()

    def test_empty_corpus_header_only(self, tiny_model_dir, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        out = tmp_path / "emb.txt"
        result = export_embeddings(ExportJob(str(path), str(out), tiny_model_dir))
        assert result.n_documents == 0
        assert out.read_text() == "dim=32\n"

    def test_poolings_share_dimension(self, tiny_model_dir, corpus_file, tmp_path):
        dims = {}
        for pooling in ("first-token", "mean"):
            out = tmp_path / f"{pooling}.txt"
            export_embeddings(
                ExportJob(str(corpus_file), str(out), tiny_model_dir, pooling=pooling)
            )
            dims[pooling], table = read_embedding_file(out)
        assert dims["first-token"] == dims["mean"]

    def test_poolings_differ_in_values(self, tiny_model_dir, corpus_file, tmp_path):
        tables = {}
        for pooling in ("first-token", "mean"):
            out = tmp_path / f"{pooling}.txt"
            export_embeddings(
                ExportJob(str(corpus_file), str(out), tiny_model_dir, pooling=pooling)
            )
            tables[pooling] = read_embedding_file(out)[1]
        assert tables["first-token"]["doc000"] != tables["mean"]["doc000"]

    def test_missing_text_names_document(self, tiny_model_dir, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "odd-one", "c": 0}\n')
        with pytest.raises(InputError, match="odd-one"):
            export_embeddings(ExportJob(str(path), str(tmp_path / "o.txt"), tiny_model_dir))

    def test_truncation_counted(self, tiny_model_dir, tmp_path):
        path = tmp_path / "long.jsonl"
        path.write_text(json.dumps({"id": "a", "text": "music " * 50}) + "\n")
        out = tmp_path / "emb.txt"
        result = export_embeddings(ExportJob(str(path), str(out), tiny_model_dir, max_len=8))
        assert result.n_truncated == 1

    def test_no_temp_files_left(self, tiny_model_dir, corpus_file, tmp_path):
        out = tmp_path / "emb.txt"
        export_embeddings(ExportJob(str(corpus_file), str(out), tiny_model_dir))
        leftovers = [p for p in tmp_path.iterdir() if p.name.startswith(".embed-")]
        assert leftovers == []

    def test_max_len_floor(self, tiny_model_dir, corpus_file):
        with pytest.raises(ValueError, match="at least 8"):
            ExportJob(str(corpus_file), "o.txt", tiny_model_dir, max_len=4)


class TestCli:
    def test_model_load_failure_exit_1(self, corpus_file, tmp_path):
        code = cli_main(
            ["--input", str(corpus_file), "--output", str(tmp_path / "o.txt"),
             "--model", str(tmp_path / "no-such-model")]
        )
        assert code == 1

    def test_missing_input_exit_2(self, tiny_model_dir, tmp_path):
        code = cli_main(
            ["--input", str(tmp_path / "nope.jsonl"), "--output", str(tmp_path / "o.txt"),
             "--model", tiny_model_dir]
        )
        assert code == 2

    def test_success(self, tiny_model_dir, corpus_file, tmp_path, capsys):
        out = tmp_path / "emb.txt"
        code = cli_main(
            ["--input", str(corpus_file), "--output", str(out), "--model", tiny_model_dir,
             "--batch-size", "32", "--max-len", "16"]
        )
        assert code == 0
        assert out.exists()
        assert "wrote 100 embeddings" in capsys.readouterr().out


class TestAcceptanceRoundTrip:
    def test_primary_toolkit_consumes_export(self, tiny_model_dir, corpus_file, tmp_path):
        """[SECONDARY] criterion: export for a 100-document corpus passes the
        primary loader's validation and external-mode training completes with
        a finite effect estimate."""
        emb = tmp_path / "emb.txt"
        assert cli_main(
            ["--input", str(corpus_file), "--output", str(emb), "--model", tiny_model_dir,
             "--pooling", "first-token", "--max-len", "16"]
        ) == 0
        out_dir = tmp_path / "adjusted"
        proc = subprocess.run(
            [
                sys.executable, "-m", "texteffect.cli", "adjust",
                "--corpus", str(corpus_file), "--out", str(out_dir),
                "--rep", "external", "--embeddings", str(emb),
                "--treatment-field", "proxy", "--epochs", "4", "--seed", "1",
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        est = json.loads((out_dir / "estimate.json").read_text())
        assert math.isfinite(est["estimate"])
        print(f"PASS secondary round-trip: psi_hat_proxy={est['estimate']:.4f}")
