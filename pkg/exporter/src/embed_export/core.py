"""Batched transformer inference producing per-document embedding files.

Reads a JSON Lines corpus (the texteffect schema: one object per line with at
least `id` and `text`), embeds every document with a pretrained language
model, and writes the embedding file format consumed by the texteffect
toolkit's external-representation mode:

    dim=<d>
    <id> <v1> ... <vd>

Output is written atomically (temp file + rename) and is deterministic for
fixed model weights: inference only, no sampling, no dropout.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import torch

log = logging.getLogger("embed_export")

POOLINGS = ("first-token", "mean")


class InputError(Exception):
    """Corpus file is missing or malformed."""


class ModelError(Exception):
    """The model identifier cannot be loaded."""


@dataclass(frozen=True)
class ExportJob:
    input_path: str
    output_path: str
    model_id: str
    pooling: str = "first-token"
    batch_size: int = 16
    max_len: int = 128

    def __post_init__(self) -> None:
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.max_len < 8:
            raise ValueError("max sequence length must be at least 8")


@dataclass(frozen=True)
class ExportResult:
    n_documents: int
    dim: int
    n_truncated: int


def read_documents(path: str | Path) -> list[tuple[str, str]]:
    """(id, text) pairs from a texteffect corpus file, in file order."""
    docs = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read corpus {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if "id" not in obj:
                raise InputError(f"{path}:{lineno}: document has no id")
            doc_id = str(obj["id"])
            if "text" not in obj or obj["text"] is None:
                raise InputError(f"document {doc_id!r} has no text field")
            docs.append((doc_id, obj["text"]))
    return docs


def load_model(model_id: str):
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:  # transformers raises a zoo of types here
        raise ModelError(f"cannot load model {model_id!r}: {exc}") from exc
    model.eval()
    return tokenizer, model


def _pool(hidden: torch.Tensor, mask: torch.Tensor, pooling: str) -> torch.Tensor:
    if pooling == "first-token":
        return hidden[:, 0, :]
    weights = mask.unsqueeze(-1).to(hidden.dtype)
    summed = (hidden * weights).sum(dim=1)
    counts = weights.sum(dim=1).clamp(min=1.0)
    return summed / counts


def export_embeddings(job: ExportJob) -> ExportResult:
    docs = read_documents(job.input_path)
    tokenizer, model = load_model(job.model_id)
    dim = int(model.config.hidden_size)
    n_truncated = 0
    out_dir = os.path.dirname(os.path.abspath(job.output_path)) or "."
    fd, tmp_path = tempfile.mkstemp(prefix=".embed-", dir=out_dir, text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as out:
            out.write(f"dim={dim}\n")
            for start in range(0, len(docs), job.batch_size):
                batch = docs[start : start + job.batch_size]
                texts = [text for _, text in batch]
                full = tokenizer(texts, truncation=False, padding=False)["input_ids"]
                n_truncated += sum(1 for ids in full if len(ids) > job.max_len)
                enc = tokenizer(
                    texts,
                    truncation=True,
                    max_length=job.max_len,
                    padding=True,
                    return_tensors="pt",
                )
                with torch.no_grad():
                    hidden = model(**enc).last_hidden_state
                pooled = _pool(hidden, enc["attention_mask"], job.pooling)
                if not torch.isfinite(pooled).all():
                    raise ModelError("model produced non-finite embeddings")
                for (doc_id, _), vec in zip(batch, pooled):
                    values = " ".join(repr(float(v)) for v in vec)
                    out.write(f"{doc_id} {values}\n")
        os.replace(tmp_path, job.output_path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    if n_truncated:
        log.info("truncated %d of %d documents to %d tokens", n_truncated, len(docs), job.max_len)
    return ExportResult(n_documents=len(docs), dim=dim, n_truncated=n_truncated)
