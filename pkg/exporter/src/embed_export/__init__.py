"""Per-document transformer embedding export in the texteffect file format."""

from .core import ExportJob, ExportResult, InputError, ModelError, export_embeddings

__all__ = ["ExportJob", "ExportResult", "InputError", "ModelError", "export_embeddings"]
__version__ = "0.1.0"
