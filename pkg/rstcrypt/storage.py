"""
Artifact storage.

Every input image gets its own directory under the output root:

    <out>/<image-stem>/
        restructured_ri2.jpg
        encrypted_ri2.jpg
        ablation_ri2.jpg
        evaluation_ri2.json
        nzca_original_ri2.png
        ...
    <out>/summary.json

Design notes:
- Reports are pydantic models written with `model_dump_json(indent=2)`, so
  identical runs produce byte-identical files (no timestamps, fixed field order).
- Image ids are file stems; anything that could escape the output root is rejected.
- Loaders validate through the same models the writers use.
"""

import logging
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel

from rstcrypt.config import get_settings
from rstcrypt.pixels import ExportFormat, RasterImage, export
from rstcrypt.schemas import EvaluationSummary, RecipeFile

logger = logging.getLogger(__name__)

SUMMARY_FILENAME = "summary.json"

ModelT = TypeVar("ModelT", bound=BaseModel)


def _base(base_path: Path | None) -> Path:
    base = base_path if base_path is not None else get_settings().get_out_dir_resolved()
    return Path(base).resolve()


def _image_dir(image_id: str, base_path: Path | None) -> Path:
    """
    Create (if needed) and return the directory for one image.

    Raises:
        ValueError: `image_id` contains a path separator or is "." / "..".
    """
    if not image_id or "/" in image_id or "\\" in image_id or image_id in (".", ".."):
        raise ValueError(f"Invalid image id: {image_id!r}")
    path = _base(base_path) / image_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def get_image_dir(image_id: str, base_path: Path | None = None) -> Path:
    """Directory for `image_id`, without creating it."""
    return _base(base_path) / image_id


def save_bytes(content: bytes, image_id: str, filename: str, base_path: Path | None = None) -> Path:
    """Write a JPEG (or any binary artifact) into the image directory."""
    path = _image_dir(image_id, base_path) / filename
    path.write_bytes(content)
    logger.debug("wrote %s (%d bytes)", path, len(content))
    return path


def save_report(report: BaseModel, image_id: str, filename: str, base_path: Path | None = None) -> Path:
    path = _image_dir(image_id, base_path) / filename
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def load_report(model: type[ModelT], image_id: str, filename: str, base_path: Path | None = None) -> ModelT:
    """
    Raises:
        FileNotFoundError: the report was never written.
    """
    path = get_image_dir(image_id, base_path) / filename
    if not path.exists():
        raise FileNotFoundError(f"No report {filename} for image {image_id}: {path}")
    return model.model_validate_json(path.read_text(encoding="utf-8"))


def save_raster(
    img: RasterImage, image_id: str, stem: str, fmt: ExportFormat = "png", base_path: Path | None = None
) -> Path:
    path = _image_dir(image_id, base_path) / f"{stem}.{fmt}"
    return export(img, path, fmt)


def save_summary(summary: EvaluationSummary, base_path: Path | None = None) -> Path:
    base = _base(base_path)
    base.mkdir(parents=True, exist_ok=True)
    path = base / SUMMARY_FILENAME
    path.write_text(summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def load_summary(base_path: Path | None = None) -> EvaluationSummary:
    path = _base(base_path) / SUMMARY_FILENAME
    if not path.exists():
        raise FileNotFoundError(f"No evaluation summary at {path}")
    return EvaluationSummary.model_validate_json(path.read_text(encoding="utf-8"))


def save_recipe(recipe: RecipeFile, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(recipe.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def load_recipe(path: Path) -> RecipeFile:
    return RecipeFile.model_validate_json(Path(path).read_text(encoding="utf-8"))
