"""Base repository.

Shared file access helpers over one root directory: JSON documents, headered CSV
tables and small binary blobs. Every I/O failure surfaces as a
:class:`~objdisco.errors.DatasetError`.
"""

from __future__ import annotations

import json
import logging
from abc import ABC
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import pandas as pd
from pydantic import BaseModel

from objdisco.errors import DatasetError

logger = logging.getLogger(__name__)


class BaseRepository(ABC):
    """Repository base class."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, *parts: str) -> Path:
        """Path of ``parts`` under the repository root."""
        return self.root.joinpath(*parts)

    def ensure_dir(self, *parts: str) -> Path:
        """Create the directory ``parts`` (and parents) and return it."""
        target = self.path(*parts)
        try:
            target.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DatasetError(f"cannot create directory {target}: {e}") from e
        return target

    def write_text(self, relative: str, text: str) -> Path:
        """Write UTF-8 text, creating parent directories."""
        target = self.path(relative)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
        except OSError as e:
            raise DatasetError(f"cannot write {target}: {e}") from e
        return target

    def read_text(self, relative: str) -> str:
        """Read UTF-8 text."""
        target = self.path(relative)
        try:
            return target.read_text(encoding="utf-8")
        except OSError as e:
            raise DatasetError(f"cannot read {target}: {e}") from e

    def write_bytes(self, relative: str, data: bytes) -> Path:
        """Write a binary blob, creating parent directories."""
        target = self.path(relative)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        except OSError as e:
            raise DatasetError(f"cannot write {target}: {e}") from e
        return target

    def read_bytes(self, relative: str) -> bytes:
        """Read a binary blob."""
        target = self.path(relative)
        try:
            return target.read_bytes()
        except OSError as e:
            raise DatasetError(f"cannot read {target}: {e}") from e

    def write_json(self, relative: str, document: Dict[str, Any] | BaseModel) -> Path:
        """Write a JSON document with sorted keys and two-space indentation."""
        if isinstance(document, BaseModel):
            document = document.model_dump(mode="json")
        return self.write_text(relative, json.dumps(document, indent=2, sort_keys=True) + "\n")

    def read_json(self, relative: str) -> Dict[str, Any]:
        """Read a JSON object; anything else is a :class:`DatasetError`."""
        text = self.read_text(relative)
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{self.path(relative)}: malformed JSON: {e.msg}") from e
        if not isinstance(document, dict):
            raise DatasetError(f"{self.path(relative)}: expected a JSON object")
        return document

    def write_table(self, relative: str, frame: pd.DataFrame, sep: str = ",") -> Path:
        """Write a headered table; floats keep their shortest round-trip repr."""
        return self.write_text(relative, frame.to_csv(index=False, sep=sep, lineterminator="\n"))

    def read_table(
        self,
        relative: str,
        columns: Optional[Sequence[str]] = None,
        dtype: Optional[Dict[str, Any]] = None,
        sep: str = ",",
    ) -> pd.DataFrame:
        """Read a headered table and check its columns."""
        target = self.path(relative)
        try:
            frame = pd.read_csv(target, sep=sep, dtype=dtype, float_precision="round_trip")
        except (OSError, ValueError, pd.errors.ParserError) as e:
            raise DatasetError(f"cannot read table {target}: {e}") from e
        if columns is not None and list(frame.columns) != list(columns):
            raise DatasetError(f"{target}: expected columns {list(columns)}, got {list(frame.columns)}")
        return frame

    def exists(self, relative: str) -> bool:
        """Whether ``relative`` exists under the root."""
        return self.path(relative).exists()
