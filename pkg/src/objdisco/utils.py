"""Utility & helper functions."""

from __future__ import annotations

import hashlib
import logging
import sys
from pathlib import Path
from typing import Iterable

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def derive_seed(base: int, *keys: object) -> int:
    """Derive a 63-bit seed from a base seed and a sequence of keys.

    The result depends only on the values, never on call order, so frames and
    stages can be processed in any schedule.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def sha256_text(*parts: str) -> str:
    """Get the hex SHA-256 of the concatenated parts."""
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def sha256_files(paths: Iterable[Path]) -> str:
    """Get the hex SHA-256 over file names and contents, in the given order."""
    h = hashlib.sha256()
    for path in paths:
        h.update(path.name.encode("utf-8"))
        h.update(path.read_bytes())
    return h.hexdigest()


def configure_logging(verbose: bool = False) -> None:
    """Install a single stderr handler on the root logger."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
