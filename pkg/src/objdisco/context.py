"""Define the runtime context of the pipeline graph."""

from __future__ import annotations

from dataclasses import dataclass, field

from objdisco.config import PipelineConfig
from objdisco.utils import sha256_text


@dataclass(kw_only=True)
class Context:
    """The context for a pipeline run."""

    config: PipelineConfig = field(
        default_factory=PipelineConfig,
        metadata={
            "description": "The validated pipeline configuration. "
            "Every stage reads its own section and the global seed from it."
        },
    )

    force: bool = field(
        default=False,
        metadata={
            "description": "Recompute stages even when their cached outputs match the current cache key."
        },
    )

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical config JSON."""
        return sha256_text(self.config.canonical_json())
