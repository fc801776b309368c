"""Define the state structures for the pipeline graph."""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Any, Dict, List

from typing_extensions import Annotated

from objdisco.config import STAGES


def merge_dicts(left: Dict[str, Any], right: Dict[str, Any]) -> Dict[str, Any]:
    """Reducer merging per-stage entries; later stages win on key collisions."""
    return {**left, **right}


@dataclass
class InputState:
    """Defines the input state of a pipeline run: how far to go."""

    stop_after: str = field(default=STAGES[-1])
    """
    The last stage to run. Stages run in pipeline order and the graph ends right
    after this one; stages before it run (or are served from cache) first.
    """


@dataclass
class State(InputState):
    """Represents the complete state of a pipeline run.

    Stage outputs live on disk; the state only carries what later stages and the
    caller need to find and attribute them.
    """

    completed: Annotated[List[str], operator.add] = field(default_factory=list)
    """Stages finished so far, in order."""

    keys: Annotated[Dict[str, str], merge_dicts] = field(default_factory=dict)
    """Cache key of every finished stage."""

    summaries: Annotated[Dict[str, Dict[str, Any]], merge_dicts] = field(default_factory=dict)
    """Per-stage counters, printed by the command line front end."""
