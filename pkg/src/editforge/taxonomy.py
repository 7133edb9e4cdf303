"""Editing taxonomy: 22 sub-tasks in four categories, split into basic and complex edits.

The taxonomy lives in a versioned JSON data file so downstream tools can read it
without importing this package. ``load_taxonomy`` reads an alternative file when
the basic/complex split has to change.
"""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from .errors import UnknownSubTask

TAXONOMY_SCHEMA_VERSION = 1


class Category(str, enum.Enum):
    OBJECT = "object_editing"
    ATTRIBUTE = "attribute_editing"
    SCENE = "scene_editing"
    REASONING = "reasoning_editing"

    @property
    def display_name(self) -> str:
        return self.value.replace("_", " ").title()


class Complexity(str, enum.Enum):
    BASIC = "basic"
    COMPLEX = "complex"


class Metric(str, enum.Enum):
    IF = "IF"
    NC = "NC"
    VQ = "VQ"
    RA = "RA"


BASIC_METRICS = frozenset({Metric.IF, Metric.NC, Metric.VQ})
COMPLEX_METRICS = frozenset({Metric.IF, Metric.NC, Metric.VQ, Metric.RA})
METRIC_ORDER = (Metric.IF, Metric.NC, Metric.VQ, Metric.RA)


def normalize_name(name: str) -> str:
    """Canonical snake_case key for a sub-task name ("Shape-Size Alteration" -> "shape_size_alteration")."""
    return re.sub(r"[^0-9a-z]+", "_", name.strip().lower()).strip("_")


@dataclass(frozen=True)
class SubTask:
    key: str
    name: str
    category: Category
    complexity: Complexity
    description: str = ""

    @property
    def is_complex(self) -> bool:
        return self.complexity is Complexity.COMPLEX

    def __str__(self):
        return self.name


class Taxonomy:
    """An ordered, immutable collection of sub-tasks with name lookup."""

    def __init__(self, subtasks: Iterable[SubTask], version: str = ""):
        self._subtasks = tuple(subtasks)
        self.version = version
        self._by_key = {}
        for s in self._subtasks:
            norm = normalize_name(s.name)
            if norm in self._by_key or s.key in self._by_key:
                raise ValueError(f"duplicate sub-task name after normalization: {s.name!r}")
            self._by_key[norm] = s
            self._by_key.setdefault(s.key, s)

    @classmethod
    def from_dict(cls, doc: dict) -> "Taxonomy":
        if doc.get("schema_version") != TAXONOMY_SCHEMA_VERSION:
            raise ValueError(f"unsupported taxonomy schema_version {doc.get('schema_version')!r}")
        subtasks = [
            SubTask(
                key=rec["key"],
                name=rec["display_name"],
                category=Category(rec["category"]),
                complexity=Complexity(rec["complexity"]),
                description=rec.get("description", ""),
            )
            for rec in doc["subtasks"]
        ]
        return cls(subtasks, version=doc.get("taxonomy_version", ""))

    def to_dict(self) -> dict:
        return {
            "schema_version": TAXONOMY_SCHEMA_VERSION,
            "taxonomy_version": self.version,
            "subtasks": [
                {
                    "key": s.key,
                    "display_name": s.name,
                    "category": s.category.value,
                    "complexity": s.complexity.value,
                    "description": s.description,
                }
                for s in self._subtasks
            ],
        }

    def __iter__(self) -> Iterator[SubTask]:
        return iter(self._subtasks)

    def __len__(self):
        return len(self._subtasks)

    def __contains__(self, name) -> bool:
        return isinstance(name, str) and normalize_name(name) in self._by_key

    def get(self, name: str) -> SubTask:
        try:
            return self._by_key[normalize_name(name)]
        except KeyError:
            raise UnknownSubTask(f"unknown sub-task {name!r}") from None

    def by_category(self, category: Category) -> list[SubTask]:
        return [s for s in self._subtasks if s.category is category]

    def render(self) -> str:
        """Plain-text listing used inside generator prompts."""
        lines = []
        for cat in Category:
            lines.append(f"{cat.display_name}:")
            lines.extend(f"- {s.name}: {s.description}" for s in self.by_category(cat))
        return "\n".join(lines)


def load_taxonomy(path: str | Path | None = None) -> Taxonomy:
    if path is None:
        return default_taxonomy()
    with open(path, encoding="utf-8") as f:
        return Taxonomy.from_dict(json.load(f))


@lru_cache(maxsize=1)
def default_taxonomy() -> Taxonomy:
    text = resources.files("editforge").joinpath("data/taxonomy.json").read_text(encoding="utf-8")
    return Taxonomy.from_dict(json.loads(text))


def classify_subtask(name: str, taxonomy: Taxonomy | None = None) -> SubTask:
    """Case-insensitive lookup of a sub-task by display name or key.

    Raises UnknownSubTask for names outside the taxonomy.
    """
    return (taxonomy or default_taxonomy()).get(name)


def metric_set_for(subtask: SubTask) -> frozenset:
    return COMPLEX_METRICS if subtask.is_complex else BASIC_METRICS
