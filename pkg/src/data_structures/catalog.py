"""
Semantic class catalog.
Fixes the ids and roles (foreground, background, unknown) of every class.
"""

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Tuple, Union

from src.utils.errors import ValidationError


class ClassRole(str, Enum):
    """Role of a class in the mapping pipeline."""

    FOREGROUND = "foreground"
    BACKGROUND = "background"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SemanticClass:
    """One catalog entry."""

    name: str
    id: int
    role: ClassRole


@dataclass(frozen=True)
class ClassCatalog:
    """
    Ordered list of semantic classes.

    Ids are dense 0..C-1 and exactly one class has the unknown role, so
    C^fg + C^bg + 1 = C always holds.

    Raises:
        ValidationError: If ids are not dense or the unknown role is not unique
    """

    classes: Tuple[SemanticClass, ...]

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ValidationError(f"Class ids must be dense 0..C-1, got {ids}")

        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValidationError("Class names must be unique")

        unknown = [c for c in self.classes if c.role == ClassRole.UNKNOWN]
        if len(unknown) != 1:
            raise ValidationError(
                f"Exactly one class must have role 'unknown', found {len(unknown)}"
            )

    @property
    def num_classes(self) -> int:
        """C, the total number of classes."""
        return len(self.classes)

    @property
    def foreground_ids(self) -> Tuple[int, ...]:
        return tuple(c.id for c in self.classes if c.role == ClassRole.FOREGROUND)

    @property
    def background_ids(self) -> Tuple[int, ...]:
        return tuple(c.id for c in self.classes if c.role == ClassRole.BACKGROUND)

    @property
    def num_foreground(self) -> int:
        """C^fg."""
        return len(self.foreground_ids)

    @property
    def num_background(self) -> int:
        """C^bg."""
        return len(self.background_ids)

    @property
    def unknown_id(self) -> int:
        return next(c.id for c in self.classes if c.role == ClassRole.UNKNOWN)

    @property
    def all_ids(self) -> Tuple[int, ...]:
        return tuple(c.id for c in self.classes)

    def id_of(self, name: str) -> int:
        """
        Look up a class id by name.

        Raises:
            KeyError: If the name is not in the catalog
        """
        for c in self.classes:
            if c.name == name:
                return c.id
        raise KeyError(f"Class '{name}' not found in catalog")

    def name_of(self, class_id: int) -> str:
        return self.classes[class_id].name

    def role_of(self, class_id: int) -> ClassRole:
        return self.classes[class_id].role

    def to_dict(self) -> Dict[str, List[Dict[str, Union[str, int]]]]:
        return {
            "classes": [
                {"name": c.name, "id": c.id, "role": c.role.value} for c in self.classes
            ]
        }

    @classmethod
    def from_dict(cls, payload: Dict) -> "ClassCatalog":
        try:
            entries = payload["classes"]
            classes = tuple(
                SemanticClass(name=e["name"], id=int(e["id"]), role=ClassRole(e["role"]))
                for e in entries
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"Malformed catalog: {exc}") from exc
        return cls(tuple(sorted(classes, key=lambda c: c.id)))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ClassCatalog":
        """
        Load a catalog from a JSON file.

        Raises:
            FileNotFoundError: If the file does not exist
            ValidationError: If the content is malformed
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"File not found: {path}")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(payload)


def default_catalog() -> ClassCatalog:
    """
    Catalog used throughout: road, sidewalk and background are background
    classes, car and person are foreground occluders.
    """
    return ClassCatalog(
        (
            SemanticClass("road", 0, ClassRole.BACKGROUND),
            SemanticClass("sidewalk", 1, ClassRole.BACKGROUND),
            SemanticClass("background", 2, ClassRole.BACKGROUND),
            SemanticClass("car", 3, ClassRole.FOREGROUND),
            SemanticClass("person", 4, ClassRole.FOREGROUND),
            SemanticClass("unknown", 5, ClassRole.UNKNOWN),
        )
    )
