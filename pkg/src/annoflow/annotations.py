"""Two-dimensional annotation geometry and records.

All coordinates are normalized to [0,1] relative to the image dimensions, so
records stay valid across resolutions. Records are immutable; an edit is a
new record linked to its predecessor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Sequence

from .clock import parse_rfc3339, rfc3339
from .errors import GeometryError, InvalidAnnotationError

POINT = "point"
LINE = "line"
POLYGON = "polygon"
BBOX = "bbox"


def _check_unit(value: float, what: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise GeometryError(f"{what} must be a number, got {value!r}")
    if not 0.0 <= value <= 1.0:
        raise GeometryError(f"{what} must lie in [0,1], got {value}")
    return float(value)


def _check_points(points: Sequence[Sequence[float]], what: str) -> tuple[tuple[float, float], ...]:
    out = []
    for i, p in enumerate(points):
        if len(p) != 2:
            raise GeometryError(f"{what} vertex {i} must be an (x, y) pair")
        out.append((_check_unit(p[0], f"{what} x[{i}]"), _check_unit(p[1], f"{what} y[{i}]")))
    return tuple(out)


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    kind = POINT

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _check_unit(self.x, "point x"))
        object.__setattr__(self, "y", _check_unit(self.y, "point y"))

    def coords(self) -> tuple[float, ...]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Line:
    points: tuple[tuple[float, float], ...]
    kind = LINE

    def __post_init__(self) -> None:
        pts = _check_points(self.points, "line")
        if len(pts) < 2:
            raise GeometryError(f"line needs at least 2 points, got {len(pts)}")
        object.__setattr__(self, "points", pts)

    def coords(self) -> tuple[float, ...]:
        return tuple(v for p in self.points for v in p)


@dataclass(frozen=True)
class Polygon:
    points: tuple[tuple[float, float], ...]
    kind = POLYGON

    def __post_init__(self) -> None:
        pts = _check_points(self.points, "polygon")
        if len(set(pts)) < 3:
            raise GeometryError(f"polygon needs at least 3 distinct vertices, got {sorted(set(pts))}")
        object.__setattr__(self, "points", pts)

    def coords(self) -> tuple[float, ...]:
        return tuple(v for p in self.points for v in p)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in center format: (x_center, y_center, width, height)."""

    x_center: float
    y_center: float
    width: float
    height: float
    kind = BBOX

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_center", _check_unit(self.x_center, "bbox x_center"))
        object.__setattr__(self, "y_center", _check_unit(self.y_center, "bbox y_center"))
        object.__setattr__(self, "width", _check_unit(self.width, "bbox width"))
        object.__setattr__(self, "height", _check_unit(self.height, "bbox height"))
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"bbox width and height must be positive, got {self.width}x{self.height}")

    def coords(self) -> tuple[float, ...]:
        return (self.x_center, self.y_center, self.width, self.height)

    def corners(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max)."""
        hw, hh = self.width / 2.0, self.height / 2.0
        return (self.x_center - hw, self.y_center - hh, self.x_center + hw, self.y_center + hh)

    def area(self) -> float:
        return self.width * self.height


Geometry = Point | Line | Polygon | BBox

_KINDS = (POINT, LINE, POLYGON, BBOX)


def geometry_from_coords(kind: str, coords: Sequence[float]) -> Geometry:
    """Build a geometry from its flat coordinate list."""
    if kind == POINT:
        if len(coords) != 2:
            raise GeometryError(f"point takes 2 coordinates, got {len(coords)}")
        return Point(coords[0], coords[1])
    if kind == BBOX:
        if len(coords) != 4:
            raise GeometryError(f"bbox takes 4 coordinates, got {len(coords)}")
        return BBox(*coords)
    if kind in (LINE, POLYGON):
        if len(coords) % 2 != 0:
            raise GeometryError(f"{kind} coordinates must pair up, got {len(coords)} values")
        pts = tuple(zip(coords[0::2], coords[1::2]))
        return Line(pts) if kind == LINE else Polygon(pts)
    raise GeometryError(f"unknown geometry kind {kind!r}; expected one of {_KINDS}")


class AnnoSource(str, Enum):
    HUMAN = "human"
    PROPOSAL = "proposal"


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class TwoDAnno:
    """One immutable annotation row.

    Proposals must name the script element that produced them and may carry
    a confidence score. Edits never mutate a row: the store creates a new
    row pointing back via ``predecessor_id`` and flags the old one
    superseded.
    """

    anno_id: str
    image_ref: str
    geometry: Geometry
    labels: tuple[str, ...] = ()
    source: AnnoSource = AnnoSource.HUMAN
    annotator_id: str | None = None
    score: float | None = None
    iteration: int = 0
    instance_id: str | None = None
    producer_element: str | None = None
    task_element: str | None = None
    predecessor_id: str | None = None
    superseded: bool = False
    deleted: bool = False
    created_at: datetime = field(default_factory=_utc_now)
    last_modified: datetime | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "source", AnnoSource(self.source))
        if self.last_modified is None:
            object.__setattr__(self, "last_modified", self.created_at)
        if self.source is AnnoSource.PROPOSAL and not self.producer_element:
            raise InvalidAnnotationError(
                f"proposal {self.anno_id!r} must carry the id of the script element that produced it"
            )
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise InvalidAnnotationError(f"score of {self.anno_id!r} must lie in [0,1], got {self.score}")
        if self.iteration < 0:
            raise InvalidAnnotationError(f"iteration of {self.anno_id!r} must be non-negative")

    def is_active(self) -> bool:
        return not self.superseded and not self.deleted

    def with_flags(self, superseded: bool | None = None, deleted: bool | None = None) -> "TwoDAnno":
        changes: dict[str, Any] = {}
        if superseded is not None:
            changes["superseded"] = superseded
        if deleted is not None:
            changes["deleted"] = deleted
        return replace(self, **changes)


def anno_to_obj(a: TwoDAnno) -> dict[str, Any]:
    """JSON-friendly form used by the API and the worker protocol."""
    return {
        "anno_id": a.anno_id,
        "image_ref": a.image_ref,
        "kind": a.geometry.kind,
        "coords": list(a.geometry.coords()),
        "labels": list(a.labels),
        "source": a.source.value,
        "annotator": a.annotator_id,
        "score": a.score,
        "iteration": a.iteration,
        "instance_id": a.instance_id,
        "producer_element": a.producer_element,
        "task_element": a.task_element,
        "predecessor_id": a.predecessor_id,
        "superseded": a.superseded,
        "deleted": a.deleted,
        "created_at": rfc3339(a.created_at),
        "last_modified": rfc3339(a.last_modified),
    }


def anno_from_obj(obj: dict[str, Any]) -> TwoDAnno:
    try:
        geometry = geometry_from_coords(obj["kind"], obj["coords"])
        return TwoDAnno(
            anno_id=obj["anno_id"],
            image_ref=obj["image_ref"],
            geometry=geometry,
            labels=tuple(obj.get("labels", ())),
            source=AnnoSource(obj.get("source", "human")),
            annotator_id=obj.get("annotator"),
            score=obj.get("score"),
            iteration=int(obj.get("iteration", 0)),
            instance_id=obj.get("instance_id"),
            producer_element=obj.get("producer_element"),
            task_element=obj.get("task_element"),
            predecessor_id=obj.get("predecessor_id"),
            superseded=bool(obj.get("superseded", False)),
            deleted=bool(obj.get("deleted", False)),
            created_at=parse_rfc3339(obj["created_at"]) if "created_at" in obj else _utc_now(),
            last_modified=parse_rfc3339(obj["last_modified"]) if "last_modified" in obj else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidAnnotationError(f"malformed annotation object: {exc}") from exc
