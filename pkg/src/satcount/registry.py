"""Object class registry and size-group routing.

Defaults to the 60 xView object classes. The small/medium/large grouping
decides which ensemble members see which classes and how evaluation
results are aggregated; the default assignment below follows physical
object footprint and is plain configuration, overridable per run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .errors import UnknownClass

SIZE_GROUPS = ("small", "medium", "large")

XVIEW_CLASS_NAMES: tuple[str, ...] = (
    "Fixed-wing Aircraft",
    "Small Aircraft",
    "Cargo Plane",
    "Helicopter",
    "Passenger Vehicle",
    "Small Car",
    "Bus",
    "Pickup Truck",
    "Utility Truck",
    "Truck",
    "Cargo Truck",
    "Truck w/Box",
    "Truck Tractor",
    "Trailer",
    "Truck w/Flatbed",
    "Truck w/Liquid",
    "Crane Truck",
    "Railway Vehicle",
    "Passenger Car",
    "Cargo Car",
    "Flat Car",
    "Tank car",
    "Locomotive",
    "Maritime Vessel",
    "Motorboat",
    "Sailboat",
    "Tugboat",
    "Barge",
    "Fishing Vessel",
    "Ferry",
    "Yacht",
    "Container Ship",
    "Oil Tanker",
    "Engineering Vehicle",
    "Tower crane",
    "Container Crane",
    "Reach Stacker",
    "Straddle Carrier",
    "Mobile Crane",
    "Dump Truck",
    "Haul Truck",
    "Scraper/Tractor",
    "Front loader/Bulldozer",
    "Excavator",
    "Cement Mixer",
    "Ground Grader",
    "Hut/Tent",
    "Shed",
    "Building",
    "Aircraft Hangar",
    "Damaged Building",
    "Facility",
    "Construction Site",
    "Vehicle Lot",
    "Helipad",
    "Storage Tank",
    "Shipping container lot",
    "Shipping Container",
    "Pylon",
    "Tower",
)

_SMALL = {
    "Small Aircraft",
    "Helicopter",
    "Passenger Vehicle",
    "Small Car",
    "Pickup Truck",
    "Utility Truck",
    "Motorboat",
    "Sailboat",
    "Hut/Tent",
    "Shed",
    "Shipping Container",
    "Pylon",
}

_LARGE = {
    "Cargo Plane",
    "Barge",
    "Ferry",
    "Container Ship",
    "Oil Tanker",
    "Tower crane",
    "Container Crane",
    "Building",
    "Aircraft Hangar",
    "Damaged Building",
    "Facility",
    "Construction Site",
    "Vehicle Lot",
    "Shipping container lot",
}

DEFAULT_SIZE_GROUP_MAP: dict[str, str] = {
    name: ("small" if name in _SMALL else "large" if name in _LARGE else "medium")
    for name in XVIEW_CLASS_NAMES
}


@dataclass(frozen=True)
class ClassRegistry:
    """Ordered class-name table; class ids are indices into it."""

    names: tuple[str, ...] = XVIEW_CLASS_NAMES
    _index: Mapping[str, int] = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("class registry contains duplicate names")
        if not self.names:
            raise ValueError("class registry is empty")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownClass(f"class name {name!r} is not in the registry") from None

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise UnknownClass(f"class id {class_id} outside the registry")
        return self.names[class_id]


DEFAULT_REGISTRY = ClassRegistry()


def group_map_by_id(
    registry: ClassRegistry, size_group_map: Mapping[str, str] | None = None
) -> dict[int, str]:
    """Per-class-id size group; classes absent from the map default to medium."""
    named = DEFAULT_SIZE_GROUP_MAP if size_group_map is None else size_group_map
    out = {}
    for i, name in enumerate(registry.names):
        group = named.get(name, "medium")
        if group not in SIZE_GROUPS:
            raise ValueError(f"unknown size group {group!r} for class {name!r}")
        out[i] = group
    return out
