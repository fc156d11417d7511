"""Flavor and image catalogs, and the best-fit mapping of TOSCA requests onto them."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from .errors import AmbiguousImage, DuplicateImage, NoMatchingFlavor, NoMatchingImage
from .model import ScalarSize


@dataclass(frozen=True)
class Flavor:
    name: str
    vcpus: int
    mem: ScalarSize
    disk: ScalarSize

    @property
    def sort_key(self) -> tuple:
        return (self.vcpus, self.mem.bytes, self.disk.bytes, self.name)


class FlavorCatalog:
    """Flavors in their total order (vcpus, mem, disk, name)."""

    def __init__(self, entries: Iterable[Flavor]) -> None:
        entries = list(entries)
        names = [f.name for f in entries]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate flavor names in {names}")
        self.entries: tuple[Flavor, ...] = tuple(sorted(entries, key=lambda f: f.sort_key))

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, name: str) -> Flavor | None:
        return next((f for f in self.entries if f.name == name), None)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FlavorCatalog) and self.entries == other.entries

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> FlavorCatalog:
        return cls(
            Flavor(str(r["name"]), int(r["vcpus"]), _size(r["mem"]), _size(r["disk"])) for r in records
        )

    def to_records(self) -> list[dict]:
        return [{"name": f.name, "vcpus": f.vcpus, "mem": f.mem.format(), "disk": f.disk.format()} for f in self]


def _size(value) -> ScalarSize:
    return value if isinstance(value, ScalarSize) else ScalarSize.parse(str(value))


DEFAULT_FLAVORS = FlavorCatalog.from_records([
    {"name": "m1.tiny", "vcpus": 1, "mem": "512 MB", "disk": "1 GB"},
    {"name": "m1.small", "vcpus": 1, "mem": "2 GB", "disk": "20 GB"},
    {"name": "m1.medium", "vcpus": 2, "mem": "4 GB", "disk": "40 GB"},
    {"name": "m1.large", "vcpus": 4, "mem": "8 GB", "disk": "80 GB"},
    {"name": "m1.xlarge", "vcpus": 8, "mem": "16 GB", "disk": "160 GB"},
])


def map_flavor(
    num_cpus: int | None,
    mem_size: ScalarSize | None,
    disk_size: ScalarSize | None,
    catalog: FlavorCatalog = DEFAULT_FLAVORS,
) -> str:
    """Smallest flavor (in catalog order) covering every requested dimension."""
    if not len(catalog):
        raise NoMatchingFlavor("empty flavor catalog")
    cpus = num_cpus or 0
    mem = mem_size.bytes if mem_size else 0
    disk = disk_size.bytes if disk_size else 0
    for flavor in catalog:
        if flavor.vcpus >= cpus and flavor.mem.bytes >= mem and flavor.disk.bytes >= disk:
            return flavor.name
    raise NoMatchingFlavor(f"no flavor with >= {cpus} vcpus, {mem_size} memory, {disk_size} disk")


@dataclass(frozen=True)
class ImageEntry:
    """A registered image. ``application`` marks pre-configured application images."""

    name: str
    distribution: str = ""
    version: str = ""
    architecture: str = ""
    type: str = ""
    application: str | None = None

    def to_record(self) -> dict:
        rec = {
            "name": self.name,
            "distribution": self.distribution,
            "version": self.version,
            "architecture": self.architecture,
            "type": self.type,
        }
        if self.application:
            rec["application"] = self.application
        return rec


class ImageCatalog:
    def __init__(self, entries: Iterable[ImageEntry] = ()) -> None:
        self._entries: dict[str, ImageEntry] = {}
        for entry in entries:
            self.add(entry)

    def add(self, entry: ImageEntry) -> None:
        if entry.name in self._entries:
            raise DuplicateImage(f"image {entry.name!r} is already registered")
        self._entries[entry.name] = entry

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def copy(self) -> ImageCatalog:
        return ImageCatalog(self._entries.values())

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> ImageCatalog:
        return cls(
            ImageEntry(
                name=str(r["name"]),
                distribution=str(r.get("distribution", "")),
                version=str(r.get("version", "")),
                architecture=str(r.get("architecture", "")),
                type=str(r.get("type", "")),
                application=r.get("application"),
            )
            for r in records
        )

    def to_records(self) -> list[dict]:
        return [e.to_record() for e in self]


_OS_FIELDS = ("architecture", "type", "distribution", "version")


def map_image(os_props: Mapping[str, object], catalog: ImageCatalog) -> str:
    """Resolve an ``os`` capability to an image name.

    An explicit ``image`` is returned verbatim. Otherwise the unique base
    image (application images never match) whose metadata agrees with every
    supplied field is returned; distribution and type compare case-insensitively.
    """
    explicit = os_props.get("image")
    if explicit:
        return str(explicit)
    wanted = {k: str(os_props[k]) for k in _OS_FIELDS if os_props.get(k) is not None}

    def matches(entry: ImageEntry) -> bool:
        for key, value in wanted.items():
            have = getattr(entry, key)
            if key in ("distribution", "type"):
                if have.lower() != value.lower():
                    return False
            elif have != value:
                return False
        return True

    hits = sorted(e.name for e in catalog if not e.application and matches(e))
    if not hits:
        raise NoMatchingImage(f"no image matches {wanted}")
    if len(hits) > 1:
        raise AmbiguousImage(f"{len(hits)} images match {wanted}: {hits}", hits)
    return hits[0]


def load_flavor_catalog(path: str | Path) -> FlavorCatalog:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    records = data.get("flavors", []) if isinstance(data, dict) else data
    return FlavorCatalog.from_records(records or [])


def load_image_catalog(path: str | Path) -> ImageCatalog:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    records = data.get("images", []) if isinstance(data, dict) else data
    return ImageCatalog.from_records(records or [])
