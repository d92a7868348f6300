"""A parent generator plus its per-decade fine-tuned children."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .checkpoints import MANIFEST_NAME, atomic_write_json, load_params, save_params
from .specs import GeneratorSpec, ParameterVector, SpecMismatchError

FAMILY_MANIFEST = "family.json"


@dataclass(frozen=True)
class GeneratorFamily:
    """One parent and one child per decade, all sharing one architecture.

    Decade labels must be contiguous in steps of 10 (full scale covers
    1880-2010; desk scale uses fewer labels).
    """

    spec: GeneratorSpec
    parent: ParameterVector
    children: Mapping[int, ParameterVector]
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "children",
                           {int(d): pv for d, pv in sorted(self.children.items())})
        want = self.spec.spec_hash()
        self.parent.check_spec(self.spec)
        for d, pv in self.children.items():
            if pv.spec_hash != want:
                raise SpecMismatchError(f"child {d} has mismatched spec_hash")
        decades = self.decades
        if len(decades) < 2:
            raise ValueError("a generator family requires at least 2 decades")
        for a, b in zip(decades, decades[1:]):
            if b - a != 10:
                raise ValueError(
                    f"decade labels must be contiguous in steps of 10, got {decades}")

    @property
    def decades(self) -> tuple[int, ...]:
        return tuple(sorted(self.children))

    def child(self, decade: int) -> ParameterVector:
        if decade not in self.children:
            raise KeyError(f"decade {decade} not in family {self.decades}")
        return self.children[decade]


def save_family(directory: Path, family: GeneratorFamily) -> None:
    directory = Path(directory)
    save_params(directory / "parent", family.parent, family.spec, decade=None)
    for d, pv in family.children.items():
        save_params(directory / f"child_{d}", pv, family.spec, decade=d)
    atomic_write_json(directory / FAMILY_MANIFEST, {
        "spec_hash": family.spec.spec_hash(),
        "decades": list(family.decades),
        "provenance": family.provenance,
        "parent": "parent",
        "children": {str(d): f"child_{d}" for d in family.decades},
    })


def load_family(directory: Path) -> GeneratorFamily:
    directory = Path(directory)
    manifest = json.loads((directory / FAMILY_MANIFEST).read_text())
    parent, spec, _ = load_params(directory / manifest["parent"])
    if spec.spec_hash() != manifest["spec_hash"]:
        raise SpecMismatchError("family manifest spec_hash mismatch")
    children = {}
    for d, sub in manifest["children"].items():
        pv, _, _ = load_params(directory / sub, expected_spec=spec)
        children[int(d)] = pv
    return GeneratorFamily(spec=spec, parent=parent, children=children,
                           provenance=manifest.get("provenance", ""))
