"""Dataset manifests: fixed-column TSV records, filtering rules, splits.

One record per face image.  Filtering follows the source protocol: subjects
between 18 and 80 years old at capture (decade label stands in for the
capture year), pose within 30 degrees of frontal, nothing before 1880.
Rules that lack the data they need skip the record with a counter instead of
rejecting it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

COLUMNS = ("path", "decade", "birth_year", "yaw", "pitch", "split", "sha256")

AGE_MIN, AGE_MAX = 18, 80
MAX_ABS_POSE_DEG = 30.0
MIN_DECADE = 1880


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    decade: int
    birth_year: int | None = None
    yaw: float | None = None
    pitch: float | None = None
    split: str = "train"
    sha256: str = ""

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]

    def __len__(self):
        return len(self.records)

    def decades(self) -> list[int]:
        return sorted({r.decade for r in self.records})

    def by_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    # -- TSV round trip ------------------------------------------------------

    def to_tsv(self) -> str:
        lines = ["\t".join(COLUMNS)]
        for r in self.records:
            lines.append("\t".join([
                r.path,
                str(r.decade),
                "" if r.birth_year is None else str(r.birth_year),
                "" if r.yaw is None else repr(float(r.yaw)),
                "" if r.pitch is None else repr(float(r.pitch)),
                r.split,
                r.sha256,
            ]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "DatasetManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or tuple(lines[0].split("\t")) != COLUMNS:
            raise ValueError(f"manifest header must be {COLUMNS}")
        records = []
        for ln in lines[1:]:
            f = ln.split("\t")
            records.append(ManifestRecord(
                path=f[0],
                decade=int(f[1]),
                birth_year=int(f[2]) if f[2] else None,
                yaw=float(f[3]) if f[3] else None,
                pitch=float(f[4]) if f[4] else None,
                split=f[5],
                sha256=f[6],
            ))
        return cls(records=records)

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_tsv())

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        return cls.from_tsv(Path(path).read_text())


# -- curation -------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    """One filtering rule: returns 'accept', 'reject', or 'skip' (no data)."""

    name: str
    check: Callable[[ManifestRecord], str]


def age_window_rule(age_min: int = AGE_MIN, age_max: int = AGE_MAX) -> Rule:
    def check(r: ManifestRecord) -> str:
        if r.birth_year is None:
            return "skip"
        age = r.decade - r.birth_year
        return "accept" if age_min <= age <= age_max else "reject"

    return Rule("age_window", check)


def pose_rule(max_deg: float = MAX_ABS_POSE_DEG) -> Rule:
    def check(r: ManifestRecord) -> str:
        if r.yaw is None and r.pitch is None:
            return "skip"
        for v in (r.yaw, r.pitch):
            if v is not None and abs(v) > max_deg:
                return "reject"
        return "accept"

    return Rule("pose", check)


def era_rule(min_decade: int = MIN_DECADE) -> Rule:
    def check(r: ManifestRecord) -> str:
        return "accept" if r.decade >= min_decade else "reject"

    return Rule("era", check)


def default_rules() -> list[Rule]:
    return [age_window_rule(), pose_rule(), era_rule()]


@dataclass
class CurationReport:
    kept: int = 0
    rejected: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    malformed: int = 0

    def to_dict(self) -> dict:
        return {"kept": self.kept, "rejected": self.rejected,
                "skipped": self.skipped, "malformed": self.malformed}


def curate_manifest(raw_records: Iterable, rules: Sequence[Rule]
                    ) -> tuple[DatasetManifest, CurationReport]:
    """Filter records through the rules; malformed entries are rejected with
    a reason and never crash the batch."""
    report = CurationReport()
    kept: list[ManifestRecord] = []
    for raw in raw_records:
        try:
            record = raw if isinstance(raw, ManifestRecord) else ManifestRecord(**raw)
        except (TypeError, ValueError):
            report.malformed += 1
            continue
        verdict = "accept"
        for rule in rules:
            res = rule.check(record)
            if res == "skip":
                report.skipped[rule.name] = report.skipped.get(rule.name, 0) + 1
            elif res == "reject":
                report.rejected[rule.name] = report.rejected.get(rule.name, 0) + 1
                verdict = "reject"
                break
        if verdict == "accept":
            kept.append(record)
    report.kept = len(kept)
    return DatasetManifest(records=kept), report


def split_dataset(manifest: DatasetManifest, per_decade_test: int, seed: int
                  ) -> DatasetManifest:
    """Tag exactly ``per_decade_test`` records per eligible decade as test.

    Decades with too few records stay all-train (a warning is attached via
    logging).  Deterministic under the seed: records are ordered by content
    hash before the seeded shuffle.
    """
    import logging

    rng = np.random.default_rng(seed)
    by_decade: dict[int, list[ManifestRecord]] = {}
    for r in manifest.records:
        by_decade.setdefault(r.decade, []).append(r)

    out: list[ManifestRecord] = []
    for decade in sorted(by_decade):
        group = sorted(by_decade[decade], key=lambda r: (r.sha256, r.path))
        if per_decade_test > 0 and len(group) > per_decade_test:
            order = rng.permutation(len(group))
            test_idx = set(order[:per_decade_test].tolist())
        else:
            if per_decade_test > 0:
                logging.getLogger(__name__).warning(
                    "decade %d has only %d records (<= %d); keeping all in train",
                    decade, len(group), per_decade_test)
            test_idx = set()
        for i, r in enumerate(group):
            out.append(replace(r, split="test" if i in test_idx else "train"))
    return DatasetManifest(records=out)


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
