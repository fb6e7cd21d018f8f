"""Issue corpus: normalized records, dump import/export, gold labels, sampling."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from .errors import (
    DumpFormatError,
    DuplicateRecordError,
    GoldFileError,
    RecordInvariantError,
    SamplingError,
)

IssueKey = tuple[str, int]


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {value!r} has no timezone")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Comment:
    author_role: str
    created_at: datetime
    body: str


@dataclass(frozen=True)
class IssueRecord:
    repo: str
    number: int
    title: str
    state: str
    created_at: datetime
    updated_at: datetime
    closed_at: datetime | None
    body: str
    labels: tuple[str, ...]
    comments: tuple[Comment, ...]
    is_pull_request: bool
    url: str

    @property
    def key(self) -> IssueKey:
        return (self.repo, self.number)

    def validate(self) -> None:
        if self.number <= 0:
            raise RecordInvariantError(f"{self.repo}: non-positive issue number {self.number}")
        if self.state not in ("open", "closed"):
            raise RecordInvariantError(f"{self.repo}#{self.number}: bad state {self.state!r}")
        if self.created_at > self.updated_at:
            raise RecordInvariantError(
                f"{self.repo}#{self.number}: created_at after updated_at"
            )
        if (self.closed_at is not None) != (self.state == "closed"):
            raise RecordInvariantError(
                f"{self.repo}#{self.number}: closed_at must be present iff state is closed"
            )
        for a, b in zip(self.comments, self.comments[1:]):
            if a.created_at > b.created_at:
                raise RecordInvariantError(
                    f"{self.repo}#{self.number}: comments out of chronological order"
                )

    def to_dict(self) -> dict:
        return {
            "repo": self.repo,
            "number": self.number,
            "title": self.title,
            "state": self.state,
            "created_at": format_timestamp(self.created_at),
            "updated_at": format_timestamp(self.updated_at),
            "closed_at": format_timestamp(self.closed_at) if self.closed_at else None,
            "body": self.body,
            "labels": list(self.labels),
            "comments": [
                {
                    "author_role": c.author_role,
                    "created_at": format_timestamp(c.created_at),
                    "body": c.body,
                }
                for c in self.comments
            ],
            "is_pull_request": self.is_pull_request,
            "url": self.url,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "IssueRecord":
        record = cls(
            repo=str(raw["repo"]),
            number=int(raw["number"]),
            title=str(raw.get("title", "")),
            state=str(raw["state"]),
            created_at=parse_timestamp(raw["created_at"]),
            updated_at=parse_timestamp(raw["updated_at"]),
            closed_at=parse_timestamp(raw["closed_at"]) if raw.get("closed_at") else None,
            body=str(raw.get("body") or ""),
            labels=tuple(str(x) for x in raw.get("labels", [])),
            comments=tuple(
                Comment(
                    author_role=str(c.get("author_role", "")),
                    created_at=parse_timestamp(c["created_at"]),
                    body=str(c.get("body") or ""),
                )
                for c in raw.get("comments", [])
            ),
            is_pull_request=bool(raw.get("is_pull_request", False)),
            url=str(raw.get("url", "")),
        )
        record.validate()
        return record


@dataclass
class Corpus:
    records: list[IssueRecord]
    source: str = "dump"
    fetched_at: datetime | None = None
    _index: dict[IssueKey, IssueRecord] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        for record in self.records:
            if record.key in self._index:
                raise DuplicateRecordError(*record.key)
            self._index[record.key] = record

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, key: IssueKey) -> IssueRecord | None:
        return self._index.get(key)

    def keys(self) -> list[IssueKey]:
        return [r.key for r in self.records]


@dataclass(frozen=True)
class GoldLabel:
    repo: str
    number: int
    fault_related: bool | None = None
    symptom_leaf: str | None = None
    root_cause: str | None = None

    @property
    def key(self) -> IssueKey:
        return (self.repo, self.number)


def import_dump(path: str | Path) -> Corpus:
    """Read a line-delimited JSON dump into a Corpus.

    Every rejection reports the 1-based line number it came from.
    """
    records: list[IssueRecord] = []
    seen: set[IssueKey] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DumpFormatError(line_no, f"invalid JSON: {exc}") from exc
            try:
                record = IssueRecord.from_dict(raw)
            except (KeyError, ValueError, RecordInvariantError) as exc:
                raise DumpFormatError(line_no, str(exc)) from exc
            if record.key in seen:
                raise DumpFormatError(
                    line_no, f"duplicate record key {record.repo}#{record.number}"
                )
            seen.add(record.key)
            records.append(record)
    return Corpus(records=records, source="dump")


def export_dump(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in corpus:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def load_gold(path: str | Path) -> dict[IssueKey, GoldLabel]:
    """Read the gold-label CSV (repo, number, fault_related, symptom_leaf_id,
    root_cause_id; empty cells allowed)."""
    gold: dict[IssueKey, GoldLabel] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"repo", "number", "fault_related", "symptom_leaf_id", "root_cause_id"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise GoldFileError(
                f"gold file must have columns {sorted(required)}, got {reader.fieldnames}"
            )
        for row_no, row in enumerate(reader, start=2):
            repo = row["repo"].strip()
            try:
                number = int(row["number"])
            except ValueError as exc:
                raise GoldFileError(f"gold row {row_no}: bad issue number") from exc
            fault_raw = row["fault_related"].strip().lower()
            fault_related = None if fault_raw == "" else fault_raw in ("true", "1", "yes")
            symptom = row["symptom_leaf_id"].strip() or None
            root_cause = row["root_cause_id"].strip() or None
            if fault_related is None and symptom is None and root_cause is None:
                raise GoldFileError(f"gold row {row_no}: no populated label field")
            key = (repo, number)
            if key in gold:
                raise GoldFileError(f"gold row {row_no}: duplicate key {repo}#{number}")
            gold[key] = GoldLabel(
                repo=repo, number=number, fault_related=fault_related,
                symptom_leaf=symptom, root_cause=root_cause,
            )
    return gold


def sample_balanced(
    corpus: Corpus,
    gold: dict[IssueKey, GoldLabel],
    n_pos: int,
    n_neg: int,
    seed: int,
) -> Corpus:
    """Draw a balanced fault / non-fault subset, uniformly without replacement.

    Uses Python's Mersenne Twister seeded explicitly over key-sorted strata,
    so identical (corpus, gold, seed) inputs select identical records on any
    platform regardless of corpus ordering.
    """
    pos_keys = sorted(
        k for k in corpus.keys() if gold.get(k) and gold[k].fault_related is True
    )
    neg_keys = sorted(
        k for k in corpus.keys() if gold.get(k) and gold[k].fault_related is False
    )
    if len(pos_keys) < n_pos:
        raise SamplingError("fault", n_pos, len(pos_keys))
    if len(neg_keys) < n_neg:
        raise SamplingError("non-fault", n_neg, len(neg_keys))

    rng = random.Random(seed)
    chosen = set(rng.sample(pos_keys, n_pos))
    chosen.update(rng.sample(neg_keys, n_neg))
    records = [r for r in corpus if r.key in chosen]
    return Corpus(records=records, source=corpus.source, fetched_at=corpus.fetched_at)


def merge_corpora(parts: Iterable[Corpus], source: str) -> Corpus:
    records: list[IssueRecord] = []
    for part in parts:
        records.extend(part.records)
    return Corpus(records=records, source=source)
