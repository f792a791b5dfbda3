"""Report corpora: loading, stratified sampling, and outcome serialization.

Corpus files are CSV (columns ``report_id,dataset,modality,text``, RFC-4180
quoting, UTF-8) or JSONL with the same keys.  Outcomes are written as JSONL,
one object per report, and round-trip losslessly through
:func:`export_outcomes` / :func:`load_outcomes`.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .outcomes import (
    CandidateError,
    Framework,
    FrameworkOutcome,
    PassRecord,
    StructuredReport,
)

REQUIRED_COLUMNS = ("report_id", "dataset", "modality", "text")

_MAX_SEED = 2**64 - 1


class CorpusError(ValueError):
    """Raised for malformed corpus files or unsatisfiable sampling specs."""


class Dataset(str, Enum):
    MIMIC3 = "mimic3"
    CHEXPERT = "chexpert"
    OPENI = "openi"
    CUSTOM = "custom"


class Modality(str, Enum):
    XRAY = "xray"
    ULTRASOUND = "ultrasound"
    CT = "ct"
    MR = "mr"
    OTHER = "other"


def parse_modality(value: str) -> Modality:
    """Map a free-form modality string to the enum; unknown values -> OTHER."""
    try:
        return Modality(value.strip().lower())
    except ValueError:
        return Modality.OTHER


def parse_dataset(value: str) -> Dataset:
    """Map a free-form dataset string to the enum; unknown values -> CUSTOM."""
    try:
        return Dataset(value.strip().lower())
    except ValueError:
        return Dataset.CUSTOM


@dataclass(frozen=True)
class RadiologyReport:
    report_id: str
    dataset: Dataset
    modality: Modality
    raw_text: str

    def __post_init__(self) -> None:
        if not self.report_id:
            raise CorpusError("report_id must be non-empty")
        if not self.raw_text:
            raise CorpusError(f"report {self.report_id}: raw_text must be non-empty")


@dataclass(frozen=True)
class Corpus:
    """An ordered, immutable collection of reports with unique ids."""

    name: str
    reports: tuple[RadiologyReport, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for r in self.reports:
            if r.report_id in seen:
                raise CorpusError(f"duplicate report_id: {r.report_id}")
            seen.add(r.report_id)

    def __len__(self) -> int:
        return len(self.reports)

    def __iter__(self) -> Iterator[RadiologyReport]:
        return iter(self.reports)

    def stratum_sizes(self) -> dict[Modality, int]:
        sizes: dict[Modality, int] = {}
        for r in self.reports:
            sizes[r.modality] = sizes.get(r.modality, 0) + 1
        return sizes


@dataclass(frozen=True)
class SamplingSpec:
    """Requested per-modality sample counts plus the sampling seed."""

    per_stratum: Mapping[Modality, int]
    seed: int

    def __post_init__(self) -> None:
        for modality, count in self.per_stratum.items():
            if count < 0:
                raise CorpusError(f"requested count for {modality.value} is negative")
        if not 0 <= self.seed <= _MAX_SEED:
            raise CorpusError("seed must fit in an unsigned 64-bit integer")


def load_corpus(path: str | Path, format: str = "csv") -> Corpus:
    """Load a corpus file, preserving input order.

    Duplicate report ids and missing columns are rejected with the offending
    id/column named in the error.
    """
    path = Path(path)
    if format == "csv":
        rows = _read_csv_rows(path)
    elif format == "jsonl":
        rows = _read_jsonl_rows(path)
    else:
        raise CorpusError(f"unknown corpus format: {format}")

    reports = tuple(
        RadiologyReport(
            report_id=row["report_id"],
            dataset=parse_dataset(row["dataset"]),
            modality=parse_modality(row["modality"]),
            raw_text=row["text"],
        )
        for row in rows
    )
    return Corpus(name=path.stem, reports=reports)


def _read_csv_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in REQUIRED_COLUMNS:
            if column not in header:
                raise CorpusError(f"missing required column: {column}")
        return [
            {col: (row.get(col) or "") for col in REQUIRED_COLUMNS} for row in reader
        ]


def _read_jsonl_rows(path: Path) -> list[dict[str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            for column in REQUIRED_COLUMNS:
                if column not in obj:
                    raise CorpusError(
                        f"line {lineno}: missing required column: {column}"
                    )
            rows.append({col: str(obj[col]) for col in REQUIRED_COLUMNS})
    return rows


def _priority(seed: int, report_id: str) -> bytes:
    # Seeded random priority: SHA-256 over the seed and the report id.  This
    # pins the sampling procedure to something byte-stable across platforms
    # and library versions, unlike library shuffles.
    digest = hashlib.sha256()
    digest.update(seed.to_bytes(8, "big"))
    digest.update(report_id.encode("utf-8"))
    return digest.digest()


def stratified_sample(corpus: Corpus, spec: SamplingSpec) -> Corpus:
    """Sample the requested count per modality, without replacement.

    Within each stratum, reports are ranked by a seeded SHA-256 priority and
    the top ``count`` are taken, so a fixed seed replicates exactly on any
    platform.  The sampled corpus preserves the input corpus order.
    """
    selected: set[str] = set()
    for modality, count in spec.per_stratum.items():
        members = [r for r in corpus.reports if r.modality is modality]
        if len(members) < count:
            raise CorpusError(
                f"stratum {modality.value} has {len(members)} reports, "
                f"{count} requested (short by {count - len(members)})"
            )
        ranked = sorted(members, key=lambda r: _priority(spec.seed, r.report_id))
        selected.update(r.report_id for r in ranked[:count])

    sampled = tuple(r for r in corpus.reports if r.report_id in selected)
    return Corpus(name=f"{corpus.name}-sample", reports=sampled)


def _outcome_to_json_dict(outcome: FrameworkOutcome) -> dict:
    line: dict = {
        "report_id": outcome.report_id,
        "framework": outcome.framework.value,
        "modality": outcome.modality,
        "findings": outcome.structured.findings if outcome.structured else None,
        "impression": outcome.structured.impression if outcome.structured else None,
        "error": outcome.final.error if outcome.final else None,
        "error_reason": outcome.final.error_reason if outcome.final else None,
        "passes": [
            {
                "pass": p.pass_index,
                "model": p.model_name,
                "input_tokens": p.input_tokens,
                "output_tokens": p.output_tokens,
            }
            for p in outcome.passes
        ],
    }
    if outcome.failed:
        line["failed"] = True
        line["failure"] = outcome.failure
    return line


def _outcome_from_json_dict(obj: dict) -> FrameworkOutcome:
    structured = None
    if obj.get("findings") is not None or obj.get("impression") is not None:
        structured = StructuredReport(obj["findings"], obj["impression"])
    final = None
    if obj.get("error") is not None:
        final = CandidateError(obj["error"], obj["error_reason"])
    return FrameworkOutcome(
        report_id=obj["report_id"],
        framework=Framework(obj["framework"]),
        modality=obj.get("modality", Modality.OTHER.value),
        structured=structured,
        final=final,
        passes=tuple(
            PassRecord(
                pass_index=p["pass"],
                model_name=p["model"],
                input_tokens=p["input_tokens"],
                output_tokens=p["output_tokens"],
            )
            for p in obj["passes"]
        ),
        failed=bool(obj.get("failed", False)),
        failure=obj.get("failure"),
    )


def export_outcomes(
    outcomes: Sequence[FrameworkOutcome], path: str | Path
) -> None:
    """Write outcomes as JSONL, one object per report, in input order."""
    if not outcomes:
        raise CorpusError("refusing to export an empty outcome collection")
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for outcome in outcomes:
            fh.write(json.dumps(_outcome_to_json_dict(outcome)) + "\n")


def load_outcomes(path: str | Path) -> list[FrameworkOutcome]:
    """Reload an outcome file written by :func:`export_outcomes`."""
    outcomes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                outcomes.append(_outcome_from_json_dict(json.loads(line)))
    return outcomes
