"""Record types produced by the error-detection pipelines.

These are shared by the pipeline (which builds them), the corpus module
(which serializes them), the ledger (token tallies), and the stats engine.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

NO_ERROR = "no error"
NA = "N/A"


class Framework(str, Enum):
    """The three pipeline variants, ordered by pass count."""

    F1 = "f1"
    F2 = "f2"
    F3 = "f3"


@dataclass(frozen=True)
class StructuredReport:
    """Findings/Impression block extracted from a raw report.

    Either field may be the literal "N/A" when the section is absent.
    """

    findings: str
    impression: str

    def to_json_dict(self) -> dict[str, str]:
        return {"findings": self.findings, "impression": self.impression}


@dataclass(frozen=True)
class CandidateError:
    """An error/error_reason pair emitted (or cleared) by a detection pass.

    Invariant: error == "no error" iff error_reason == "N/A".
    """

    error: str
    error_reason: str

    def __post_init__(self) -> None:
        if (self.error == NO_ERROR) != (self.error_reason == NA):
            raise ValueError(
                f"inconsistent candidate: error={self.error!r} "
                f"error_reason={self.error_reason!r}"
            )

    @property
    def is_flag(self) -> bool:
        return self.error != NO_ERROR

    @classmethod
    def clean(cls) -> "CandidateError":
        return cls(NO_ERROR, NA)

    @classmethod
    def from_reply(cls, fields: dict[str, str]) -> "CandidateError":
        """Build from a validated error_report reply, normalizing the sentinel.

        A reply whose error text is the sentinel gets its reason forced to
        "N/A" (models occasionally elaborate); a flagged error whose reason
        is "N/A" is rejected as inconsistent.
        """
        error = fields["error"].strip()
        reason = fields["error_reason"].strip()
        if error == NO_ERROR:
            return cls(NO_ERROR, NA)
        return cls(error, reason)

    def to_json_dict(self) -> dict[str, str]:
        return {"error": self.error, "error_reason": self.error_reason}


@dataclass(frozen=True)
class PassRecord:
    """Token usage for one model call within a pipeline run."""

    pass_index: int
    model_name: str
    input_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        if not 1 <= self.pass_index <= 3:
            raise ValueError(f"pass_index out of range: {self.pass_index}")
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class FrameworkOutcome:
    """Per-report pipeline trace: what ran, what it concluded, what it cost.

    ``structured`` is None for f1 (no extraction pass) and for runs that
    failed before extraction.  A failed outcome carries ``final=None`` and a
    failure reason; it contributes to neither TP nor FP downstream.
    """

    report_id: str
    framework: Framework
    modality: str
    structured: StructuredReport | None
    final: CandidateError | None
    passes: tuple[PassRecord, ...]
    failed: bool = False
    failure: str | None = None

    def __post_init__(self) -> None:
        if self.failed == (self.final is not None):
            raise ValueError("final must be present exactly when the run succeeded")
        indexes = [p.pass_index for p in self.passes]
        if len(set(indexes)) != len(indexes):
            raise ValueError(f"duplicate pass_index in outcome for {self.report_id}")

    @property
    def flagged(self) -> bool:
        return self.final is not None and self.final.is_flag
