"""Deterministic rule-based section extractor for offline tests.

Mirrors the extraction pass's task list with fixed rules: keep the Findings
body and the Impression/Conclusion/Opinion body, fold addenda into one of
them, drop everything else, and mask dates and protected identifiers.  The
live pipelines use the lightweight LLM extractor instead; this exists so the
rest of the system can be exercised without any model at all.
"""
from __future__ import annotations

import re

from .outcomes import NA, StructuredReport

_FINDINGS_LABELS = frozenset({"finding", "findings"})
_IMPRESSION_LABELS = frozenset(
    {"impression", "impressions", "conclusion", "conclusions", "opinion"}
)
_ADDENDUM_LABELS = frozenset({"addendum", "addenda", "correction", "corrections"})

# Headers that are recognized (so they close the current section) but whose
# bodies are dropped.  Unknown "label:" lines are NOT treated as headers;
# radiology prose is full of mid-sentence colons.
_DROP_LABELS = frozenset(
    {
        "accession",
        "accession number",
        "attending",
        "billing",
        "clinical history",
        "clinical indication",
        "clinical information",
        "comparison",
        "comparisons",
        "date",
        "dictated by",
        "dob",
        "electronically signed",
        "exam",
        "examination",
        "history",
        "indication",
        "medical record number",
        "mrn",
        "patient",
        "prior studies",
        "procedure",
        "reason",
        "reason for exam",
        "reason for examination",
        "reported by",
        "signature",
        "signed",
        "signed by",
        "study",
        "technique",
        "time",
    }
)

_HEADER_RE = re.compile(r"^\s*([A-Za-z][A-Za-z /&'-]{0,39}?)\s*:\s*(.*)$")

# MIMIC-style de-identification placeholders: [**2187-8-10**], [**Last Name**].
_DEID_RE = re.compile(r"\[\*\*(.*?)\*\*\]")
_DEID_DATEISH_RE = re.compile(r"^[\d\s/.-]*\d[\d\s/.-]*$")

_MONTH = (
    r"(?:Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|Jun(?:e)?|"
    r"Jul(?:y)?|Aug(?:ust)?|Sep(?:t|tember)?|Oct(?:ober)?|Nov(?:ember)?|"
    r"Dec(?:ember)?)"
)
_DATE_RES = (
    # 2021-03-05 / 2021/3/5
    re.compile(r"\b\d{4}[-/]\d{1,2}[-/]\d{1,2}\b"),
    # 10/20/2021, 3-5-21 (three components only; bare m/d is too ambiguous
    # against ratios and velocity pairs)
    re.compile(r"\b\d{1,2}[-/]\d{1,2}[-/]\d{2,4}\b"),
    # October 5th / Oct. 5, 2021
    re.compile(
        rf"\b{_MONTH}\.?\s+\d{{1,2}}(?:st|nd|rd|th)?(?:,?\s+\d{{4}})?\b",
        re.IGNORECASE,
    ),
    # 5th of October / 5 October 2021
    re.compile(
        rf"\b\d{{1,2}}(?:st|nd|rd|th)?(?:\s+of)?\s+{_MONTH}(?:,?\s+\d{{4}})?\b",
        re.IGNORECASE,
    ),
)


def mask_dates_and_phi(text: str) -> str:
    """Replace de-identification placeholders and explicit calendar dates.

    Date-shaped placeholders become "[DATE]", all other placeholders
    "[PHI]"; explicit dates in open text become "[DATE]".
    """

    def _replace_deid(match: re.Match) -> str:
        inner = match.group(1)
        return "[DATE]" if _DEID_DATEISH_RE.match(inner) else "[PHI]"

    text = _DEID_RE.sub(_replace_deid, text)
    for pattern in _DATE_RES:
        text = pattern.sub("[DATE]", text)
    return text


def _classify_header(label: str) -> str | None:
    label = label.strip().lower()
    if label in _FINDINGS_LABELS:
        return "findings"
    if label in _IMPRESSION_LABELS:
        return "impression"
    if label in _ADDENDUM_LABELS:
        return "addendum"
    if label in _DROP_LABELS:
        return "drop"
    return None


def _addendum_target(text: str) -> str:
    lowered = text.lower()
    if "finding" in lowered:
        return "findings"
    if "impression" in lowered or "conclusion" in lowered or "diagnos" in lowered:
        return "impression"
    return "impression"  # ambiguous amendments go to Impression


def _join(lines: list[str]) -> str:
    return re.sub(r"\s+", " ", " ".join(lines)).strip()


def extract_sections_reference(raw_text: str) -> StructuredReport:
    """Extract Findings/Impression from a raw report, total and deterministic.

    Text before the first recognized header is dropped along with all
    non-kept sections.  Each addendum block is appended to the section it
    amends (Impression when ambiguous), marked "Addendum".  A missing
    section yields the literal "N/A".
    """
    buckets: dict[str, list[str]] = {"findings": [], "impression": []}
    addenda: list[list[str]] = []
    current: str | None = None  # None = dropping

    for line in raw_text.splitlines():
        header = _HEADER_RE.match(line)
        section = _classify_header(header.group(1)) if header else None
        if section is not None:
            inline = header.group(2).strip()
            if section == "drop":
                current = None
                continue
            if section == "addendum":
                addenda.append([])
                current = "addendum"
            else:
                current = section
            if inline:
                (addenda[-1] if current == "addendum" else buckets[current]).append(
                    inline
                )
            continue
        if current is None:
            continue
        stripped = line.strip()
        if stripped:
            (addenda[-1] if current == "addendum" else buckets[current]).append(
                stripped
            )

    findings = _join(buckets["findings"])
    impression = _join(buckets["impression"])
    for block in addenda:
        text = _join(block)
        if not text:
            continue
        marked = f"Addendum: {text}"
        if _addendum_target(text) == "findings":
            findings = f"{findings} {marked}".strip()
        else:
            impression = f"{impression} {marked}".strip()

    findings = mask_dates_and_phi(findings) if findings else NA
    impression = mask_dates_and_phi(impression) if impression else NA
    return StructuredReport(findings=findings, impression=impression)
