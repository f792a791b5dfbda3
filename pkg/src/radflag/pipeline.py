"""Framework orchestration: prompt assembly and one-to-three pass execution.

Three cascades share the same report-in, verdict-out shape:

* f1: one combined detect-and-verify pass over the raw report (advanced
  model).
* f2: a lightweight extraction pass, then the combined pass over the
  structured block (advanced model).
* f3: extraction, then a detection pass, then a verification pass that runs
  only when detection flagged something.

Every model call is strict-schema validated.  A malformed or off-schema
reply earns exactly one re-ask of the same pass; a second violation fails
the report, which is recorded as a failed outcome rather than raised.
"""
from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable

from .corpus import RadiologyReport
from .gateway import (
    PASS_COMBINED_RAW,
    PASS_COMBINED_STRUCTURED,
    PASS_DETECT,
    PASS_EXTRACT,
    PASS_VERIFY,
    CompletionResult,
    GatewayError,
    ModelSpec,
    OutputViolation,
    Provider,
    SchemaConstraint,
    SchemaViolation,
    validate_structured,
)
from .outcomes import (
    CandidateError,
    Framework,
    FrameworkOutcome,
    PassRecord,
    StructuredReport,
)

logger = logging.getLogger(__name__)

PREPROCESSING_SCHEMA = SchemaConstraint(
    name="preprocessing", required_keys=("findings", "impression")
)
ERROR_REPORT_SCHEMA = SchemaConstraint(
    name="error_report", required_keys=("error", "error_reason")
)

# Prompt resource names, also the filenames expected under --prompt-dir.
PROMPT_FILES = {
    "p1": "pass1.txt",
    "p2": "pass2.txt",
    "p3": "pass3.txt",
    "combined": "combined.txt",
}

LIGHTWEIGHT = "lightweight"
ADVANCED = "advanced"


class PipelineConfigError(ValueError):
    """Bad prompt kind, missing model role, or mismatched inputs."""


@lru_cache(maxsize=None)
def _packaged_prompt(filename: str) -> str:
    return (
        resources.files("radflag").joinpath("prompts", filename).read_text("utf-8")
    )


def load_prompt(kind: str, prompt_dir: str | Path | None = None) -> str:
    """Return the system prompt for a pass kind (p1, p2, p3, combined)."""
    try:
        filename = PROMPT_FILES[kind]
    except KeyError:
        raise PipelineConfigError(f"unknown prompt kind {kind!r}") from None
    if prompt_dir is not None:
        path = Path(prompt_dir) / filename
        if not path.is_file():
            raise PipelineConfigError(f"prompt override not found: {path}")
        return path.read_text("utf-8")
    return _packaged_prompt(filename)


def _report_json(structured: StructuredReport) -> str:
    return json.dumps(structured.to_json_dict(), ensure_ascii=False)


def assemble_prompt(
    kind: str,
    *,
    raw_text: str | None = None,
    structured: StructuredReport | None = None,
    candidate: CandidateError | None = None,
    prompt_dir: str | Path | None = None,
) -> tuple[str, str, SchemaConstraint]:
    """Build (system_prompt, user_payload, schema) for one pass.

    Inputs must match the kind: p1 and combined-over-raw take raw_text, p2
    and combined-over-structured take structured, p3 takes structured plus
    the candidate under review.
    """
    system = load_prompt(kind, prompt_dir)
    if kind == "p1":
        if raw_text is None or structured is not None or candidate is not None:
            raise PipelineConfigError("p1 takes raw_text only")
        return system, raw_text, PREPROCESSING_SCHEMA
    if kind == "p2":
        if structured is None or raw_text is not None or candidate is not None:
            raise PipelineConfigError("p2 takes structured only")
        return system, _report_json(structured), ERROR_REPORT_SCHEMA
    if kind == "p3":
        if structured is None or candidate is None or raw_text is not None:
            raise PipelineConfigError("p3 takes structured and candidate")
        payload = (
            "radiology report JSON:\n"
            f"{_report_json(structured)}\n\n"
            "candidate error JSON:\n"
            f"{json.dumps(candidate.to_json_dict(), ensure_ascii=False)}"
        )
        return system, payload, ERROR_REPORT_SCHEMA
    if kind == "combined":
        if candidate is not None or (raw_text is None) == (structured is None):
            raise PipelineConfigError(
                "combined takes exactly one of raw_text or structured"
            )
        payload = raw_text if raw_text is not None else _report_json(structured)
        return system, payload, ERROR_REPORT_SCHEMA
    raise PipelineConfigError(f"unknown prompt kind {kind!r}")


def _parse_reply(schema: SchemaConstraint, content: str) -> dict[str, str]:
    fields = validate_structured(content, schema)
    if schema.name == ERROR_REPORT_SCHEMA.name:
        # The sentinel pairing rule is part of the output contract, so an
        # inconsistent pair is a schema violation and earns the one re-ask.
        try:
            CandidateError.from_reply(fields)
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from exc
    return fields


def _ask(
    provider: Provider,
    model: ModelSpec,
    system: str,
    user: str,
    schema: SchemaConstraint,
    *,
    pass_id: str,
    report_id: str,
    record: Callable[[ModelSpec, int, int], None],
) -> dict[str, str]:
    """One validated call with a single re-ask on an output violation.

    ``record`` is always invoked with the total tokens the pass consumed,
    re-ask included, even when the pass ultimately fails: the money is gone
    whether or not a reply parsed.  Only a pass whose very first call never
    returned usage leaves nothing to record.
    """
    result: CompletionResult = provider.complete(
        model, system, user, schema, pass_id=pass_id, report_id=report_id
    )
    in_tok, out_tok = result.input_tokens, result.output_tokens
    try:
        fields = _parse_reply(schema, result.content)
    except OutputViolation as first:
        logger.warning(
            "re-asking %s for report %s after invalid output: %s",
            pass_id,
            report_id,
            first,
        )
        try:
            retry = provider.complete(
                model, system, user, schema, pass_id=pass_id, report_id=report_id
            )
        except GatewayError:
            record(model, in_tok, out_tok)
            raise
        in_tok += retry.input_tokens
        out_tok += retry.output_tokens
        try:
            fields = _parse_reply(schema, retry.content)
        except OutputViolation:
            record(model, in_tok, out_tok)
            raise
    record(model, in_tok, out_tok)
    return fields


def default_models(
    lightweight: str = "gpt-4.1-nano", advanced: str = "o3"
) -> dict[str, ModelSpec]:
    return {
        LIGHTWEIGHT: ModelSpec(model_name=lightweight, role=LIGHTWEIGHT),
        ADVANCED: ModelSpec(model_name=advanced, role=ADVANCED),
    }


def _require_role(models: Mapping[str, ModelSpec], role: str) -> ModelSpec:
    try:
        return models[role]
    except KeyError:
        raise PipelineConfigError(f"models mapping is missing the {role!r} role")


def run_framework(
    framework: Framework | str,
    report: RadiologyReport,
    provider: Provider,
    models: Mapping[str, ModelSpec],
    prompt_dir: str | Path | None = None,
) -> FrameworkOutcome:
    """Run one framework over one report; failures become failed outcomes."""
    framework = Framework(framework)
    if framework is Framework.F1:
        _require_role(models, ADVANCED)
    else:
        _require_role(models, LIGHTWEIGHT)
        _require_role(models, ADVANCED)
        if framework is Framework.F3:
            load_prompt("p2", prompt_dir)  # fail fast on a bad override dir
            load_prompt("p3", prompt_dir)

    passes: list[PassRecord] = []
    structured: StructuredReport | None = None

    def record(model: ModelSpec, in_tok: int, out_tok: int) -> None:
        passes.append(
            PassRecord(
                pass_index=len(passes) + 1,
                model_name=model.model_name,
                input_tokens=in_tok,
                output_tokens=out_tok,
            )
        )

    def failed(exc: GatewayError) -> FrameworkOutcome:
        logger.warning(
            "framework %s failed on report %s: %s", framework.value, report.report_id, exc
        )
        return FrameworkOutcome(
            report_id=report.report_id,
            framework=framework,
            modality=report.modality.value,
            structured=structured,
            final=None,
            passes=tuple(passes),
            failed=True,
            failure=f"{type(exc).__name__}: {exc}",
        )

    def done(final: CandidateError) -> FrameworkOutcome:
        return FrameworkOutcome(
            report_id=report.report_id,
            framework=framework,
            modality=report.modality.value,
            structured=structured,
            final=final,
            passes=tuple(passes),
        )

    try:
        if framework is Framework.F1:
            model = models[ADVANCED]
            system, user, schema = assemble_prompt(
                "combined", raw_text=report.raw_text, prompt_dir=prompt_dir
            )
            fields = _ask(
                provider,
                model,
                system,
                user,
                schema,
                pass_id=PASS_COMBINED_RAW,
                report_id=report.report_id,
                record=record,
            )
            return done(CandidateError.from_reply(fields))

        extractor = models[LIGHTWEIGHT]
        system, user, schema = assemble_prompt(
            "p1", raw_text=report.raw_text, prompt_dir=prompt_dir
        )
        fields = _ask(
            provider,
            extractor,
            system,
            user,
            schema,
            pass_id=PASS_EXTRACT,
            report_id=report.report_id,
            record=record,
        )
        structured = StructuredReport(
            findings=fields["findings"], impression=fields["impression"]
        )

        detector = models[ADVANCED]
        if framework is Framework.F2:
            system, user, schema = assemble_prompt(
                "combined", structured=structured, prompt_dir=prompt_dir
            )
            fields = _ask(
                provider,
                detector,
                system,
                user,
                schema,
                pass_id=PASS_COMBINED_STRUCTURED,
                report_id=report.report_id,
                record=record,
            )
            return done(CandidateError.from_reply(fields))

        system, user, schema = assemble_prompt(
            "p2", structured=structured, prompt_dir=prompt_dir
        )
        fields = _ask(
            provider,
            detector,
            system,
            user,
            schema,
            pass_id=PASS_DETECT,
            report_id=report.report_id,
            record=record,
        )
        candidate = CandidateError.from_reply(fields)
        if not candidate.is_flag:
            return done(candidate)  # nothing to verify, two passes total

        system, user, schema = assemble_prompt(
            "p3", structured=structured, candidate=candidate, prompt_dir=prompt_dir
        )
        fields = _ask(
            provider,
            detector,
            system,
            user,
            schema,
            pass_id=PASS_VERIFY,
            report_id=report.report_id,
            record=record,
        )
        return done(CandidateError.from_reply(fields))
    except GatewayError as exc:
        return failed(exc)


def run_batch(
    framework: Framework | str,
    reports: Iterable[RadiologyReport],
    provider: Provider,
    models: Mapping[str, ModelSpec],
    *,
    parallelism: int = 4,
    prompt_dir: str | Path | None = None,
    progress: Callable[[FrameworkOutcome], None] | None = None,
) -> list[FrameworkOutcome]:
    """Run one framework over many reports, preserving input order.

    Per-report failures are returned as failed outcomes, never raised, so a
    single bad report cannot sink a batch.
    """
    framework = Framework(framework)
    reports = list(reports)
    if parallelism < 1:
        raise PipelineConfigError("parallelism must be at least 1")

    def one(report: RadiologyReport) -> FrameworkOutcome:
        outcome = run_framework(framework, report, provider, models, prompt_dir)
        if progress is not None:
            progress(outcome)
        return outcome

    if parallelism == 1 or len(reports) <= 1:
        return [one(report) for report in reports]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, reports))
