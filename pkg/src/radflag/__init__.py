"""Multi-pass LLM pipelines that flag internal errors in radiology reports.

The package covers the full loop: corpus loading and stratified sampling,
one-to-three pass detection cascades over any chat-completions provider,
exact token-cost accounting, the statistical comparison engine, and a human
review service for adjudicating flags.
"""
from .corpus import (
    Corpus,
    CorpusError,
    Dataset,
    Modality,
    RadiologyReport,
    SamplingSpec,
    export_outcomes,
    load_corpus,
    load_outcomes,
    stratified_sample,
)
from .gateway import (
    CompletionResult,
    FixtureMiss,
    GatewayError,
    HttpProvider,
    MalformedOutput,
    ModelSpec,
    OutputViolation,
    Provider,
    ProviderConfig,
    ProviderError,
    ProtocolError,
    SchemaConstraint,
    SchemaViolation,
    ScriptedMockProvider,
    ScriptedReply,
    StochasticMockProvider,
    TransportFailure,
    validate_structured,
)
from .outcomes import (
    NA,
    NO_ERROR,
    CandidateError,
    Framework,
    FrameworkOutcome,
    PassRecord,
    StructuredReport,
)
from .pipeline import (
    ERROR_REPORT_SCHEMA,
    PREPROCESSING_SCHEMA,
    PipelineConfigError,
    assemble_prompt,
    default_models,
    load_prompt,
    run_batch,
    run_framework,
)
from .sections import extract_sections_reference, mask_dates_and_phi

__version__ = "0.1.0"

__all__ = [
    "CandidateError",
    "CompletionResult",
    "Corpus",
    "CorpusError",
    "Dataset",
    "ERROR_REPORT_SCHEMA",
    "FixtureMiss",
    "Framework",
    "FrameworkOutcome",
    "GatewayError",
    "HttpProvider",
    "MalformedOutput",
    "Modality",
    "ModelSpec",
    "NA",
    "NO_ERROR",
    "OutputViolation",
    "PREPROCESSING_SCHEMA",
    "PassRecord",
    "PipelineConfigError",
    "Provider",
    "ProviderConfig",
    "ProviderError",
    "ProtocolError",
    "RadiologyReport",
    "SamplingSpec",
    "SchemaConstraint",
    "SchemaViolation",
    "ScriptedMockProvider",
    "ScriptedReply",
    "StochasticMockProvider",
    "StructuredReport",
    "TransportFailure",
    "assemble_prompt",
    "default_models",
    "export_outcomes",
    "extract_sections_reference",
    "load_corpus",
    "load_outcomes",
    "load_prompt",
    "mask_dates_and_phi",
    "run_batch",
    "run_framework",
    "stratified_sample",
    "validate_structured",
]
