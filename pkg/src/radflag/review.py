"""Human review service: run pipelines, adjudicate flags, report live PPV.

Each session lives in its own directory: a copy of the corpus, an outcomes
JSONL written as frameworks finish, and an append-only verdict log.  The
log is the single source of truth; every tally the service reports can be
reconstructed from the files alone, so a crash-restart loses nothing that
was written.

Two-stage review is modeled as supersession: a second_reader verdict
overrides the first_reader verdict for scoring.  Provider credentials pass
through to the gateway for the duration of the run and are never written
to session state or logs.
"""
from __future__ import annotations

import json
import logging
import secrets
import shutil
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Mapping

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .corpus import (
    Corpus,
    CorpusError,
    load_corpus,
    load_outcomes,
    _outcome_to_json_dict,
)
from .gateway import (
    GatewayError,
    HttpProvider,
    ModelSpec,
    Provider,
    ProviderConfig,
    ScriptedMockProvider,
    StochasticMockProvider,
)
from .ledger import (
    DEFAULT_PRICES,
    LedgerError,
    PriceTable,
    TokenTally,
    model_cost,
    usd,
)
from .outcomes import Framework, FrameworkOutcome
from .pipeline import ADVANCED, LIGHTWEIGHT, run_batch
from .stats import ComparisonReport, StatsError, evaluate_run

logger = logging.getLogger(__name__)

STAGE_FIRST = "first_reader"
STAGE_SECOND = "second_reader"
STAGES = (STAGE_FIRST, STAGE_SECOND)
DECISION_TP = "tp"
DECISION_FP = "fp"

STATUS_RUNNING = "running"
STATUS_COMPLETE = "complete"
STATUS_FAILED = "failed"

ITEM_PENDING = "pending"
ITEM_ADJUDICATED = "adjudicated"


@dataclass(frozen=True)
class Verdict:
    report_id: str
    framework: Framework
    decision: str  # "tp" | "fp"
    reviewer_id: str
    stage: str  # "first_reader" | "second_reader"
    timestamp: str

    def __post_init__(self) -> None:
        if self.decision not in (DECISION_TP, DECISION_FP):
            raise ValueError(f"decision must be tp or fp: {self.decision!r}")
        if self.stage not in STAGES:
            raise ValueError(f"unknown review stage: {self.stage!r}")

    def to_json_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "framework": self.framework.value,
            "decision": self.decision,
            "reviewer_id": self.reviewer_id,
            "stage": self.stage,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Verdict":
        return cls(
            report_id=obj["report_id"],
            framework=Framework(obj["framework"]),
            decision=obj["decision"],
            reviewer_id=obj["reviewer_id"],
            stage=obj["stage"],
            timestamp=obj["timestamp"],
        )


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class Session:
    """One review session: corpus copy, outcome log, verdict log, live state."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.lock = threading.Lock()
        self.meta: dict = {}
        self.outcomes: list[FrameworkOutcome] = []
        self.verdicts: list[Verdict] = []
        self.report_text: dict[str, str] = {}

    # -- persistence ------------------------------------------------------

    @property
    def session_id(self) -> str:
        return self.meta["session_id"]

    def _write_meta(self) -> None:
        tmp = self.directory / "session.json.tmp"
        tmp.write_text(json.dumps(self.meta, indent=2), encoding="utf-8")
        tmp.replace(self.directory / "session.json")

    def append_outcomes(self, outcomes: Iterable[FrameworkOutcome]) -> None:
        outcomes = list(outcomes)
        with open(self.directory / "outcomes.jsonl", "a", encoding="utf-8") as fh:
            for outcome in outcomes:
                fh.write(json.dumps(_outcome_to_json_dict(outcome)) + "\n")
        with self.lock:
            self.outcomes.extend(outcomes)

    def append_verdict(self, verdict: Verdict) -> None:
        # caller holds the lock; writes are serialized per session
        with open(self.directory / "verdicts.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(verdict.to_json_dict()) + "\n")
        self.verdicts.append(verdict)

    def set_status(self, status: str, failure: str | None = None) -> None:
        with self.lock:
            self.meta["status"] = status
            self.meta["failure"] = failure
            self._write_meta()

    @classmethod
    def recover(cls, directory: Path) -> "Session":
        """Rebuild a session purely from its files after a restart."""
        session = cls(directory)
        session.meta = json.loads(
            (directory / "session.json").read_text(encoding="utf-8")
        )
        outcomes_path = directory / "outcomes.jsonl"
        if outcomes_path.exists():
            session.outcomes = load_outcomes(outcomes_path)
        verdicts_path = directory / "verdicts.jsonl"
        if verdicts_path.exists():
            with open(verdicts_path, encoding="utf-8") as fh:
                session.verdicts = [
                    Verdict.from_json_dict(json.loads(line))
                    for line in fh
                    if line.strip()
                ]
        corpus_path = directory / "corpus.csv"
        if corpus_path.exists():
            corpus = load_corpus(corpus_path)
            session.report_text = {r.report_id: r.raw_text for r in corpus}
        if session.meta.get("status") == STATUS_RUNNING:
            # the pipeline thread did not survive the restart
            session.meta["status"] = STATUS_FAILED
            session.meta["failure"] = "interrupted: service restarted mid-run"
            session._write_meta()
        return session

    # -- derived state ----------------------------------------------------

    def superseding_verdicts(self) -> dict[tuple[str, str], Verdict]:
        """Latest-effective verdict per (report, framework): second overrides first."""
        chosen: dict[tuple[str, str], Verdict] = {}
        for verdict in self.verdicts:
            key = (verdict.report_id, verdict.framework.value)
            held = chosen.get(key)
            if held is None or (
                held.stage == STAGE_FIRST and verdict.stage == STAGE_SECOND
            ):
                chosen[key] = verdict
        return chosen

    def stage_taken(self, report_id: str, framework: str, stage: str) -> bool:
        return any(
            v.report_id == report_id
            and v.framework.value == framework
            and v.stage == stage
            for v in self.verdicts
        )

    def flagged_outcomes(self) -> list[FrameworkOutcome]:
        order = {rid: i for i, rid in enumerate(self.meta.get("report_order", []))}
        flagged = [o for o in self.outcomes if o.flagged]
        flagged.sort(
            key=lambda o: (order.get(o.report_id, len(order)), o.framework.value)
        )
        return flagged

    def item_payloads(self, status_filter: str | None = None) -> list[dict]:
        effective = self.superseding_verdicts()
        items = []
        for outcome in self.flagged_outcomes():
            key = (outcome.report_id, outcome.framework.value)
            status = ITEM_ADJUDICATED if key in effective else ITEM_PENDING
            if status_filter is not None and status != status_filter:
                continue
            verdict = effective.get(key)
            items.append(
                {
                    "report_id": outcome.report_id,
                    "framework": outcome.framework.value,
                    "modality": outcome.modality,
                    "findings": outcome.structured.findings
                    if outcome.structured
                    else None,
                    "impression": outcome.structured.impression
                    if outcome.structured
                    else None,
                    "report_text": self.report_text.get(outcome.report_id),
                    "error": outcome.final.error if outcome.final else None,
                    "error_reason": outcome.final.error_reason
                    if outcome.final
                    else None,
                    "status": status,
                    "decision": verdict.decision if verdict else None,
                    "stage": verdict.stage if verdict else None,
                }
            )
        return items

    def tallies(self) -> dict[str, dict]:
        effective = self.superseding_verdicts()
        per_framework: dict[str, dict] = {}
        for fw_value in self.meta.get("frameworks", []):
            flagged = [
                o
                for o in self.outcomes
                if o.framework.value == fw_value and o.flagged
            ]
            tp = fp = 0
            for outcome in flagged:
                verdict = effective.get((outcome.report_id, fw_value))
                if verdict is None:
                    continue
                if verdict.decision == DECISION_TP:
                    tp += 1
                else:
                    fp += 1
            adjudicated = tp + fp
            per_framework[fw_value] = {
                "flagged": len(flagged),
                "tp": tp,
                "fp": fp,
                "pending": len(flagged) - adjudicated,
                "ppv": (tp / adjudicated) if adjudicated else None,
            }
        return per_framework

    def adjudication_map(self) -> dict[tuple[str, str], bool]:
        return {
            key: verdict.decision == DECISION_TP
            for key, verdict in self.superseding_verdicts().items()
        }

    def comparison(self) -> ComparisonReport | None:
        if not self.outcomes:
            return None
        try:
            return evaluate_run(
                self.outcomes,
                self.adjudication_map(),
                replicates=0,
                on_unadjudicated="exclude",
            )
        except StatsError:
            return None  # mid-run coverage mismatch or nothing evaluable yet

    def cost(self) -> dict | None:
        prices = self._price_table()
        tally = TokenTally.from_outcomes(self.outcomes)
        fee = Decimal(str(self.meta.get("review_fee", "0")))
        try:
            per_framework = {}
            for fw_value in self.meta.get("frameworks", []):
                sub = tally.for_framework(fw_value)
                flags = sum(
                    1
                    for o in self.outcomes
                    if o.framework.value == fw_value and o.flagged
                )
                bill = model_cost(sub, prices)
                per_framework[fw_value] = {
                    "model_cost": usd(bill),
                    "flagged": flags,
                    "human_cost": usd(flags * fee, 2),
                    "total_cost": usd(bill + flags * fee),
                }
            total_bill = model_cost(tally, prices)
            total_flags = sum(1 for o in self.outcomes if o.flagged)
            return {
                "review_fee": str(fee),
                "per_framework": per_framework,
                "model_cost": usd(total_bill),
                "human_cost": usd(total_flags * fee, 2),
                "total_cost": usd(total_bill + total_flags * fee),
            }
        except LedgerError as exc:
            return {"error": str(exc)}

    def _price_table(self) -> PriceTable:
        overrides = self.meta.get("prices") or {}
        merged = {
            name: (entry["input_per_1m"], entry["output_per_1m"])
            for name, entry in DEFAULT_PRICES.to_json_dict().items()
        }
        for name, entry in overrides.items():
            merged[name] = (entry["input_per_1m"], entry["output_per_1m"])
        return PriceTable.from_pairs(merged)


class SessionStore:
    """All sessions under one data directory, recovered at startup."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        for entry in sorted(self.data_dir.iterdir()):
            if entry.is_dir() and (entry / "session.json").exists():
                try:
                    session = Session.recover(entry)
                except (OSError, ValueError, KeyError) as exc:
                    logger.warning("could not recover session %s: %s", entry, exc)
                    continue
                self._sessions[session.session_id] = session

    def create(self, meta: dict) -> Session:
        with self._lock:
            session_id = secrets.token_hex(8)
            directory = self.data_dir / session_id
            directory.mkdir()
            session = Session(directory)
            session.meta = {"session_id": session_id, **meta}
            session._write_meta()
            self._sessions[session_id] = session
            return session

    def get(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None

    def all(self) -> list[Session]:
        return sorted(self._sessions.values(), key=lambda s: s.meta["created_at"])


# ---------------------------------------------------------------------------
# Request bodies


class ProviderSpec(BaseModel):
    kind: str  # "scripted" | "stochastic" | "http"
    fixtures_path: str | None = None
    sensitivity: float = 0.9
    specificity: float = 0.9
    seed: int = 0
    error_labels: dict[str, bool] = Field(default_factory=dict)
    base_url: str | None = None
    api_key_ref: str = ""
    api_key: str | None = None  # transient; never persisted
    timeout: float = 120.0
    max_retries: int = 3


class StartSessionRequest(BaseModel):
    name: str = "session"
    corpus_path: str | None = None
    corpus_csv: str | None = None
    frameworks: list[str] = Field(default_factory=lambda: ["f1", "f2", "f3"])
    provider: ProviderSpec
    models: dict[str, str] = Field(
        default_factory=lambda: {LIGHTWEIGHT: "gpt-4.1-nano", ADVANCED: "o3"}
    )
    parallelism: int = 4
    prompt_dir: str | None = None
    review_fee: str = "3.00"
    prices: dict[str, dict[str, str]] | None = None


class VerdictRequest(BaseModel):
    report_id: str
    framework: str
    decision: str  # "tp" | "fp"
    reviewer_id: str = "reviewer"
    stage: str = STAGE_FIRST


def _build_provider(spec: ProviderSpec) -> Provider:
    if spec.kind == "scripted":
        if not spec.fixtures_path:
            raise ValueError("scripted provider needs fixtures_path")
        path = Path(spec.fixtures_path)
        if not path.is_file():
            raise ValueError(f"fixtures file not found: {path}")
        return ScriptedMockProvider.from_jsonl(path)
    if spec.kind == "stochastic":
        return StochasticMockProvider(
            sensitivity=spec.sensitivity,
            specificity=spec.specificity,
            error_labels=spec.error_labels,
            seed=spec.seed,
        )
    if spec.kind == "http":
        if not spec.base_url:
            raise ValueError("http provider needs base_url")
        config = ProviderConfig(
            base_url=spec.base_url,
            api_key_ref=spec.api_key_ref,
            timeout=spec.timeout,
            max_retries=spec.max_retries,
        )
        return HttpProvider(config, api_key=spec.api_key)
    raise ValueError(f"unknown provider kind: {spec.kind!r}")


def _run_session(
    session: Session,
    corpus: Corpus,
    frameworks: list[Framework],
    provider: Provider,
    models: Mapping[str, ModelSpec],
    parallelism: int,
    prompt_dir: str | None,
) -> None:
    try:
        for framework in frameworks:
            outcomes = run_batch(
                framework,
                corpus.reports,
                provider,
                models,
                parallelism=parallelism,
                prompt_dir=prompt_dir,
            )
            session.append_outcomes(outcomes)
        failures = [o for o in session.outcomes if o.failed]
        if session.outcomes and len(failures) == len(session.outcomes):
            session.set_status(
                STATUS_FAILED,
                f"all {len(failures)} runs failed; first: {failures[0].failure}",
            )
        else:
            session.set_status(STATUS_COMPLETE)
    except Exception as exc:  # defensive: a crashed run must be visible
        logger.exception("session %s pipeline crashed", session.session_id)
        session.set_status(STATUS_FAILED, f"{type(exc).__name__}: {exc}")


def _session_payload(session: Session) -> dict:
    with session.lock:
        meta = dict(session.meta)
        completed = len(session.outcomes)
    total = meta.get("corpus_size", 0) * len(meta.get("frameworks", []))
    items = session.item_payloads()
    pending = sum(1 for item in items if item["status"] == ITEM_PENDING)
    comparison = session.comparison()
    return {
        "session_id": meta["session_id"],
        "name": meta.get("name", ""),
        "status": meta.get("status"),
        "failure": meta.get("failure"),
        "frameworks": meta.get("frameworks", []),
        "corpus_name": meta.get("corpus_name", ""),
        "corpus_size": meta.get("corpus_size", 0),
        "created_at": meta.get("created_at"),
        "progress": {"completed": completed, "total": total},
        "items": {
            "total": len(items),
            "pending": pending,
            "adjudicated": len(items) - pending,
        },
        "tallies": session.tallies(),
        "cost": session.cost(),
        "comparison": _comparison_payload(comparison),
    }


def _comparison_payload(report: ComparisonReport | None) -> dict | None:
    if report is None:
        return None
    return {
        "n_reports": report.n_reports,
        "excluded_failed": list(report.excluded_failed),
        "excluded_pending": list(report.excluded_pending),
        "rows": [
            {
                "framework": row.framework.value,
                "stratum": row.stratum,
                "n": row.n,
                "flagged": row.flagged,
                "tp": row.tp,
                "fp": row.fp,
                "ppv": None if row.ppv_ci is None else row.ppv_ci.point,
                "ppv_lo": None if row.ppv_ci is None else row.ppv_ci.lo,
                "ppv_hi": None if row.ppv_ci is None else row.ppv_ci.hi,
                "atpr": row.atpr_ci.point,
                "atpr_lo": row.atpr_ci.lo,
                "atpr_hi": row.atpr_ci.hi,
            }
            for row in report.rows
        ],
        "pairwise": [
            {
                "pair": f"{p.fw_a.value} vs {p.fw_b.value}",
                "mcnemar_p": p.mcnemar_p,
                "mcnemar_p_holm": p.mcnemar_p_holm,
            }
            for p in report.pairwise
        ],
        "trend_p": None if report.trend is None else report.trend.p_value,
        "q_p": None if report.q_test is None else report.q_test.p_value,
    }


def create_app(
    data_dir: str | Path,
    ui_dir: str | Path | None = None,
    token: str | None = None,
) -> FastAPI:
    """Build the review service app rooted at ``data_dir``.

    ``ui_dir`` optionally serves a static review console at "/".  ``token``
    optionally requires "Authorization: Bearer <token>" on /sessions routes.
    """
    store = SessionStore(data_dir)

    def require_token(request: Request) -> None:
        if token is None:
            return
        supplied = request.headers.get("authorization", "")
        if supplied != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    app = FastAPI(title="radflag review service", dependencies=[Depends(require_token)])

    def bad_request(message: str) -> HTTPException:
        return HTTPException(status_code=400, detail=message)

    @app.get("/sessions")
    def list_sessions() -> dict:
        return {
            "sessions": [
                {
                    "session_id": s.session_id,
                    "name": s.meta.get("name", ""),
                    "status": s.meta.get("status"),
                    "created_at": s.meta.get("created_at"),
                }
                for s in store.all()
            ]
        }

    @app.post("/sessions", status_code=201)
    def start_session(body: StartSessionRequest) -> dict:
        if (body.corpus_path is None) == (body.corpus_csv is None):
            raise bad_request("provide exactly one of corpus_path or corpus_csv")
        frameworks = []
        for value in body.frameworks:
            try:
                frameworks.append(Framework(value))
            except ValueError:
                raise bad_request(f"unknown framework: {value!r}")
        if not frameworks:
            raise bad_request("frameworks must be nonempty")
        try:
            models = {
                role: ModelSpec(model_name=name, role=role)
                for role, name in body.models.items()
            }
        except ValueError as exc:
            raise bad_request(str(exc))
        needed = {ADVANCED} if frameworks == [Framework.F1] else {LIGHTWEIGHT, ADVANCED}
        missing = needed - set(models)
        if missing:
            raise bad_request(f"models mapping missing roles: {sorted(missing)}")
        if body.parallelism < 1:
            raise bad_request("parallelism must be >= 1")

        try:
            provider = _build_provider(body.provider)
        except (ValueError, GatewayError) as exc:
            raise bad_request(str(exc))

        session = store.create(
            {
                "name": body.name,
                "created_at": _now_iso(),
                "status": STATUS_RUNNING,
                "failure": None,
                "frameworks": [f.value for f in frameworks],
                "models": {role: spec.model_name for role, spec in models.items()},
                "provider": {
                    "kind": body.provider.kind,
                    "api_key_ref": body.provider.api_key_ref,
                },
                "review_fee": body.review_fee,
                "prices": body.prices,
                "parallelism": body.parallelism,
                "corpus_name": "",
                "corpus_size": 0,
                "report_order": [],
            }
        )
        corpus_file = session.directory / "corpus.csv"
        try:
            if body.corpus_csv is not None:
                corpus_file.write_text(body.corpus_csv, encoding="utf-8")
            else:
                source = Path(body.corpus_path)
                if not source.is_file():
                    raise CorpusError(f"corpus file not found: {source}")
                shutil.copyfile(source, corpus_file)
            corpus = load_corpus(corpus_file)
        except (CorpusError, OSError, ValueError) as exc:
            session.set_status(STATUS_FAILED, str(exc))
            raise bad_request(f"corpus rejected: {exc}")

        # the session keeps a copy named corpus.csv; report the source's name
        corpus_name = Path(body.corpus_path).stem if body.corpus_path else corpus.name
        with session.lock:
            session.meta["corpus_name"] = corpus_name
            session.meta["corpus_size"] = len(corpus)
            session.meta["report_order"] = [r.report_id for r in corpus]
            session._write_meta()
        session.report_text = {r.report_id: r.raw_text for r in corpus}

        if len(corpus) == 0:
            session.set_status(STATUS_COMPLETE)
        else:
            thread = threading.Thread(
                target=_run_session,
                args=(
                    session,
                    corpus,
                    frameworks,
                    provider,
                    models,
                    body.parallelism,
                    body.prompt_dir,
                ),
                daemon=True,
                name=f"radflag-run-{session.session_id}",
            )
            thread.start()
        return {"session_id": session.session_id}

    @app.get("/sessions/{session_id}")
    def session_status(session_id: str) -> dict:
        return _session_payload(store.get(session_id))

    @app.get("/sessions/{session_id}/items")
    def session_items(session_id: str, status: str | None = None) -> dict:
        if status is not None and status not in (ITEM_PENDING, ITEM_ADJUDICATED):
            raise bad_request(f"unknown status filter: {status!r}")
        session = store.get(session_id)
        with session.lock:
            items = session.item_payloads(status)
        return {"items": items}

    @app.post("/sessions/{session_id}/verdicts", status_code=201)
    def submit_verdict(session_id: str, body: VerdictRequest) -> dict:
        session = store.get(session_id)
        try:
            framework = Framework(body.framework)
        except ValueError:
            raise bad_request(f"unknown framework: {body.framework!r}")
        with session.lock:
            flagged = {
                (o.report_id, o.framework.value)
                for o in session.outcomes
                if o.flagged
            }
            key = (body.report_id, framework.value)
            if key not in flagged:
                raise HTTPException(
                    status_code=404, detail=f"no flagged item for {key}"
                )
            if session.stage_taken(body.report_id, framework.value, body.stage):
                raise HTTPException(
                    status_code=409,
                    detail=f"stage {body.stage} already recorded for {key}",
                )
            try:
                verdict = Verdict(
                    report_id=body.report_id,
                    framework=framework,
                    decision=body.decision,
                    reviewer_id=body.reviewer_id,
                    stage=body.stage,
                    timestamp=_now_iso(),
                )
            except ValueError as exc:
                raise bad_request(str(exc))
            session.append_verdict(verdict)
            tallies = session.tallies()
        return {"ok": True, "verdict": verdict.to_json_dict(), "tallies": tallies}

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str) -> PlainTextResponse:
        session = store.get(session_id)
        with session.lock:
            effective = session.superseding_verdicts()
            lines = []
            for outcome in session.outcomes:
                record = _outcome_to_json_dict(outcome)
                verdict = effective.get((outcome.report_id, outcome.framework.value))
                if outcome.flagged:
                    record["verdict"] = verdict.decision if verdict else None
                    record["verdict_stage"] = verdict.stage if verdict else None
                    record["reviewer_id"] = verdict.reviewer_id if verdict else None
                lines.append(json.dumps(record))
        return PlainTextResponse(
            "\n".join(lines) + ("\n" if lines else ""),
            media_type="application/x-ndjson",
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(
    data_dir: str | Path,
    host: str = "127.0.0.1",
    port: int = 8000,
    ui_dir: str | Path | None = None,
    token: str | None = None,
) -> None:
    """Run the review service under uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(data_dir, ui_dir=ui_dir, token=token), host=host, port=port)
