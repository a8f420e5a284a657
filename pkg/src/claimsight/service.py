"""HTTP API backing the review dashboard.

Corpus, cohort, and model artifacts load once at startup; only the decision
log and the simulation clock mutate afterwards. Every response is a pure
function of (persisted state, clock). JSON field names are fixed in
docs/api.md.
"""

from __future__ import annotations

import json
from datetime import date, timedelta
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel, Field

from . import pipeline
from .features import FeatureSpec, FeatureVocabulary, PatientFeatureIndex, extract_many
from .glm import load_model
from .hybrid import HapiConfig, run_patient
from .records import age_years
from .risk import predict_with_evidence
from .store import DuplicateDecisionError, ReviewStore, UnknownCaseError
from .vocab import RiskLabel

API_PREFIX = "/api/v1"

RISK_NAMES = {RiskLabel.NONE: "none", RiskLabel.GHT: "GHT", RiskLabel.GDB: "GDB"}


class DecisionBody(BaseModel):
    call: bool
    predicted_complication: str = Field(pattern="^(none|GHT|GDB)$")
    note: str = ""


class AdvanceBody(BaseModel):
    weeks: int = Field(ge=0, le=1000)


class ServiceState:
    """Read-only artifacts plus the mutable store."""

    def __init__(self, workdir: Path, panel_path: Path | None = None):
        self.workdir = workdir
        self.corpus = pipeline.load_corpus(workdir)
        self.arts = pipeline.load_cohort(workdir)
        self.id_model = load_model(pipeline.models_dir(workdir) / "id.model")
        self.id_vocab = FeatureVocabulary.load(pipeline.features_dir(workdir, "id") / "vocab.txt")
        self.risk_model = load_model(pipeline.models_dir(workdir) / "risk.model")
        self.risk_vocab = FeatureVocabulary.load(
            pipeline.features_dir(workdir, "risk") / "vocab.txt"
        )
        self.groups = pipeline.load_group_models(workdir, self.risk_model)
        self.id_spec = FeatureSpec()
        self.risk_spec = FeatureSpec(windows_days=pipeline.COMPLICATION_WINDOWS)
        self.hapi = HapiConfig(threshold=self.id_model.threshold or 0.5, confirm_steps=2)
        self.rec_by_id = self.corpus.by_id

        if panel_path is not None:
            panel = json.loads(Path(panel_path).read_text())
            self.monitored = [pid for pid in panel if pid in self.rec_by_id]
        else:
            self.monitored = sorted(self.rec_by_id)

        # the simulation epoch is the corpus-wide earliest event
        firsts = [r.first_event_date for r in self.corpus.records if r.events]
        self.epoch = min(firsts)
        self.end_week = max(
            (r.last_event_date - self.epoch).days // 7 for r in self.corpus.records if r.events
        )
        self.store = ReviewStore(workdir / "review.sqlite")

    def clock_date(self, week: int) -> date:
        return self.epoch + timedelta(days=7 * week)

    def patient_grid(self, pid: str, up_to: date) -> list[date]:
        rec = self.rec_by_id[pid]
        if not rec.events:
            return []
        out = []
        d = rec.first_event_date
        while d <= min(rec.last_event_date, up_to):
            out.append(d)
            d += timedelta(days=7)
        return out

    def run_timeline(self, pid: str, week: int):
        """Causal hybrid run for one patient truncated at the clock."""
        rec = self.rec_by_id[pid]
        grid = self.patient_grid(pid, self.clock_date(week))
        if not grid:
            return None, None, []
        tl, inf = run_patient(
            rec,
            self.id_model,
            self.id_vocab,
            self.id_spec,
            self.corpus.roles.start_anchor_concepts,
            self.corpus.roles.outcome_anchor_concepts,
            self.hapi,
            grid,
        )
        return tl, inf, grid

    def risk_snapshot(self, pid: str, as_of: date, t_start: date) -> dict:
        rec = self.rec_by_id[pid]
        exs = extract_many(
            rec, [as_of], self.risk_spec, self.risk_vocab,
            self.corpus.roles.anchor_concepts, index=PatientFeatureIndex(rec),
        )
        prediction, evidence = predict_with_evidence(
            rec,
            exs[0],
            self.risk_model,
            self.groups,
            self.risk_vocab,
            self.corpus.roles,
            self.corpus.roles.db_history_codes,
            self.corpus.roles.ht_history_codes,
            t_start,
        )
        return {
            "prediction": {
                "p_none": prediction.probabilities[0],
                "p_ght": prediction.probabilities[1],
                "p_gdb": prediction.probabilities[2],
                "predicted": RISK_NAMES[prediction.predicted],
                "history_group": prediction.history_group.value,
            },
            "evidence": [
                {
                    "concept_id": item.concept_id,
                    "feature_name": item.feature_name,
                    "window": item.window,
                    "weight": item.weight,
                    "polarity": item.polarity.value,
                    "source": item.source.value,
                }
                for item in evidence
            ],
        }

    def demographics(self, pid: str, week: int) -> dict:
        rec = self.rec_by_id[pid]
        return {
            "patient_id": pid,
            "age": age_years(rec.birth_date, self.clock_date(week)),
            "sex": rec.sex.value,
            "race": rec.race.value,
        }

    def surface_due_cases(self, week: int) -> list[str]:
        """Evaluate monitored patients at the clock and surface new cases."""
        newly = []
        for pid in self.monitored:
            if self.store.case(pid) is not None:
                continue
            tl, inf, grid = self.run_timeline(pid, week)
            if tl is None or inf.start_week is None:
                continue
            start_date = grid[inf.start_week]
            snapshot = {
                "demographics": self.demographics(pid, week),
                "inferred_start_week": inf.start_week,
                "inferred_start_date": start_date.isoformat(),
                "start_source": inf.start_source.value,
                "timeline_tail": _timeline_rows(tl, grid)[-12:],
            }
            snapshot.update(self.risk_snapshot(pid, grid[-1], start_date))
            self.store.surface_case(pid, week, snapshot)
            newly.append(pid)
        return newly


def _timeline_rows(tl, grid) -> list[dict]:
    return [
        {
            "week": i,
            "as_of": grid[i].isoformat(),
            "f": tl.raw[i],
            "q_smooth": tl.smoothed[i],
            "y_hat": tl.calls[i],
            "anchor_hit": tl.anchor_hits[i].value,
        }
        for i in range(len(grid))
    ]


def build_app(workdir: Path, panel_path: Path | None = None) -> FastAPI:
    state = ServiceState(workdir, panel_path)
    app = FastAPI(title="claimsight review service", version="1")
    app.state.service = state

    # the dashboard is served from its own origin during review sessions
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get(API_PREFIX + "/clock")
    def get_clock():
        week = state.store.clock_week
        return {
            "week": week,
            "date": state.clock_date(week).isoformat(),
            "end_week": state.end_week,
        }

    @app.post(API_PREFIX + "/clock/advance")
    def advance_clock(body: AdvanceBody):
        week = state.store.advance_clock(body.weeks)
        newly = state.surface_due_cases(week)
        return {"week": week, "date": state.clock_date(week).isoformat(), "newly_surfaced": newly}

    @app.get(API_PREFIX + "/cases")
    def list_cases(
        status: str | None = Query(default=None, pattern="^(pending|reviewed)$"),
        page: int = Query(default=0, ge=0),
        page_size: int = Query(default=20, ge=1, le=200),
    ):
        rows, total = state.store.list_cases(status, page, page_size)
        cases = [
            {
                "patient_id": r["patient_id"],
                "status": r["status"],
                "surfaced_at": r["surfaced_at"],
                "demographics": r["snapshot"]["demographics"],
                "prediction": r["snapshot"]["prediction"],
                "start_source": r["snapshot"]["start_source"],
            }
            for r in rows
        ]
        return {"cases": cases, "page": page, "page_size": page_size, "total": total}

    @app.get(API_PREFIX + "/patients/{patient_id}/timeline")
    def get_timeline(patient_id: str):
        if patient_id not in state.rec_by_id:
            raise HTTPException(status_code=404, detail={"code": "unknown_patient"})
        week = state.store.clock_week
        tl, inf, grid = state.run_timeline(patient_id, week)
        rows = [] if tl is None else _timeline_rows(tl, grid)
        return {
            "patient_id": patient_id,
            "clock_week": week,
            "weeks": rows,
            "inferred_start_week": None if inf is None else inf.start_week,
            "inferred_end_week": None if inf is None else inf.end_week,
        }

    @app.get(API_PREFIX + "/patients/{patient_id}/evidence")
    def get_evidence(patient_id: str):
        case = state.store.case(patient_id)
        if case is None:
            raise HTTPException(status_code=404, detail={"code": "unknown_case"})
        snap = case["snapshot"]
        return {
            "patient_id": patient_id,
            "demographics": snap["demographics"],
            "prediction": snap["prediction"],
            "evidence": snap["evidence"],
            "surfaced_at": case["surfaced_at"],
            "status": case["status"],
        }

    @app.post(API_PREFIX + "/patients/{patient_id}/decision", status_code=201)
    def post_decision(patient_id: str, body: DecisionBody):
        try:
            state.store.record_decision(
                patient_id, body.call, body.predicted_complication, body.note,
                state.store.clock_week,
            )
        except UnknownCaseError:
            raise HTTPException(status_code=404, detail={"code": "unknown_case"})
        except DuplicateDecisionError:
            raise HTTPException(status_code=409, detail={"code": "duplicate_decision"})
        return {"patient_id": patient_id, "status": "reviewed"}

    @app.get(API_PREFIX + "/patients/{patient_id}/decision")
    def get_decision(patient_id: str):
        decision = state.store.decision(patient_id)
        if decision is None:
            raise HTTPException(status_code=404, detail={"code": "no_decision"})
        return decision

    return app
