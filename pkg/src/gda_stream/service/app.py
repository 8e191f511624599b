"""FastAPI service exposing the adaptation engine.

Two ways to use it: push batches through a session (the engine lives on the
server, one session per stream, safe for concurrent clients on separate
sessions), or point the server at an on-disk stream directory for a whole
run. Session adaptation is label-blind; labels attached to a batch request
are only joined to predictions afterwards, for the session summary.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException

from ..errors import ConfigError, DataError
from ..drift import parse_spec_text
from ..io import ClassPrototypes
from ..pipeline import PredictionRow, StreamEngine, summarize
from ..workflows import drift_check_dir, run_stream_dir, simulate_to_dir
from .schemas import (BatchRequest, BatchResponse, DriftCheckRequest,
                      DriftCheckResponse, RunRequest, RunResponse,
                      SessionCreateRequest, SessionCreated, SessionStateResponse,
                      SimulateRequest, SimulateResponse, SummaryModel)


@dataclass
class _Session:
    engine: StreamEngine
    records: list[PredictionRow] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def create_app() -> FastAPI:
    app = FastAPI(title="gda-stream", version="0.1.0",
                  description="Streaming Bayesian adaptation over embedding batches")
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()

    def get_session(session_id: str) -> _Session:
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    @app.exception_handler(ConfigError)
    async def config_error(request, exc):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(DataError)
    async def data_error(request, exc):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/sessions", response_model=SessionCreated)
    def create_session(request: SessionCreateRequest):
        matrix = np.asarray(request.prototypes.matrix, dtype=np.float32)
        names = request.prototypes.class_names
        if names is None:
            names = [f"class_{i}" for i in range(matrix.shape[0])]
        prototypes = ClassPrototypes(prototypes=matrix, class_names=names,
                                     temperature=request.prototypes.temperature)
        engine = StreamEngine(prototypes, request.config.to_config())
        session_id = uuid.uuid4().hex
        with registry_lock:
            sessions[session_id] = _Session(engine=engine)
        return SessionCreated(session_id=session_id,
                              n_classes=prototypes.n_classes, dim=prototypes.dim)

    @app.post("/v1/sessions/{session_id}/batches", response_model=BatchResponse)
    def push_batch(session_id: str, request: BatchRequest):
        session = get_session(session_id)
        features = np.asarray(request.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise DataError("features must be a non-empty N x D matrix")
        labels = request.labels
        if labels is not None and len(labels) != features.shape[0]:
            raise DataError("labels must match the batch size")
        with session.lock:
            result = session.engine.process_batch(features)
            for i, pred in enumerate(result.predictions):
                session.records.append(PredictionRow(
                    step=result.step, domain=request.domain_id, prediction=int(pred),
                    label=int(labels[i]) if labels is not None else None))
        return BatchResponse(step=result.step,
                             predictions=[int(p) for p in result.predictions],
                             covariance_mode=result.covariance_mode.value)

    @app.get("/v1/sessions/{session_id}", response_model=SessionStateResponse)
    def session_state(session_id: str):
        session = get_session(session_id)
        with session.lock:
            engine = session.engine
            return SessionStateResponse(
                session_id=session_id, steps=engine.step,
                covariance_mode=engine.mode.value if engine.mode else None,
                homogeneity=engine.report.as_text() if engine.report else None,
                warnings=list(engine.warnings))

    @app.get("/v1/sessions/{session_id}/summary", response_model=SummaryModel)
    def session_summary(session_id: str):
        session = get_session(session_id)
        with session.lock:
            summary = summarize(session.records, homogeneity=session.engine.report)
        return SummaryModel.from_summary(summary)

    @app.delete("/v1/sessions/{session_id}")
    def delete_session(session_id: str):
        with registry_lock:
            if sessions.pop(session_id, None) is None:
                raise HTTPException(status_code=404,
                                    detail=f"unknown session {session_id}")
        return {"deleted": session_id}

    @app.post("/v1/runs", response_model=RunResponse)
    def run(request: RunRequest):
        config = request.config.to_config(rounds=request.rounds)
        result = run_stream_dir(request.stream_dir, config, rounds=request.rounds,
                                out_dir=request.out_dir)
        return RunResponse(summary=SummaryModel.from_summary(result.summary),
                           warnings=list(result.warnings), out_dir=request.out_dir)

    @app.post("/v1/simulations", response_model=SimulateResponse)
    def simulate(request: SimulateRequest):
        spec = parse_spec_text(request.spec_text)
        stats = simulate_to_dir(spec, request.out_dir)
        return SimulateResponse(**stats)

    @app.post("/v1/drift-checks", response_model=DriftCheckResponse)
    def drift_check(request: DriftCheckRequest):
        report = drift_check_dir(request.stream_dir, request.budget)
        return DriftCheckResponse(passed=report.passed, max_kl=report.max_kl,
                                  budget=report.budget,
                                  transition_kls=list(report.transition_kls),
                                  boundary_steps=list(report.boundary_steps),
                                  offending_step=report.offending_step)

    return app


app = create_app()
