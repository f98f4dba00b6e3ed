"""FastAPI application wrapping the engine."""

from __future__ import annotations

import io
from typing import Literal

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from ..errors import InvalidArgumentError, RuleViolationError, TaceplanError
from ..explorer import ExplorationConfig
from .schemas import (
    ActionsView,
    ActionUnitView,
    ErrorBody,
    ExploreAccepted,
    ExploreRequest,
    FinalProtocolRequest,
    FinalProtocolView,
    JobView,
    ProtocolRow,
    RuleView,
    SessionCreate,
    SessionView,
    SimulateRequest,
    SimulateResponse,
    ViolationView,
)
from .store import JobAlreadyRunningError, Session, Store, UnknownIdError

DEFAULT_GOAL = (
    "What TACE treatment protocol is recommended for this patient "
    "given the pre-treatment CT?"
)


def _session_view(sess: Session) -> SessionView:
    return SessionView(
        id=sess.id,
        patient_id=sess.patient_id,
        model_ref=sess.model_ref,
        pre_state_id=sess.pre_state_id,
        dims=sess.dims,
        protocols=[ProtocolRow(**vars(p)) for p in sess.protocols],
        active_job_id=sess.active_job_id,
        final_protocol=FinalProtocolView(**sess.final_protocol) if sess.final_protocol else None,
    )


def create_app(store: Store) -> FastAPI:
    app = FastAPI(title="taceplan service", version="0.1.0")
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content=ErrorBody(error="schema-violation", detail=str(exc.errors())).model_dump(),
        )

    @app.exception_handler(UnknownIdError)
    async def unknown_handler(request: Request, exc: UnknownIdError):
        return JSONResponse(
            status_code=404, content=ErrorBody(error="not-found", detail=str(exc)).model_dump()
        )

    @app.exception_handler(RuleViolationError)
    async def rule_handler(request: Request, exc: RuleViolationError):
        body = ErrorBody(
            error="rule-violation",
            detail=str(exc),
            violations=[
                ViolationView(rule_id=v.rule_id, rule_type=v.rule_type, message=v.message)
                for v in exc.violations
            ],
        )
        return JSONResponse(status_code=409, content=body.model_dump())

    @app.exception_handler(JobAlreadyRunningError)
    async def job_running_handler(request: Request, exc: JobAlreadyRunningError):
        return JSONResponse(
            status_code=409,
            content=ErrorBody(error="job-already-running", detail=str(exc)).model_dump(),
        )

    @app.exception_handler(InvalidArgumentError)
    async def invalid_handler(request: Request, exc: InvalidArgumentError):
        return JSONResponse(
            status_code=400,
            content=ErrorBody(error="invalid-argument", detail=str(exc)).model_dump(),
        )

    @app.exception_handler(TaceplanError)
    async def engine_handler(request: Request, exc: TaceplanError):
        return JSONResponse(
            status_code=500,
            content=ErrorBody(error=getattr(exc, "code", "internal"), detail=str(exc)).model_dump(),
        )

    @app.get("/actions", response_model=ActionsView)
    def get_actions():
        vocab = store.config.vocabulary
        return ActionsView(
            drugs=[
                ActionUnitView(name=u.name, kind=u.kind, tags=sorted(u.tags))
                for u in vocab.drugs
            ],
            embolics=[
                ActionUnitView(name=u.name, kind=u.kind, tags=sorted(u.tags))
                for u in vocab.embolics
            ],
            rules=[
                RuleView(id=r.id, type=r.type, params=r.params, description=r.description)
                for r in vocab.rules
            ],
        )

    @app.get("/patients")
    def get_patients():
        return {"patients": store.patient_ids()}

    @app.post("/sessions", response_model=SessionView, status_code=201)
    def create_session(body: SessionCreate):
        cached = store.cached_response("create-session", body.request_id)
        if cached is not None:
            return SessionView(**cached)
        sess = store.create_session(body.patient_id)
        view = _session_view(sess)
        store.cache_response("create-session", body.request_id, view.model_dump())
        return view

    @app.get("/sessions/{session_id}", response_model=SessionView)
    def get_session(session_id: str):
        return _session_view(store.get_session(session_id))

    @app.post("/sessions/{session_id}/simulate", response_model=SimulateResponse)
    def simulate_combo(session_id: str, body: SimulateRequest):
        scope = f"simulate:{session_id}"
        cached = store.cached_response(scope, body.request_id)
        if cached is not None:
            return SimulateResponse(**cached)
        result = store.run_simulate(session_id, body.combo, body.replicas, body.seed)
        store.cache_response(scope, body.request_id, result)
        return SimulateResponse(**result)

    @app.post("/sessions/{session_id}/explore", response_model=ExploreAccepted, status_code=202)
    def explore_session(session_id: str, body: ExploreRequest):
        scope = f"explore:{session_id}"
        cached = store.cached_response(scope, body.request_id)
        if cached is not None:
            return ExploreAccepted(**cached)
        cfg = ExplorationConfig(
            beams=body.config.beams,
            drug_horizon=body.config.drug_horizon,
            embolic_horizon=body.config.embolic_horizon,
            replicas=body.config.replicas,
            seed=body.config.seed,
        )
        job = store.submit_explore(session_id, cfg, DEFAULT_GOAL)
        result = {"job_id": job.id}
        store.cache_response(scope, body.request_id, result)
        return ExploreAccepted(**result)

    @app.get("/jobs/{job_id}", response_model=JobView)
    def get_job(job_id: str):
        job = store.get_job(job_id)
        return JobView(
            id=job.id, session_id=job.session_id, status=job.status, plan=job.plan, error=job.error
        )

    @app.post("/sessions/{session_id}/final-protocol", response_model=SessionView)
    def set_final(session_id: str, body: FinalProtocolRequest):
        scope = f"final:{session_id}"
        cached = store.cached_response(scope, body.request_id)
        if cached is not None:
            return SessionView(**cached)
        sess = store.set_final_protocol(session_id, body.combo, body.provenance)
        view = _session_view(sess)
        store.cache_response(scope, body.request_id, view.model_dump())
        return view

    @app.get("/states/{state_id}/slice")
    def get_slice(
        state_id: str,
        axis: Literal["x", "y", "z"] = Query(default="z"),
        index: int = Query(default=0),
        layer: Literal["volume", "mask"] = Query(default="volume"),
    ):
        volume, mask = store.load_state(state_id)
        grid = volume if layer == "volume" else mask
        plane = grid.slice2d(axis, index)  # InvalidArgumentError -> 400
        if layer == "volume":
            img = ((np.clip(plane, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
        else:
            img = (plane.astype(np.uint16) * 127).clip(0, 255).astype(np.uint8)
        buf = io.BytesIO()
        # PIL images are (width, height); transpose so width = first
        # in-plane axis of the volume.
        Image.fromarray(img.T, mode="L").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    return app
