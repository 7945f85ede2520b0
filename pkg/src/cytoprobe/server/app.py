"""HTTP+JSON surface over the service core.

Error mapping: NotFoundError -> 404, ConflictError -> 409, validation -> 422;
every error body carries {"code", "message"}. Images are served as files
behind opaque alias URLs; the API never inlines pixels and never sends
ground truth or provenance to a participant or annotator.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse, Response
from pydantic import BaseModel

from ..errors import ConflictError, CytoprobeError, NotFoundError
from .config import ServerConfig
from .core import Service


class CreateStudyBody(BaseModel):
    seed: int = 0


class StartSessionBody(BaseModel):
    participant: str
    background: str | None = None


class SubmitResponseBody(BaseModel):
    trial_id: str
    answer: str
    token: str | None = None


class IssueTaskBody(BaseModel):
    annotator: str
    probe_fraction: float = 0.5
    real_count: int = 10
    seed: int | None = None


class SubmitAnnotationsBody(BaseModel):
    labels: dict[str, str]
    token: str | None = None


def _status_for(err: CytoprobeError) -> int:
    if isinstance(err, NotFoundError):
        return 404
    if isinstance(err, ConflictError):
        return 409
    return 422


def create_app(config: ServerConfig, service: Service | None = None) -> FastAPI:
    service = service or Service(config)
    app = FastAPI(title="cytoprobe", version="0.1.0")
    app.state.service = service

    @app.exception_handler(CytoprobeError)
    async def _handle(request: Request, err: CytoprobeError):
        return JSONResponse(
            status_code=_status_for(err),
            content={"code": err.code, "message": err.message},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "events": service.last_seq}

    # -- studies and sessions ------------------------------------------------

    @app.post("/studies")
    def create_study(body: CreateStudyBody):
        return service.create_study(body.seed)

    @app.post("/studies/{study_id}/sessions")
    def start_session(study_id: str, body: StartSessionBody):
        return service.start_session(study_id, body.participant, body.background)

    @app.get("/sessions/{session_id}/next")
    def next_trial(session_id: str):
        return service.next_trial(session_id)

    @app.post("/sessions/{session_id}/responses")
    def submit_response(session_id: str, body: SubmitResponseBody):
        return service.submit_response(session_id, body.trial_id, body.answer, body.token)

    @app.get("/studies/{study_id}/report")
    def report(study_id: str):
        return Response(content=service.report_bytes(study_id), media_type="application/json")

    @app.get("/studies/{study_id}/export")
    def export(study_id: str):
        return PlainTextResponse(service.export_csv(study_id), media_type="text/csv")

    @app.get("/studies/{study_id}/stimuli/{alias}")
    def stimulus(study_id: str, alias: str):
        path = service.stimulus_path(study_id, alias)
        return FileResponse(path, media_type="image/x-portable-pixmap")

    # -- annotation tasks ------------------------------------------------------

    @app.post("/tasks")
    def issue_task(body: IssueTaskBody):
        return service.issue_task(
            body.annotator, body.probe_fraction, body.real_count, body.seed
        )

    @app.get("/tasks/{task_id}")
    def task_manifest(task_id: str):
        return service.task_manifest(task_id)

    @app.get("/tasks/{task_id}/items/{item_id}/image")
    def task_item_image(task_id: str, item_id: str):
        path = service.task_item_path(task_id, item_id)
        return FileResponse(path, media_type="image/x-portable-pixmap")

    @app.post("/tasks/{task_id}/annotations")
    def submit_annotations(task_id: str, body: SubmitAnnotationsBody):
        return service.submit_annotations(task_id, body.labels, body.token)

    @app.get("/leaderboard")
    def get_leaderboard():
        return service.leaderboard()

    @app.get("/annotators/{annotator}/score")
    def annotator_score(annotator: str):
        return service.annotator_score(annotator)

    return app


def run(config: ServerConfig) -> None:  # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")
