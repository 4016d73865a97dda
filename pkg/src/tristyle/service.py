"""HTTP JSON API over the curation store, versioned under /api/v1.

The browser gallery is a pure client of this contract; all authoritative
state lives in the :class:`~tristyle.curation.SessionStore`.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .curation import SessionStore
from .errors import InvalidInputError, QuotaError, StateError


class CreateSessionBody(BaseModel):
    reference_image: str
    reference_caption: str = ""
    quota: int = 50
    session_id: str | None = None


class IdsBody(BaseModel):
    ids: list[str]
    actor: str = "ui"


def make_app(store: SessionStore, frontend_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="tristyle curation service", version="1")

    @app.exception_handler(QuotaError)
    async def _quota(request: Request, exc: QuotaError):
        return JSONResponse(
            status_code=409,
            content={"error": str(exc), "current": exc.current, "quota": exc.quota},
        )

    @app.exception_handler(StateError)
    async def _state(request: Request, exc: StateError):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(InvalidInputError)
    async def _invalid(request: Request, exc: InvalidInputError):
        status = 404 if "unknown" in str(exc) else 400
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.get("/api/v1/sessions")
    def list_sessions():
        return [store.status(s.id) for s in store.sessions()]

    @app.post("/api/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        session = store.create_session(
            body.reference_image,
            body.reference_caption,
            quota=body.quota,
            session_id=body.session_id,
        )
        return store.status(session.id)

    @app.get("/api/v1/sessions/{session_id}/candidates")
    def candidates(session_id: str, stage: int | None = None, page: int = 0, page_size: int = 50):
        return store.list_candidates(session_id, stage=stage, page=page, page_size=page_size)

    @app.post("/api/v1/sessions/{session_id}/select")
    def select(session_id: str, body: IdsBody):
        count = store.select(session_id, body.ids, actor=body.actor)
        return {"selected_count": count, "quota": store.status(session_id)["quota"]}

    @app.post("/api/v1/sessions/{session_id}/deselect")
    def deselect(session_id: str, body: IdsBody):
        count = store.deselect(session_id, body.ids, actor=body.actor)
        return {"selected_count": count, "quota": store.status(session_id)["quota"]}

    @app.post("/api/v1/sessions/{session_id}/promote")
    def promote(session_id: str, body: IdsBody | None = None):
        dataset = store.promote(session_id, actor=body.actor if body else "ui")
        return {
            "stage": dataset.stage,
            "dataset_size": len(dataset.image_paths),
            "manifest": dataset.to_manifest(),
        }

    @app.get("/api/v1/sessions/{session_id}/status")
    def status(session_id: str):
        return store.status(session_id)

    @app.get("/api/v1/images/{image_id}")
    def image(image_id: str):
        path = store.image_path(image_id)
        if not path.exists():
            raise InvalidInputError(f"unknown image id '{image_id}'")
        return FileResponse(path, media_type="image/png")

    if frontend_dir and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app


def serve(store: SessionStore, host: str = "127.0.0.1", port: int = 8008,
          frontend_dir: str | None = None) -> None:
    import uvicorn

    uvicorn.run(make_app(store, frontend_dir), host=host, port=port, log_level="warning")
