"""HTTP API over the orchestrator, plus static hosting of the operator UI bundle."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .core import DeductionConfig
from .errors import (
    BusyError,
    FormatError,
    IllegalStateError,
    InvalidArgumentError,
    NotFoundError,
    ProviderError,
    RunError,
    StageLimitError,
    StorageError,
    ValidationError,
    WorldLineError,
)
from .evaluation import RawBackend, WldsBackend, load_eid, run_benchmark
from .orchestrator import Orchestrator

logger = logging.getLogger(__name__)

_STATUS_BY_CODE = {
    InvalidArgumentError: 400,
    ValidationError: 400,
    FormatError: 400,
    NotFoundError: 404,
    IllegalStateError: 409,
    BusyError: 409,
    StageLimitError: 409,
    ProviderError: 502,
    StorageError: 500,
    RunError: 502,
}


def _status_for(exc: WorldLineError) -> int:
    for klass, status in _STATUS_BY_CODE.items():
        if isinstance(exc, klass):
            return status
    return 500


def build_app(orchestrator: Orchestrator, ui_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="worldline", docs_url=None, redoc_url=None)

    @app.exception_handler(WorldLineError)
    async def handle_worldline_error(_request: Request, exc: WorldLineError):
        return JSONResponse(
            status_code=_status_for(exc), content={"code": exc.code, "message": str(exc)}
        )

    @app.post("/sessions")
    def create_session(payload: dict = Body(...)):
        initial = payload.get("initial", "")
        config = DeductionConfig.from_dict(payload.get("config") or {})
        session = orchestrator.create_session(initial, config=config,
                                              session_id=payload.get("session_id"))
        return session.to_dict()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return orchestrator.get_session(session_id).to_dict()

    @app.post("/sessions/{session_id}/expand")
    def expand(session_id: str):
        candidates = orchestrator.expand_frontier(session_id)
        return {"candidates": [c.to_dict() for c in candidates]}

    @app.get("/sessions/{session_id}/candidates")
    def candidates(session_id: str):
        session = orchestrator.get_session(session_id)
        endpoint = session.tree.endpoint()
        children = session.tree.children_of(endpoint.id)
        return {"candidates": [c.to_dict() for c in children]}

    @app.post("/sessions/{session_id}/select")
    def select(session_id: str, payload: dict = Body(...)):
        node_id = payload.get("node_id")
        if not node_id:
            raise InvalidArgumentError("body must carry node_id")
        return orchestrator.select_branch(session_id, node_id).to_dict()

    @app.post("/sessions/{session_id}/finalize")
    def finalize(session_id: str):
        return orchestrator.finalize_session(session_id).to_dict()

    @app.get("/sessions/{session_id}/visualization")
    def visualization(session_id: str):
        session = orchestrator.get_session(session_id)
        if session.visualization is None:
            raise NotFoundError(f"session {session_id} has no visualization yet")
        referenced = {k for _, k in session.visualization.pairs if k is not None}
        entries = {k.id: k for k in orchestrator.library.all_entries() if k.id in referenced}
        entries.update({k.id: k for k in session.keyframes})
        return {
            **session.visualization.to_dict(),
            "keyframes": [
                {"id": k.id, "caption": k.caption, "url": f"/sessions/{session_id}/media/{k.id}"}
                for k in sorted(entries.values(), key=lambda e: e.id)
            ],
        }

    @app.get("/sessions/{session_id}/graph")
    def graph(session_id: str):
        return orchestrator.knowledge_graph(session_id)

    @app.get("/sessions/{session_id}/estimates")
    def estimates(session_id: str):
        return {"estimates": orchestrator.estimate_world_lines(session_id)}

    @app.get("/sessions/{session_id}/media/{keyframe_id}")
    def media(session_id: str, keyframe_id: str):
        path = orchestrator.find_media(session_id, keyframe_id)
        if not path.exists():
            raise NotFoundError(f"media file for {keyframe_id} is missing")
        return FileResponse(path)

    @app.post("/transform")
    def transform(payload: dict = Body(...)):
        domain = payload.get("domain", "")
        if not domain:
            raise InvalidArgumentError("body must carry a domain tag")
        n = int(payload.get("n", 1))
        seed = int(payload.get("seed", 0))
        instances = orchestrator.transform(domain, n, seed=seed)
        return {"instances": [i.to_dict() for i in instances]}

    @app.post("/eval")
    def evaluate(payload: dict = Body(...)):
        dataset_path = payload.get("dataset_path", "")
        if not dataset_path or not Path(dataset_path).exists():
            raise NotFoundError(f"dataset {dataset_path!r} not found")
        backend_name = payload.get("backend", "wlds")
        config = DeductionConfig.from_dict(payload.get("config") or {})
        entries = load_eid(dataset_path)
        if backend_name == "raw":
            backend = RawBackend(orchestrator.provider, config, orchestrator.templates)
        elif backend_name == "wlds":
            backend = WldsBackend(orchestrator.provider, config, orchestrator.index,
                                  orchestrator.templates)
        else:
            raise InvalidArgumentError(f"unknown backend {backend_name!r}")
        report = run_benchmark(entries, backend, orchestrator.provider, config,
                               index=orchestrator.index)
        return report.to_dict()

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
