"""Low-latency HTTP service for suggestions.

One immutable model is shared across request handlers; the hot path is
lock-free (encode, beam search, filter). Latency is measured server-side
and returned in the payload so clients need no clock sync.
"""

from __future__ import annotations

import json
import os
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, fields
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles

from .corpus import normalize_query, read_triplets_jsonl
from .evaluate import build_mfq
from .model import load_model, predict

MODEL_DIR_ENV = "PREFX_MODEL_DIR"


@dataclass
class ServeConfig:
    model_dir: str = ""
    host: str = "127.0.0.1"
    port: int = 8000
    default_k: int = 10
    default_beam: int = 10
    max_prefix_len: int = 200
    mfq_fallback: bool = True
    mfq_train_file: str | None = None
    demo_dir: str | None = None

    def __post_init__(self):
        if not self.model_dir:
            self.model_dir = os.environ.get(MODEL_DIR_ENV, "")
        if self.default_k < 1 or self.default_beam < 1:
            raise ValueError("default_k and default_beam must be >= 1")

    @classmethod
    def from_file(cls, path, **overrides) -> "ServeConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown serve config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


def create_app(config: ServeConfig) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        _load(app)
        yield

    app = FastAPI(title="prefx suggestion service", lifespan=lifespan)
    app.state.config = config
    app.state.ready = False
    app.state.model = None
    app.state.encoder = None
    app.state.mfq = None

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "ready": app.state.ready}

    @app.get("/suggest")
    def suggest(prev: str = "", prefix: str | None = None,
                k: int | None = None, beam: int | None = None):
        if not app.state.ready:
            raise HTTPException(status_code=503, detail="model is loading")
        if prefix is None:
            raise HTTPException(status_code=400, detail="missing required parameter: prefix")
        cfg: ServeConfig = app.state.config
        if len(prefix) > cfg.max_prefix_len:
            raise HTTPException(status_code=400,
                                detail=f"prefix longer than {cfg.max_prefix_len} characters")
        k = k if k is not None else cfg.default_k
        beam = beam if beam is not None else cfg.default_beam
        if k < 1 or beam < 1:
            raise HTTPException(status_code=400, detail="k and beam must be >= 1")

        prev_n = normalize_query(prev)
        prefix_n = normalize_query(prefix)
        start = time.perf_counter()
        x = app.state.encoder.encode(prev_n, prefix_n)
        suggestions = predict(app.state.model, x, prefix_n, beam, k)
        latency_ms = (time.perf_counter() - start) * 1000.0
        source = "model"
        payload = [{"query": s.query, "score": s.score} for s in suggestions]
        if not payload and cfg.mfq_fallback and app.state.mfq is not None:
            source = "mfq"
            top = app.state.mfq.lookup(prefix_n)[:k]
            best = top[0][1] if top else 1
            payload = [{"query": q, "score": c / best} for q, c in top]
        return {"suggestions": payload, "latency_ms": latency_ms, "source": source}

    demo_dir = config.demo_dir
    if demo_dir and Path(demo_dir).is_dir():
        app.mount("/demo", StaticFiles(directory=demo_dir, html=True), name="demo")

    return app


def _load(app: FastAPI) -> None:
    cfg: ServeConfig = app.state.config
    if not cfg.model_dir:
        raise ValueError(f"no model directory configured (flag, config file, or ${MODEL_DIR_ENV})")
    model, encoder = load_model(cfg.model_dir)
    if encoder is None:
        raise ValueError(f"{cfg.model_dir}: model directory has no input encoder")
    app.state.model = model
    app.state.encoder = encoder
    if cfg.mfq_train_file:
        triplets = read_triplets_jsonl(cfg.mfq_train_file)
        app.state.mfq = build_mfq(triplets, cfg.default_k)
    app.state.ready = True


def run_server(config: ServeConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
