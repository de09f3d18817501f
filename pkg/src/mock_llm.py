# src/mock_llm.py
# -*- coding: utf-8 -*-
"""
Локальный сервер chat-completions для тестов и офлайн-прогонов удалённого
бэкенда. Ответы берёт у вложенного Backend (обычно ScriptedBackend).
Для проверки повторов можно задать очередь статусов, которые сервер
вернёт на первые запросы.
"""
from __future__ import annotations

import logging
from collections import deque
from typing import Deque, Iterable, List, Optional

from fastapi import FastAPI, Header, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from src.oracle import Backend, BackendRequest, BackendResponse, Completion, synthetic_tokens

log = logging.getLogger(__name__)


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str = "mock"
    messages: List[ChatMessage]
    n: int = Field(default=1, ge=1)
    temperature: float = Field(default=0.0, ge=0.0)
    logprobs: bool = False
    max_tokens: int = 256


class _EchoBackend:
    """Без вложенного бэкенда сервер всегда отвечает (alert)."""

    def complete(self, req: BackendRequest) -> BackendResponse:
        return BackendResponse(tuple(Completion("(alert)", synthetic_tokens("(alert)", -1.0))
                                     for _ in range(req.n_candidates)))


def create_app(backend: Optional[Backend] = None, token: str = "",
               fail_statuses: Iterable[int] = (), drop_logprobs: bool = False) -> FastAPI:
    app = FastAPI(title="mock chat-completions", docs_url=None, redoc_url=None)
    app.state.backend = backend or _EchoBackend()
    app.state.fail_statuses: Deque[int] = deque(fail_statuses)
    app.state.requests = 0

    @app.post("/chat/completions")
    def chat_completions(body: ChatRequest, authorization: Optional[str] = Header(default=None)):
        app.state.requests += 1
        if token and authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="BAD_KEY")
        if app.state.fail_statuses:
            status = app.state.fail_statuses.popleft()
            log.info("mock: scripted HTTP %d", status)
            return JSONResponse({"error": {"message": "scripted failure"}}, status_code=status)

        req = BackendRequest(
            messages=tuple((m.role, m.content) for m in body.messages),
            n_candidates=body.n,
            temperature=body.temperature,
            want_logprobs=body.logprobs,
            max_tokens=body.max_tokens,
        )
        resp = app.state.backend.complete(req)
        choices = []
        for i, c in enumerate(resp.candidates):
            choice = {"index": i, "message": {"role": "assistant", "content": c.text}, "finish_reason": "stop"}
            if body.logprobs and not drop_logprobs:
                tokens = c.tokens or synthetic_tokens(c.text, 0.0)
                choice["logprobs"] = {"content": [{"token": t, "logprob": lp} for t, lp in tokens]}
            else:
                choice["logprobs"] = None
            choices.append(choice)
        return {"id": f"mock-{app.state.requests}", "object": "chat.completion", "model": body.model,
                "choices": choices}

    return app


def serve(host: str = "127.0.0.1", port: int = 8089, scene: Optional[str] = None, epsilon: float = 0.0,
          seed: int = 0) -> None:
    """uvicorn с ScriptedBackend выбранной сцены (без сцены - эхо)."""
    import uvicorn

    backend = None
    if scene:
        from src.oracle import ScriptedBackend
        from src.pddl import load_domain
        from src.worldsim import load_scene, read_scene

        spec = read_scene(scene)
        backend = ScriptedBackend(spec, load_domain(), epsilon=epsilon, seed=seed, world=load_scene(spec))
    uvicorn.run(create_app(backend), host=host, port=port, log_config=None)
