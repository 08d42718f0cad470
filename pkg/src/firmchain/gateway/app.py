from __future__ import annotations

import logging
import socket
import threading
import time

import uvicorn
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from ..ledger.chain import Ledger
from .methods import METHODS, handle_body

log = logging.getLogger(__name__)


def create_app(ledger: Ledger) -> FastAPI:
    app = FastAPI(title="firmchain gateway", version="0.1.0")
    app.state.ledger = ledger

    @app.post("/rpc")
    async def rpc(request: Request) -> JSONResponse:
        body = await request.body()
        # ledger calls take its lock; keep them off the event loop
        return JSONResponse(await run_in_threadpool(handle_body, ledger, body))

    @app.get("/methods")
    async def methods() -> list[str]:
        return sorted(METHODS)

    return app


class GatewayServer:
    """Runs the gateway app under uvicorn in a background thread."""

    def __init__(self, ledger: Ledger, host: str = "127.0.0.1", port: int = 0, log_level: str = "warning"):
        self.ledger = ledger
        self.host = host
        if port == 0:
            port = _free_port(host)
        self.port = port
        config = uvicorn.Config(create_app(ledger), host=host, port=port, log_level=log_level, lifespan="off")
        self.server = uvicorn.Server(config)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}/rpc"

    def start(self, timeout: float = 10.0) -> "GatewayServer":
        self._thread = threading.Thread(target=self.server.run, name="firmchain-gateway", daemon=True)
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if time.monotonic() > deadline or not self._thread.is_alive():
                raise RuntimeError(f"gateway failed to start on {self.host}:{self.port}")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10)

    def __enter__(self) -> "GatewayServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(ledger: Ledger, host: str = "127.0.0.1", port: int = 0) -> GatewayServer:
    """Start the gateway for ``ledger`` and return the running server."""
    return GatewayServer(ledger, host, port).start()


def _free_port(host: str) -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind((host, 0))
        return s.getsockname()[1]
