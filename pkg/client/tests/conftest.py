from __future__ import annotations

import threading
import time

import pytest
import uvicorn

from zoomrl.rollout import RolloutConfig
from zoomrl.service import ServiceConfig, create_app


@pytest.fixture(scope="session")
def service_url(tmp_path_factory):
    """The real scoring service on a loopback port, for the whole session."""
    tmp = tmp_path_factory.mktemp("svc")
    cfg = ServiceConfig(
        parallelism=8,
        artifact_dir=str(tmp / "artifacts"),
        rollout=RolloutConfig(patch_dir=str(tmp / "patches")),
    )
    app = create_app(cfg)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("service failed to start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)
