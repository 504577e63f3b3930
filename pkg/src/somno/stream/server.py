"""Threaded TCP server: one :class:`Session` per connection."""

from __future__ import annotations

import logging
import os
import socketserver
import threading
from pathlib import Path

from ..calibrate import CalibrationProfile
from ..errors import BindFailure, ProtocolError, SomnoError
from ..metrics import hypnogram_export
from ..net.io import load_weights
from ..net.model import SleepNet
from .protocol import encode_frame, read_frame
from .session import Session

logger = logging.getLogger(__name__)

WEIGHTS_ENV = "SOMNO_WEIGHTS"


class _Handler(socketserver.StreamRequestHandler):
    server: "StageServer"

    def handle(self) -> None:
        srv = self.server
        with srv.lock:
            srv.session_count += 1
            sid = srv.session_count
        session = Session(srv.model, srv.calib_epochs, srv.profile)
        peer = "%s:%s" % self.client_address[:2]
        logger.info("session %d opened from %s", sid, peer)
        try:
            while not session.closed:
                frame = read_frame(self.rfile)
                if frame is None:
                    break
                for stage in session.handle(frame):
                    self.wfile.write(encode_frame(stage))
                    logger.info("session %d epoch %d stage %d conf %.3f latency %.1f ms", sid,
                                stage.epoch_index, stage.stage, stage.confidence,
                                1000 * session.records[-1].latency_s)
        except (ProtocolError, SomnoError) as exc:
            logger.warning("session %d closed on protocol error: %s", sid, exc)
        except (ConnectionError, OSError) as exc:
            logger.warning("session %d connection lost: %s", sid, exc)
        finally:
            self._flush(sid, session)
            srv.finished.append(session)

    def _flush(self, sid: int, session: Session) -> None:
        log_dir = self.server.log_dir
        if log_dir is None or not session.records:
            return
        log_dir.mkdir(parents=True, exist_ok=True)
        name = "".join(c if c.isalnum() or c in "-_" else "_" for c in session.device_name) or "device"
        path = log_dir / f"session-{sid:04d}-{name}.csv"
        recs = session.records
        hypnogram_export(None, [r.stage for r in recs], path, confidence=[r.confidence for r in recs],
                         epoch_index=[r.epoch_index for r in recs])
        logger.info("session %d: wrote %s (%d epochs, %d dropped)", sid, path, len(recs), len(session.dropped))


class StageServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, model: SleepNet, calib_epochs: int = 2,
                 profile: CalibrationProfile | None = None, log_dir=None):
        self.model = model
        self.calib_epochs = calib_epochs
        self.profile = profile
        self.log_dir = Path(log_dir) if log_dir is not None else None
        self.lock = threading.Lock()
        self.session_count = 0
        self.finished: list[Session] = []
        try:
            super().__init__(address, _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {address}: {exc}") from exc

    @property
    def port(self) -> int:
        return self.server_address[1]


def make_server(port: int = 0, weights=None, host: str = "127.0.0.1", calib_epochs: int = 2,
                profile: CalibrationProfile | None = None, log_dir=None) -> StageServer:
    """Build a server; ``weights`` is a path, a loaded model, or ``None`` for $SOMNO_WEIGHTS."""
    if weights is None:
        weights = os.environ.get(WEIGHTS_ENV)
        if not weights:
            raise ValueError(f"no weights given and ${WEIGHTS_ENV} is unset")
    model = weights if isinstance(weights, SleepNet) else load_weights(weights)
    return StageServer((host, port), model, calib_epochs, profile, log_dir)


def serve(port: int, weights=None, host: str = "127.0.0.1", calib_epochs: int = 2,
          profile: CalibrationProfile | None = None, log_dir="sessions") -> None:
    server = make_server(port, weights, host, calib_epochs, profile, log_dir)
    logger.info("listening on %s:%d", host, server.port)
    with server:
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
